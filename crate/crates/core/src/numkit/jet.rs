//! Truncated derivative sequences ("jets") for scalars and matrices.
//!
//! A jet of order k at time t stores the raw derivatives
//! (f(t), f'(t), ..., f^(k)(t)) — not Taylor coefficients, so no factorial
//! scaling. Products follow the Leibniz rule with binomial weights, and
//! reciprocals/inverses follow the recursion obtained by differentiating
//! f * (1/f) = 1.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Binomial coefficient C(n, k) as f64. Exact for the small orders used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Scalar jet: value and derivatives of a scalar function at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarJet {
    /// coeffs[k] = f^(k)(t); coeffs[0] is the value.
    pub coeffs: Vec<f64>,
}

impl ScalarJet {
    /// Jet of the constant function c (all derivatives zero).
    pub fn constant(c: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = c;
        ScalarJet { coeffs }
    }

    /// Jet of the identity function s |-> s evaluated at t.
    pub fn variable(t: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = t;
        if order >= 1 {
            coeffs[1] = 1.0;
        }
        ScalarJet { coeffs }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        ScalarJet { coeffs }
    }

    /// Highest derivative stored.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Leibniz product: (fg)^(j) = sum_l C(j,l) f^(l) g^(j-l).
    pub fn mul(&self, other: &ScalarJet) -> ScalarJet {
        let order = self.order().min(other.order());
        let mut coeffs = vec![0.0; order + 1];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in 0..=j {
                acc += binomial(j, l) * self.coeffs[l] * other.coeffs[j - l];
            }
            *c = acc;
        }
        ScalarJet { coeffs }
    }

    pub fn add(&self, other: &ScalarJet) -> ScalarJet {
        let order = self.order().min(other.order());
        let coeffs = (0..=order)
            .map(|j| self.coeffs[j] + other.coeffs[j])
            .collect();
        ScalarJet { coeffs }
    }

    pub fn sub(&self, other: &ScalarJet) -> ScalarJet {
        let order = self.order().min(other.order());
        let coeffs = (0..=order)
            .map(|j| self.coeffs[j] - other.coeffs[j])
            .collect();
        ScalarJet { coeffs }
    }

    pub fn scale(&self, s: f64) -> ScalarJet {
        ScalarJet {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Jet of 1/f. Differentiating f * (1/f) = 1 gives
    /// g_j = -(1/f_0) * sum_{l=1..j} C(j,l) f_l g_{j-l}, with g_0 = 1/f_0.
    pub fn recip(&self) -> Result<ScalarJet> {
        let f0 = self.coeffs[0];
        if f0.abs() < 1e-300 || !f0.is_finite() {
            return Err(Error::JetSingular { value: f0 });
        }
        let order = self.order();
        let mut g = vec![0.0; order + 1];
        g[0] = 1.0 / f0;
        for j in 1..=order {
            let mut acc = 0.0;
            for l in 1..=j {
                acc += binomial(j, l) * self.coeffs[l] * g[j - l];
            }
            g[j] = -acc / f0;
        }
        Ok(ScalarJet { coeffs: g })
    }

    /// Jet of f', one order shorter: (f')^(k) = f^(k+1).
    pub fn shift_derivative(&self) -> ScalarJet {
        ScalarJet {
            coeffs: self.coeffs[1..].to_vec(),
        }
    }

    /// Truncate to a lower order (no-op if already at or below it).
    pub fn truncated(&self, order: usize) -> ScalarJet {
        let end = (order + 1).min(self.coeffs.len());
        ScalarJet {
            coeffs: self.coeffs[..end].to_vec(),
        }
    }
}

/// Matrix jet: value and derivatives of a matrix-valued function at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MatJet {
    /// coeffs[k] = M^(k)(t); all entries share one shape.
    pub coeffs: Vec<DMatrix<f64>>,
}

impl MatJet {
    /// Jet of a constant matrix (all derivatives zero).
    pub fn constant(m: DMatrix<f64>, order: usize) -> Self {
        let zero = DMatrix::zeros(m.nrows(), m.ncols());
        let mut coeffs = vec![zero; order + 1];
        coeffs[0] = m;
        MatJet { coeffs }
    }

    pub fn from_coeffs(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument {
                context: "MatJet::from_coeffs".to_string(),
                reason: "empty coefficient list".to_string(),
            });
        }
        let shape = coeffs[0].shape();
        for c in &coeffs[1..] {
            if c.shape() != shape {
                return Err(Error::dimension(
                    "MatJet::from_coeffs",
                    format!("{}x{}", shape.0, shape.1),
                    format!("{}x{}", c.nrows(), c.ncols()),
                ));
            }
        }
        Ok(MatJet { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn value(&self) -> &DMatrix<f64> {
        &self.coeffs[0]
    }

    /// Leibniz product of matrix jets (order = min of the operands').
    pub fn mul(&self, other: &MatJet) -> Result<MatJet> {
        if self.shape().1 != other.shape().0 {
            return Err(Error::dimension(
                "MatJet::mul",
                format!("inner dims equal ({})", self.shape().1),
                format!("{} vs {}", self.shape().1, other.shape().0),
            ));
        }
        let order = self.order().min(other.order());
        let (rows, cols) = (self.shape().0, other.shape().1);
        let mut coeffs = Vec::with_capacity(order + 1);
        for j in 0..=order {
            let mut acc = DMatrix::zeros(rows, cols);
            for l in 0..=j {
                acc += &self.coeffs[l] * &other.coeffs[j - l] * binomial(j, l);
            }
            coeffs.push(acc);
        }
        Ok(MatJet { coeffs })
    }

    pub fn add(&self, other: &MatJet) -> Result<MatJet> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                "MatJet::add",
                format!("{}x{}", self.shape().0, self.shape().1),
                format!("{}x{}", other.shape().0, other.shape().1),
            ));
        }
        let order = self.order().min(other.order());
        let coeffs = (0..=order)
            .map(|j| &self.coeffs[j] + &other.coeffs[j])
            .collect();
        Ok(MatJet { coeffs })
    }

    pub fn sub(&self, other: &MatJet) -> Result<MatJet> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                "MatJet::sub",
                format!("{}x{}", self.shape().0, self.shape().1),
                format!("{}x{}", other.shape().0, other.shape().1),
            ));
        }
        let order = self.order().min(other.order());
        let coeffs = (0..=order)
            .map(|j| &self.coeffs[j] - &other.coeffs[j])
            .collect();
        Ok(MatJet { coeffs })
    }

    /// Multiply by a scalar jet (Leibniz with the scalar's derivatives).
    pub fn mul_scalar_jet(&self, s: &ScalarJet) -> MatJet {
        let order = self.order().min(s.order());
        let coeffs = (0..=order)
            .map(|j| {
                let mut acc = DMatrix::zeros(self.shape().0, self.shape().1);
                for l in 0..=j {
                    acc += &self.coeffs[l] * (s.coeffs[j - l] * binomial(j, l));
                }
                acc
            })
            .collect();
        MatJet { coeffs }
    }

    /// Left-multiply every coefficient by a constant matrix.
    pub fn premul_const(&self, m: &DMatrix<f64>) -> Result<MatJet> {
        if m.ncols() != self.shape().0 {
            return Err(Error::dimension(
                "MatJet::premul_const",
                format!("ncols = {}", self.shape().0),
                format!("ncols = {}", m.ncols()),
            ));
        }
        Ok(MatJet {
            coeffs: self.coeffs.iter().map(|c| m * c).collect(),
        })
    }

    /// Right-multiply every coefficient by a constant matrix.
    pub fn postmul_const(&self, m: &DMatrix<f64>) -> Result<MatJet> {
        if m.nrows() != self.shape().1 {
            return Err(Error::dimension(
                "MatJet::postmul_const",
                format!("nrows = {}", self.shape().1),
                format!("nrows = {}", m.nrows()),
            ));
        }
        Ok(MatJet {
            coeffs: self.coeffs.iter().map(|c| c * m).collect(),
        })
    }

    /// Transpose every coefficient: (M^T)^(k) = (M^(k))^T.
    pub fn transpose(&self) -> MatJet {
        MatJet {
            coeffs: self.coeffs.iter().map(|c| c.transpose()).collect(),
        }
    }

    /// Jet of d/dt M, one order shorter.
    pub fn shift_derivative(&self) -> MatJet {
        MatJet {
            coeffs: self.coeffs[1..].to_vec(),
        }
    }

    /// Truncate to a lower order (no-op if already at or below it).
    pub fn truncated(&self, order: usize) -> MatJet {
        let end = (order + 1).min(self.coeffs.len());
        MatJet {
            coeffs: self.coeffs[..end].to_vec(),
        }
    }

    /// Jet of M^{-1} for square M with invertible value.
    ///
    /// Differentiating M * X = I gives
    /// X_j = -X_0 * sum_{l=1..j} C(j,l) M_l X_{j-l}, with X_0 = M_0^{-1}.
    pub fn inverse(&self) -> Result<MatJet> {
        let (rows, cols) = self.shape();
        if rows != cols {
            return Err(Error::dimension(
                "MatJet::inverse",
                "square matrix".to_string(),
                format!("{rows}x{cols}"),
            ));
        }
        let x0 = self.coeffs[0].clone().try_inverse().ok_or(Error::JetSingular {
            value: self.coeffs[0].determinant(),
        })?;
        let order = self.order();
        let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(order + 1);
        xs.push(x0.clone());
        for j in 1..=order {
            let mut acc = DMatrix::zeros(rows, cols);
            for l in 1..=j {
                acc += &self.coeffs[l] * &xs[j - l] * binomial(j, l);
            }
            xs.push(-&x0 * acc);
        }
        Ok(MatJet { coeffs: xs })
    }

    /// Jet of the squared Frobenius/Euclidean norm M^T M summed over entries:
    /// for a column-vector jet this is the squared 2-norm and its derivatives.
    pub fn norm_sq_jet(&self) -> ScalarJet {
        let order = self.order();
        let mut coeffs = vec![0.0; order + 1];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in 0..=j {
                acc += binomial(j, l) * self.coeffs[l].dot(&self.coeffs[j - l]);
            }
            *c = acc;
        }
        ScalarJet { coeffs }
    }

    /// Horizontal concatenation [A | B] coefficient-wise.
    pub fn hstack(&self, other: &MatJet) -> Result<MatJet> {
        if self.shape().0 != other.shape().0 {
            return Err(Error::dimension(
                "MatJet::hstack",
                format!("nrows = {}", self.shape().0),
                format!("nrows = {}", other.shape().0),
            ));
        }
        let order = self.order().min(other.order());
        let rows = self.shape().0;
        let cols = self.shape().1 + other.shape().1;
        let coeffs = (0..=order)
            .map(|j| {
                let mut m = DMatrix::zeros(rows, cols);
                m.view_mut((0, 0), (rows, self.shape().1))
                    .copy_from(&self.coeffs[j]);
                m.view_mut((0, self.shape().1), (rows, other.shape().1))
                    .copy_from(&other.coeffs[j]);
                m
            })
            .collect();
        Ok(MatJet { coeffs })
    }

    /// Vertical concatenation [A; B] coefficient-wise.
    pub fn vstack(&self, other: &MatJet) -> Result<MatJet> {
        if self.shape().1 != other.shape().1 {
            return Err(Error::dimension(
                "MatJet::vstack",
                format!("ncols = {}", self.shape().1),
                format!("ncols = {}", other.shape().1),
            ));
        }
        let order = self.order().min(other.order());
        let rows = self.shape().0 + other.shape().0;
        let cols = self.shape().1;
        let coeffs = (0..=order)
            .map(|j| {
                let mut m = DMatrix::zeros(rows, cols);
                m.view_mut((0, 0), (self.shape().0, cols))
                    .copy_from(&self.coeffs[j]);
                m.view_mut((self.shape().0, 0), (other.shape().0, cols))
                    .copy_from(&other.coeffs[j]);
                m
            })
            .collect();
        Ok(MatJet { coeffs })
    }

    /// Extract a block as a jet: block (i0, j0) of size (rows, cols).
    pub fn block(&self, i0: usize, j0: usize, rows: usize, cols: usize) -> MatJet {
        MatJet {
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.view((i0, j0), (rows, cols)).into_owned())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(0, 0), 1.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(5, 5), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn scalar_mul_known_product() {
        // f = (2,3,4), g = (5,7,11): (fg) = (10, 29, 84).
        let f = ScalarJet::from_coeffs(vec![2.0, 3.0, 4.0]);
        let g = ScalarJet::from_coeffs(vec![5.0, 7.0, 11.0]);
        let p = f.mul(&g);
        assert_eq!(p.coeffs, vec![10.0, 29.0, 84.0]);
    }

    #[test]
    fn scalar_recip_known_values() {
        // f = (4,2,6): 1/f = (0.25, -0.125, -0.25).
        let f = ScalarJet::from_coeffs(vec![4.0, 2.0, 6.0]);
        let r = f.recip().unwrap();
        assert_relative_eq!(r.coeffs[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(r.coeffs[1], -0.125, epsilon = 1e-15);
        assert_relative_eq!(r.coeffs[2], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn scalar_recip_times_self_is_one() {
        let f = ScalarJet::from_coeffs(vec![3.0, -1.0, 0.5, 2.0]);
        let r = f.recip().unwrap();
        let p = f.mul(&r);
        assert_relative_eq!(p.coeffs[0], 1.0, epsilon = 1e-14);
        for c in &p.coeffs[1..] {
            assert_relative_eq!(*c, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn scalar_recip_rejects_zero() {
        let f = ScalarJet::from_coeffs(vec![0.0, 1.0]);
        assert!(matches!(f.recip(), Err(Error::JetSingular { .. })));
    }

    #[test]
    fn shift_derivative_drops_value() {
        let f = ScalarJet::from_coeffs(vec![1.0, 2.0, 3.0]);
        assert_eq!(f.shift_derivative().coeffs, vec![2.0, 3.0]);
    }

    #[test]
    fn variable_squared_matches_polynomial() {
        // (t^2) at t=3: value 9, d/dt 6, d2/dt2 2.
        let t = ScalarJet::variable(3.0, 2);
        let sq = t.mul(&t);
        assert_eq!(sq.coeffs, vec![9.0, 6.0, 2.0]);
    }

    #[test]
    fn mat_mul_matches_scalar_case() {
        let f = MatJet::from_coeffs(vec![dmatrix![2.0], dmatrix![3.0], dmatrix![4.0]]).unwrap();
        let g = MatJet::from_coeffs(vec![dmatrix![5.0], dmatrix![7.0], dmatrix![11.0]]).unwrap();
        let p = f.mul(&g).unwrap();
        assert_relative_eq!(p.coeffs[0][(0, 0)], 10.0);
        assert_relative_eq!(p.coeffs[1][(0, 0)], 29.0);
        assert_relative_eq!(p.coeffs[2][(0, 0)], 84.0);
    }

    #[test]
    fn mat_inverse_times_self_is_identity_jet() {
        let m = MatJet::from_coeffs(vec![
            dmatrix![2.0, 1.0; 0.0, 3.0],
            dmatrix![0.5, -1.0; 2.0, 0.0],
            dmatrix![1.0, 1.0; 1.0, -1.0],
        ])
        .unwrap();
        let inv = m.inverse().unwrap();
        let prod = m.mul(&inv).unwrap();
        assert_relative_eq!(
            (prod.coeffs[0].clone() - nalgebra::DMatrix::identity(2, 2)).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(prod.coeffs[1].norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!(prod.coeffs[2].norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn mat_inverse_rejects_singular_value() {
        let m = MatJet::constant(dmatrix![1.0, 1.0; 1.0, 1.0], 1);
        assert!(matches!(m.inverse(), Err(Error::JetSingular { .. })));
    }

    #[test]
    fn norm_sq_jet_of_vector() {
        // v(t) = (t, 1-t) at t=2: v=(2,-1), v'=(1,-1).
        // |v|^2 = 5, d/dt = 2 v.v' = 2*(2-(-1)*... ) = 2*(2*1 + (-1)(-1)) = 6,
        // d2/dt2 = 2|v'|^2 = 4.
        let v = MatJet::from_coeffs(vec![
            nalgebra::DMatrix::from_column_slice(2, 1, &[2.0, -1.0]),
            nalgebra::DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            nalgebra::DMatrix::zeros(2, 1),
        ])
        .unwrap();
        let n = v.norm_sq_jet();
        assert_relative_eq!(n.coeffs[0], 5.0, epsilon = 1e-15);
        assert_relative_eq!(n.coeffs[1], 6.0, epsilon = 1e-15);
        assert_relative_eq!(n.coeffs[2], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn hstack_vstack_shapes() {
        let a = MatJet::constant(dmatrix![1.0, 2.0], 1);
        let b = MatJet::constant(dmatrix![3.0], 1);
        let h = a.hstack(&b).unwrap();
        assert_eq!(h.shape(), (1, 3));
        let c = MatJet::constant(dmatrix![4.0, 5.0], 1);
        let v = a.vstack(&c).unwrap();
        assert_eq!(v.shape(), (2, 2));
        assert!(a.vstack(&b).is_err());
    }

    #[test]
    fn mixed_shape_coeffs_rejected() {
        let bad = MatJet::from_coeffs(vec![dmatrix![1.0], dmatrix![1.0, 2.0]]);
        assert!(bad.is_err());
    }
}
