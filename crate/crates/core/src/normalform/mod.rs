//! Time-varying normal-form construction for linear systems with faulting,
//! redundant actuators.
//!
//! For a plant x' = A x + B L(t) u + f with output y = C x of relative
//! degree r, the coordinate change U(t) = [O; N(t)] built from
//!
//!   O = [C; CA; ...; CA^{r-1}]                       (stacked output maps)
//!   M(t) = [M_0, M_1, ..., M_{r-1}],  M_0 = B L(t),  M_{k+1} = M_k' - A M_k
//!   N(t) = V^T (I - M (O M)^+ O),  im V = ker O
//!
//! transforms the system into a chain of output derivatives driven by
//! Gamma(t) = C A^{r-1} B L(t) plus internal dynamics. O M is block
//! anti-triangular with alternating-sign Gamma blocks on the anti-diagonal,
//! which makes (O M)^+ well defined exactly when Gamma has full row rank.
//!
//! All time-dependence flows through derivative jets so that U'(t) — needed
//! for the transformed system matrix (U A + U') U^{-1} — is exact, not a
//! finite difference.

pub mod checks;
pub mod weight;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::jet::MatJet;
use crate::numkit::linalg::{nullspace_basis, pinv, rank_of, DEFAULT_RANK_TOL};
use crate::plant::Plant;

pub use checks::{check_assumptions, AssumptionReport, CheckRecord, CheckThresholds};
pub use weight::{build_k, weight_at, WeightMethod, WeightSynthesis};

/// Stacked output-derivative map [C; CA; ...; CA^{r-1}] (rp x n).
pub fn build_cal_c(a: &DMatrix<f64>, c: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    if r == 0 {
        return Err(Error::InvalidArgument {
            context: "build_cal_c".to_string(),
            reason: "relative degree must be at least 1".to_string(),
        });
    }
    let (p, n) = c.shape();
    let mut out = DMatrix::zeros(r * p, n);
    let mut row = c.clone();
    for k in 0..r {
        out.view_mut((k * p, 0), (p, n)).copy_from(&row);
        if k + 1 < r {
            row = &row * a;
        }
    }
    Ok(out)
}

/// Chain of input-matrix images under (d/dt - A):
/// columns [M_0, ..., M_{r-1}] with M_0 = B L(t), M_{k+1} = M_k' - A M_k,
/// as a jet of the n x (r m) matrix.
///
/// Requires the input jet to carry at least r - 1 + order derivatives,
/// because each chain level consumes one.
pub fn build_cal_b_jet(plant: &Plant, t: f64, r: usize, order: usize) -> Result<MatJet> {
    if r == 0 {
        return Err(Error::InvalidArgument {
            context: "build_cal_b_jet".to_string(),
            reason: "relative degree must be at least 1".to_string(),
        });
    }
    let needed = r - 1 + order;
    let bl = plant.input_jet(t, needed)?;
    let mut chain = bl.clone();
    let mut stacked = bl;
    for _ in 1..r {
        if chain.order() == 0 {
            return Err(Error::InsufficientJetOrder {
                context: "build_cal_b_jet".to_string(),
                needed,
                available: chain.order(),
            });
        }
        chain = chain
            .shift_derivative()
            .sub(&chain.premul_const(&plant.a)?)?;
        stacked = stacked.truncated(chain.order()).hstack(&chain)?;
    }
    Ok(stacked.truncated(order))
}

/// Smallest r with C A^{r-1} B not identically zero, verified against the
/// reliability scaling at the probe time; errors if no such r <= n exists
/// or if the candidate Gamma(t) = C A^{r-1} B L(t) loses row rank at t.
pub fn detect_relative_degree(plant: &Plant, t: f64, tol: f64) -> Result<usize> {
    let mut ca = plant.c.clone();
    let l = plant.reliability_matrix(t)?;
    for r in 1..=plant.n {
        let markov = &ca * &plant.b;
        if markov.iter().any(|v| v.abs() > 1e-12) {
            let gamma = &markov * &l;
            if rank_of(&gamma, tol)? == plant.p {
                return Ok(r);
            }
            return Err(Error::NoRelativeDegree {
                reason: format!(
                    "first nonzero output-input coupling at chain length {r} loses row rank \
                     under the reliability scaling at t = {t}"
                ),
            });
        }
        ca = &ca * &plant.a;
    }
    Err(Error::NoRelativeDegree {
        reason: format!(
            "all output-input couplings C A^k B vanish for k < {}",
            plant.n
        ),
    })
}

/// The normal-form data at one time point.
#[derive(Debug, Clone)]
pub struct NormalForm {
    /// Relative degree of the output.
    pub r: usize,
    /// State dimension, input count, output count.
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Coordinate change U(t) (n x n) and its derivative U'(t).
    pub u: DMatrix<f64>,
    pub u_dot: DMatrix<f64>,
    /// Inverse coordinate change U(t)^{-1}.
    pub u_inv: DMatrix<f64>,
    /// Transformed system matrix (U A + U') U^{-1}.
    pub a_hat: DMatrix<f64>,
    /// Transformed input matrix U B L(t).
    pub b_hat: DMatrix<f64>,
    /// Transformed output matrix C U^{-1} = [I_p 0].
    pub c_hat: DMatrix<f64>,
    /// Output-chain coefficient blocks: y^(r) = sum_i R_i y^(i-1) + S eta + Gamma u.
    pub r_blocks: Vec<DMatrix<f64>>,
    pub s_block: DMatrix<f64>,
    /// Internal-dynamics coupling blocks: eta' = sum_i P_i y^(i-1) + Q eta + N_in u.
    pub p_blocks: Vec<DMatrix<f64>>,
    pub q_block: DMatrix<f64>,
    /// High-gain matrix Gamma(t) = C A^{r-1} B L(t).
    pub gamma: DMatrix<f64>,
    /// Input coupling into the internal dynamics (zero when the redundancy is trivial).
    pub n_input: DMatrix<f64>,
    /// Stacked output map O (rp x n), shared across times.
    pub cal_c: DMatrix<f64>,
    /// Kernel basis V of O (n x (n - rp)).
    pub kernel_basis: DMatrix<f64>,
}

/// Relative tolerance for the companion-structure residual check on the
/// transformed system matrix.
const STRUCTURE_TOL: f64 = 1e-8;

/// Jet of the full coordinate change U(t) = [O; N(t)] and its inverse
/// U^{-1}(t) = [M (O M)^+, V].
///
/// The pseudoinverse of the full-row-rank O M is computed as
/// (O M)^T (O M (O M)^T)^{-1}, entirely in jet arithmetic, so the returned
/// jets carry exact derivatives up to `order`.
pub fn build_u_jet(plant: &Plant, t: f64, r: usize, order: usize) -> Result<(MatJet, MatJet)> {
    let n = plant.n;
    let p = plant.p;
    let rho = r * p;
    if rho > n {
        return Err(Error::InvalidArgument {
            context: "build_u_jet".to_string(),
            reason: format!("output chain dimension {rho} exceeds state dimension {n}"),
        });
    }
    let cal_c = build_cal_c(&plant.a, &plant.c, r)?;
    if rank_of(&cal_c, DEFAULT_RANK_TOL)? != rho {
        return Err(Error::RankDeficient {
            context: "stacked output map".to_string(),
            time: t,
        });
    }
    let cal_b = build_cal_b_jet(plant, t, r, order)?;
    let cb = cal_b.premul_const(&cal_c)?; // O M, rp x rm, full row rank required

    if rank_of(cb.value(), DEFAULT_RANK_TOL)? != rho {
        return Err(Error::RankDeficient {
            context: format!("relative degree violated at t = {t}"),
            time: t,
        });
    }

    // (O M)^+ = (O M)^T [ (O M)(O M)^T ]^{-1} — valid for full row rank,
    // and differentiable because the Gram matrix stays invertible.
    let cb_t = cb.transpose();
    let gram = cb.mul(&cb_t)?;
    let gram_inv = gram.inverse()?;
    let cb_pinv = cb_t.mul(&gram_inv)?;

    let kernel = nullspace_basis(&cal_c, DEFAULT_RANK_TOL)?; // n x (n - rho), orthonormal
    let v_t = kernel.transpose();

    // N(t) = V^T (I - M (O M)^+ O): annihilates im M while restricting to
    // the complement of the output chain.
    let proj = cal_b.mul(&cb_pinv)?.postmul_const(&cal_c)?; // M (O M)^+ O
    let eye = MatJet::constant(DMatrix::identity(n, n), order);
    let n_rows = eye.sub(&proj)?.premul_const(&v_t)?;

    let u_top = MatJet::constant(cal_c.clone(), order);
    let u = u_top.vstack(&n_rows)?;

    // U^{-1} = [M (O M)^+ , V]: the first block inverts the output chain,
    // the second reinstates the kernel directions.
    let left = cal_b.mul(&cb_pinv)?;
    let right = MatJet::constant(kernel, order);
    let u_inv = left.hstack(&right)?;

    Ok((u, u_inv))
}

/// Build the complete normal form at time t: coordinate change, transformed
/// matrices, and the named coefficient blocks of the two subsystems.
pub fn build_normal_form(plant: &Plant, t: f64, r: usize) -> Result<NormalForm> {
    let n = plant.n;
    let m = plant.m;
    let p = plant.p;

    let (u_jet, u_inv_jet) = build_u_jet(plant, t, r, 1)?;
    let u = u_jet.coeffs[0].clone();
    let u_dot = u_jet.coeffs[1].clone();
    let u_inv = u_inv_jet.coeffs[0].clone();

    let a_hat = (&u * &plant.a + &u_dot) * &u_inv;
    let bl = plant.input_jet(t, 0)?.coeffs[0].clone();
    let b_hat = &u * &bl;
    let c_hat = &plant.c * &u_inv;

    extract_blocks(plant, t, r, &a_hat, &b_hat, &c_hat).map(
        |(r_blocks, s_block, p_blocks, q_block, gamma, n_input, cal_c, kernel_basis)| NormalForm {
            r,
            n,
            m,
            p,
            u,
            u_dot,
            u_inv,
            a_hat,
            b_hat,
            c_hat,
            r_blocks,
            s_block,
            p_blocks,
            q_block,
            gamma,
            n_input,
            cal_c,
            kernel_basis,
        },
    )
}

type Blocks = (
    Vec<DMatrix<f64>>,
    DMatrix<f64>,
    Vec<DMatrix<f64>>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
);

/// Verify the companion structure of the transformed matrices and slice out
/// the named blocks.
///
/// In the new coordinates the first rp rows must satisfy, up to numerical
/// residue: rows k*p..(k+1)*p of a_hat equal the selector for y^(k+1)
/// (identity in block column k+1) for k < r-1, and the same rows of b_hat
/// vanish; the output map must be [I_p 0].
fn extract_blocks(
    plant: &Plant,
    t: f64,
    r: usize,
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    c_hat: &DMatrix<f64>,
) -> Result<Blocks> {
    let n = plant.n;
    let m = plant.m;
    let p = plant.p;
    let rho = r * p;
    let scale = a_hat.norm().max(1.0);

    let structure_err = |block: &str, residual: f64| Error::StructureViolation {
        block: block.to_string(),
        residual,
        tolerance: STRUCTURE_TOL * scale,
    };

    // Output map must be [I_p 0].
    let mut c_expected = DMatrix::zeros(p, n);
    c_expected.view_mut((0, 0), (p, p)).copy_from(&DMatrix::identity(p, p));
    let c_res = (c_hat - &c_expected).norm();
    if c_res > STRUCTURE_TOL {
        return Err(structure_err("normal-form structure check failed: output map", c_res));
    }

    // Chain rows: block row k (k = 0..r-2) of a_hat is the shift selector,
    // and the matching rows of b_hat vanish.
    for k in 0..r.saturating_sub(1) {
        let mut expected = DMatrix::zeros(p, n);
        expected
            .view_mut((0, (k + 1) * p), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        let res = (a_hat.view((k * p, 0), (p, n)) - expected).norm();
        if res > STRUCTURE_TOL * scale {
            return Err(structure_err(
                &format!("normal-form structure check failed: chain row block {k}"),
                res,
            ));
        }
        let bres = b_hat.view((k * p, 0), (p, m)).norm();
        if bres > STRUCTURE_TOL * scale {
            return Err(structure_err(
                &format!("normal-form structure check failed: chain input block {k}"),
                bres,
            ));
        }
    }

    // Driving row block (rows (r-1)p .. rp): R_1..R_r and S.
    let mut r_blocks = Vec::with_capacity(r);
    for i in 0..r {
        r_blocks.push(a_hat.view(((r - 1) * p, i * p), (p, p)).into_owned());
    }
    let s_block = a_hat.view(((r - 1) * p, rho), (p, n - rho)).into_owned();

    // Internal rows (rho..n): P_1..P_r, Q, and the input coupling N_in.
    let mut p_blocks = Vec::with_capacity(r);
    for i in 0..r {
        p_blocks.push(a_hat.view((rho, i * p), (n - rho, p)).into_owned());
    }
    let q_block = a_hat.view((rho, rho), (n - rho, n - rho)).into_owned();

    let gamma = b_hat.view(((r - 1) * p, 0), (p, m)).into_owned();
    let n_input = b_hat.view((rho, 0), (n - rho, m)).into_owned();

    // Cross-check Gamma against its closed form C A^{r-1} B L(t).
    let mut ca = plant.c.clone();
    for _ in 1..r {
        ca = &ca * &plant.a;
    }
    let l = plant.reliability_matrix(t)?;
    let gamma_direct = &ca * &plant.b * &l;
    let gres = (&gamma - &gamma_direct).norm();
    if gres > STRUCTURE_TOL * scale.max(gamma_direct.norm()) {
        return Err(structure_err(
            "normal-form structure check failed: high-gain block",
            gres,
        ));
    }

    let cal_c = build_cal_c(&plant.a, &plant.c, r)?;
    let kernel_basis = nullspace_basis(&cal_c, DEFAULT_RANK_TOL)?;

    Ok((
        r_blocks,
        s_block,
        p_blocks,
        q_block,
        gamma,
        n_input,
        cal_c,
        kernel_basis,
    ))
}

/// Serializable snapshot of the normal form (plain nested arrays).
#[derive(Debug, Clone, Serialize)]
pub struct NormalFormSnapshot {
    pub r: usize,
    pub u: Vec<Vec<f64>>,
    pub u_inv: Vec<Vec<f64>>,
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<Vec<f64>>,
    pub c_hat: Vec<Vec<f64>>,
    pub r_blocks: Vec<Vec<Vec<f64>>>,
    pub s_block: Vec<Vec<f64>>,
    pub p_blocks: Vec<Vec<Vec<f64>>>,
    pub q_block: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub n_input: Vec<Vec<f64>>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl NormalForm {
    pub fn snapshot(&self) -> NormalFormSnapshot {
        NormalFormSnapshot {
            r: self.r,
            u: matrix_rows(&self.u),
            u_inv: matrix_rows(&self.u_inv),
            a_hat: matrix_rows(&self.a_hat),
            b_hat: matrix_rows(&self.b_hat),
            c_hat: matrix_rows(&self.c_hat),
            r_blocks: self.r_blocks.iter().map(matrix_rows).collect(),
            s_block: matrix_rows(&self.s_block),
            p_blocks: self.p_blocks.iter().map(matrix_rows).collect(),
            q_block: matrix_rows(&self.q_block),
            gamma: matrix_rows(&self.gamma),
            n_input: matrix_rows(&self.n_input),
        }
    }
}

/// Projector identity used throughout: (I - M (O M)^+ O) M = 0 whenever
/// O M has full row rank. Exposed for diagnostics and tests.
pub fn annihilation_residual(plant: &Plant, t: f64, r: usize) -> Result<f64> {
    let cal_c = build_cal_c(&plant.a, &plant.c, r)?;
    let cal_b = build_cal_b_jet(plant, t, r, 0)?.coeffs[0].clone();
    let cb = &cal_c * &cal_b;
    let cb_pinv = pinv(&cb, DEFAULT_RANK_TOL)?;
    let n = plant.n;
    let proj = DMatrix::identity(n, n) - &cal_b * cb_pinv * &cal_c;
    Ok((proj * cal_b).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{FaultTerm, NonlinearityMode, Plant, ReliabilityProfile};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector, DVector};

    /// Two-state single-output double integrator with two redundant actuators.
    fn double_integrator() -> Plant {
        Plant::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            dmatrix![0.0, 0.0; 1.0, 1.0],
            dmatrix![1.0, 0.0],
            vec![ReliabilityProfile::healthy(), ReliabilityProfile::healthy()],
            NonlinearityMode::Zero,
            dvector![0.0, 0.0],
        )
        .unwrap()
    }

    /// Time-varying scalar example: n = m = p = 1, A = 1, B = 1, C = 1,
    /// l(t) = 1/(t^2 + 1).
    fn scalar_decay() -> Plant {
        Plant::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            vec![ReliabilityProfile {
                terms: vec![FaultTerm::InverseQuadratic {
                    center: 0.0,
                    width: 1.0,
                }],
            }],
            NonlinearityMode::Zero,
            dvector![0.0],
        )
        .unwrap()
    }

    #[test]
    fn cal_c_stacks_output_powers() {
        let plant = double_integrator();
        let oc = build_cal_c(&plant.a, &plant.c, 2).unwrap();
        assert_eq!(oc, dmatrix![1.0, 0.0; 0.0, 1.0]);
    }

    #[test]
    fn cal_b_chain_for_constant_input_matrix() {
        // With L = I constant: M_0 = B, M_1 = -A B.
        let plant = double_integrator();
        let cb = build_cal_b_jet(&plant, 0.0, 2, 0).unwrap();
        assert_eq!(cb.shape(), (2, 4));
        let m0 = cb.coeffs[0].view((0, 0), (2, 2)).into_owned();
        let m1 = cb.coeffs[0].view((0, 2), (2, 2)).into_owned();
        assert_relative_eq!((m0 - &plant.b).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!((m1 - (-&plant.a * &plant.b)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn relative_degree_of_double_integrator_is_two() {
        let plant = double_integrator();
        assert_eq!(detect_relative_degree(&plant, 0.0, DEFAULT_RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn relative_degree_of_scalar_system_is_one() {
        let plant = scalar_decay();
        assert_eq!(detect_relative_degree(&plant, 0.0, DEFAULT_RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn u_inverse_pair_multiplies_to_identity() {
        let plant = double_integrator();
        let (u, u_inv) = build_u_jet(&plant, 0.5, 2, 1).unwrap();
        let prod = &u.coeffs[0] * &u_inv.coeffs[0];
        assert_relative_eq!(
            (prod - DMatrix::identity(2, 2)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scalar_normal_form_matches_hand_computation() {
        // n = p = r = 1: U = C = 1, a_hat = A = 1, b_hat = l(t), Gamma = l(t).
        let plant = scalar_decay();
        let t = 1.0;
        let nf = build_normal_form(&plant, t, 1).unwrap();
        assert_relative_eq!(nf.u[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(nf.a_hat[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(nf.gamma[(0, 0)], 0.5, epsilon = 1e-14);
        assert!(nf.s_block.ncols() == 0 || nf.s_block.norm() == 0.0);
    }

    #[test]
    fn double_integrator_normal_form_blocks() {
        // rho = n here, so there are no internal dynamics; the chain is
        // y'' = Gamma u with Gamma = C A B = [1 1].
        let plant = double_integrator();
        let nf = build_normal_form(&plant, 0.0, 2).unwrap();
        assert_eq!(nf.r_blocks.len(), 2);
        assert_relative_eq!(nf.r_blocks[0][(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(nf.r_blocks[1][(0, 0)], 0.0, epsilon = 1e-12);
        assert_eq!(nf.q_block.shape(), (0, 0));
        assert_relative_eq!(nf.gamma[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(nf.gamma[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn u_dot_matches_finite_difference() {
        let plant = scalar_decay();
        let t = 0.7;
        let h = 1e-5;
        let (u_jet, _) = build_u_jet(&plant, t, 1, 1).unwrap();
        let (up, _) = build_u_jet(&plant, t + h, 1, 0).unwrap();
        let (um, _) = build_u_jet(&plant, t - h, 1, 0).unwrap();
        let fd = (&up.coeffs[0] - &um.coeffs[0]) / (2.0 * h);
        assert_relative_eq!((fd - &u_jet.coeffs[1]).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn annihilation_identity_holds() {
        let plant = double_integrator();
        assert!(annihilation_residual(&plant, 0.3, 2).unwrap() < 1e-12);
    }

    #[test]
    fn rank_loss_is_reported_as_relative_degree_violation() {
        // Reliability that zeroes every actuator at t = 0 kills Gamma.
        let plant = Plant::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            dmatrix![0.0, 0.0; 1.0, 1.0],
            dmatrix![1.0, 0.0],
            vec![
                ReliabilityProfile {
                    terms: vec![FaultTerm::Constant { level: 0.0 }],
                },
                ReliabilityProfile {
                    terms: vec![FaultTerm::Constant { level: 0.0 }],
                },
            ],
            NonlinearityMode::Zero,
            DVector::zeros(2),
        )
        .unwrap();
        let err = build_u_jet(&plant, 0.0, 2, 1);
        assert!(matches!(err, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn chain_depth_exceeding_state_dimension_is_rejected() {
        let plant = scalar_decay();
        assert!(build_u_jet(&plant, 0.0, 2, 0).is_err());
    }
}
