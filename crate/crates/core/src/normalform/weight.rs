//! Controller weight matrix: how input effort is distributed across the
//! redundant actuators.
//!
//! The closed-loop input is u(t) = -k(t) K(t) e(t) with a scalar funnel gain
//! k and an m x p weight K. Feasibility of a weight that (a) produces the
//! identity route Gamma(t) K(t) into the output chain's driving block and
//! (b) leaves the internal dynamics untouched requires the routing condition
//!   im M (O M)^+ [0; ...; 0; I_p] ⊆ im B L(t),
//! in which case K(t) = (B L(t))^+ M (O M)^+ [0; ...; 0; I_p] realizes both.
//! A simpler default is K = Gamma_0^T (the transpose of the unscaled
//! coupling), which keeps Gamma K symmetric positive definite whenever the
//! actuators degrade uniformly enough.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalform::{build_cal_b_jet, build_cal_c};
use crate::numkit::linalg::{min_sym_eig, pinv, rank_of};
use crate::plant::Plant;

/// Strategy for choosing the weight matrix.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum WeightMethod {
    /// K = (C A^{r-1} B)^T, constant in time.
    GammaTranspose,
    /// K(t) = (B L(t))^+ M (O M)^+ [0; I_p]: the routing solution that also
    /// decouples the internal dynamics; requires the routing condition.
    PinvFormula,
    /// A user-supplied constant matrix (row-major).
    Explicit { matrix: Vec<Vec<f64>> },
}

/// Result of synthesizing a weight at one time.
#[derive(Debug, Clone)]
pub struct WeightSynthesis {
    /// The weight matrix K (m x p).
    pub k: DMatrix<f64>,
    /// min eig of Gamma K + (Gamma K)^T at the synthesis time.
    pub min_sym_eig_weighted_gain: f64,
    /// || Gamma K - I || when the identity route is requested (pinv formula);
    /// NaN for methods that do not aim at the identity.
    pub gain_identity_residual: f64,
    /// || N_in K || — coupling of the weighted input into the internal
    /// dynamics; NaN when there are no internal dynamics.
    pub zero_dynamics_residual: f64,
}

fn selector(r: usize, p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(r * p, p);
    s.view_mut(((r - 1) * p, 0), (p, p))
        .copy_from(&DMatrix::identity(p, p));
    s
}

/// The weight matrix at time t for the chosen method (no diagnostics).
pub fn weight_at(
    plant: &Plant,
    t: f64,
    r: usize,
    method: &WeightMethod,
    rank_tol: f64,
) -> Result<DMatrix<f64>> {
    match method {
        WeightMethod::GammaTranspose => {
            let mut ca = plant.c.clone();
            for _ in 1..r {
                ca = &ca * &plant.a;
            }
            Ok((&ca * &plant.b).transpose())
        }
        WeightMethod::Explicit { matrix } => {
            let rows = matrix.len();
            if rows != plant.m {
                return Err(Error::dimension(
                    "explicit weight matrix",
                    format!("{} rows", plant.m),
                    format!("{rows} rows"),
                ));
            }
            let cols = matrix.first().map_or(0, |r| r.len());
            if cols != plant.p || matrix.iter().any(|r| r.len() != cols) {
                return Err(Error::dimension(
                    "explicit weight matrix",
                    format!("{} columns", plant.p),
                    "ragged or mismatched columns".to_string(),
                ));
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            if !flat.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "explicit weight matrix".to_string(),
                });
            }
            Ok(DMatrix::from_row_slice(plant.m, plant.p, &flat))
        }
        WeightMethod::PinvFormula => {
            let cal_c = build_cal_c(&plant.a, &plant.c, r)?;
            let cal_b = build_cal_b_jet(plant, t, r, 0)?.coeffs[0].clone();
            let cb = &cal_c * &cal_b;
            if rank_of(&cb, rank_tol)? != r * plant.p {
                return Err(Error::RankDeficient {
                    context: "output-input coupling in weight synthesis".to_string(),
                    time: t,
                });
            }
            let cb_pinv = pinv(&cb, rank_tol)?;
            let target = &cal_b * cb_pinv * selector(r, plant.p); // n x p
            let bl = plant.input_jet(t, 0)?.coeffs[0].clone();
            let bl_pinv = pinv(&bl, rank_tol)?;

            // Routing condition: the target columns must lie in im B L(t).
            let residual = (&target - &bl * &bl_pinv * &target).norm();
            if residual > 1e-8 * target.norm().max(1.0) {
                return Err(Error::WeightInfeasible {
                    reason: format!(
                        "no feasible weight: the routing target leaves the faulted input range \
                         (projection residual {residual:.3e})"
                    ),
                    time: t,
                });
            }
            Ok(bl_pinv * target)
        }
    }
}

/// Synthesize the weight at time t and report the quality diagnostics.
pub fn build_k(
    plant: &Plant,
    t: f64,
    r: usize,
    method: &WeightMethod,
    rank_tol: f64,
) -> Result<WeightSynthesis> {
    let k = weight_at(plant, t, r, method, rank_tol)?;

    let mut ca = plant.c.clone();
    for _ in 1..r {
        ca = &ca * &plant.a;
    }
    let gamma = &ca * &plant.b * plant.reliability_matrix(t)?;
    let weighted = &gamma * &k;
    let min_eig = min_sym_eig(&weighted)?;

    let gain_identity_residual = match method {
        WeightMethod::PinvFormula => (&weighted - DMatrix::identity(plant.p, plant.p)).norm(),
        _ => f64::NAN,
    };

    // Coupling into the internal dynamics: N_in K with N_in from the
    // transformed input matrix. Only defined when internal dynamics exist.
    let rho = r * plant.p;
    let zero_dynamics_residual = if rho < plant.n {
        let (u_jet, _) = crate::normalform::build_u_jet(plant, t, r, 0)?;
        let bl = plant.input_jet(t, 0)?.coeffs[0].clone();
        let b_hat = &u_jet.coeffs[0] * &bl;
        let n_input = b_hat.view((rho, 0), (plant.n - rho, plant.m)).into_owned();
        (n_input * &k).norm()
    } else {
        f64::NAN
    };

    Ok(WeightSynthesis {
        k,
        min_sym_eig_weighted_gain: min_eig,
        gain_identity_residual,
        zero_dynamics_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{NonlinearityMode, Plant, ReliabilityProfile};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

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

    #[test]
    fn gamma_transpose_weight() {
        let plant = double_integrator();
        let k = weight_at(&plant, 0.0, 2, &WeightMethod::GammaTranspose, 1e-9).unwrap();
        // Gamma = CAB = [1 1], so K = [1; 1].
        assert_eq!(k.shape(), (2, 1));
        assert_relative_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(1, 0)], 1.0);
    }

    #[test]
    fn pinv_weight_achieves_identity_route() {
        let plant = double_integrator();
        let synth = build_k(&plant, 0.0, 2, &WeightMethod::PinvFormula, 1e-9).unwrap();
        assert!(synth.gain_identity_residual < 1e-10);
        assert!(synth.min_sym_eig_weighted_gain > 0.0);
    }

    #[test]
    fn explicit_weight_validates_shape() {
        let plant = double_integrator();
        let bad = WeightMethod::Explicit {
            matrix: vec![vec![1.0, 2.0]],
        };
        assert!(weight_at(&plant, 0.0, 2, &bad, 1e-9).is_err());
        let good = WeightMethod::Explicit {
            matrix: vec![vec![0.5], vec![0.5]],
        };
        let k = weight_at(&plant, 0.0, 2, &good, 1e-9).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.5);
    }

    #[test]
    fn infeasible_routing_is_reported() {
        // Four-state shift chain with two actuators. The routing target for
        // the output chain is [0, 1, 0, 1/2], but im B only contains vectors
        // whose second and fourth components agree — so no weight can route
        // the identity into the chain without disturbing the rest.
        let plant = Plant::new(
            dmatrix![0.0, 1.0, 0.0, 0.0;
                     0.0, 0.0, 1.0, 0.0;
                     0.0, 0.0, 0.0, 1.0;
                     0.0, 0.0, 0.0, 0.0],
            dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0; 1.0, 0.0],
            dmatrix![1.0, 0.0, 0.0, 0.0],
            vec![ReliabilityProfile::healthy(), ReliabilityProfile::healthy()],
            NonlinearityMode::Zero,
            dvector![0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let result = weight_at(&plant, 0.0, 2, &WeightMethod::PinvFormula, 1e-9);
        match result {
            Err(Error::WeightInfeasible { .. }) => {}
            Err(other) => panic!("unexpected error kind: {other}"),
            Ok(k) => panic!("expected infeasible routing, got K = {k}"),
        }
    }
}
