//! Funnel functions and the cascaded error/gain recursion that produces the
//! feedback law.
//!
//! Level 0 starts from the output error jet E_0 = y - y_ref (with
//! derivatives). Each level i forms the gain jet
//!   K_i = 1 / (1 - phi_i(t)^2 ||E_i||^2)
//! and hands the next level E_{i+1} = E_i' + K_i E_i, losing one derivative
//! order per level. The final feedback is u = -k_{r-1} K e_{r-1} with the
//! weight matrix K routing the scalar gain across the actuators.
//!
//! The recursion is only defined strictly inside the funnel: whenever
//! phi_i ||e_i|| reaches 1 the gain blows up, so the cascade reports a
//! funnel violation as soon as any margin comes within FUNNEL_GUARD of 1.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::jet::{MatJet, ScalarJet};

/// How close phi_i ||e_i|| may come to 1 before the cascade refuses to
/// evaluate (the gain would exceed ~1/FUNNEL_GUARD).
pub const FUNNEL_GUARD: f64 = 1e-12;

/// Reciprocal funnel-boundary function for one cascade level.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FunnelSpec {
    /// phi(t) = 1 / (a e^{-b t} + c): boundary 1/phi shrinks from a + c to c.
    ExpPlusConst { a: f64, b: f64, c: f64 },
    /// Custom phi supplied as a closure returning the jet of phi at (t, order).
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64, usize) -> ScalarJet + Send + Sync>),
}

impl fmt::Debug for FunnelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunnelSpec::ExpPlusConst { a, b, c } => f
                .debug_struct("ExpPlusConst")
                .field("a", a)
                .field("b", b)
                .field("c", c)
                .finish(),
            FunnelSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for FunnelSpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                FunnelSpec::ExpPlusConst { a, b, c },
                FunnelSpec::ExpPlusConst { a: a2, b: b2, c: c2 },
            ) => a == a2 && b == b2 && c == c2,
            _ => false,
        }
    }
}

impl FunnelSpec {
    /// Validate the closed-form parameters: a, b >= 0 and c > 0 keep phi
    /// positive, bounded, and defined for all t.
    pub fn validate(&self) -> Result<()> {
        match self {
            FunnelSpec::ExpPlusConst { a, b, c } => {
                if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                    return Err(Error::NonFinite {
                        context: "funnel parameters".to_string(),
                    });
                }
                if *a < 0.0 || *b < 0.0 || *c <= 0.0 {
                    return Err(Error::InvalidArgument {
                        context: "FunnelSpec::ExpPlusConst".to_string(),
                        reason: format!(
                            "need a >= 0, b >= 0, c > 0 (got a = {a}, b = {b}, c = {c})"
                        ),
                    });
                }
                Ok(())
            }
            FunnelSpec::Custom(_) => Ok(()),
        }
    }

    /// Jet of phi at time t up to the requested order.
    pub fn jet(&self, t: f64, order: usize) -> Result<ScalarJet> {
        match self {
            FunnelSpec::ExpPlusConst { a, b, c } => {
                // base(t) = a e^{-bt} + c has derivatives a (-b)^k e^{-bt}.
                let e = (-b * t).exp();
                let mut coeffs = vec![0.0; order + 1];
                let mut pow = 1.0;
                for co in coeffs.iter_mut() {
                    *co = a * pow * e;
                    pow *= -b;
                }
                coeffs[0] += c;
                ScalarJet::from_coeffs(coeffs).recip()
            }
            FunnelSpec::Custom(f) => Ok(f(t, order)),
        }
    }

    /// phi(t) itself.
    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t, 0)?.coeffs[0])
    }

    /// Funnel boundary 1/phi(t): the radius the error must stay inside.
    pub fn boundary(&self, t: f64) -> Result<f64> {
        let phi = self.value(t)?;
        if phi <= 0.0 {
            return Err(Error::InvalidArgument {
                context: "FunnelSpec::boundary".to_string(),
                reason: format!("phi({t}) = {phi} is not positive"),
            });
        }
        Ok(1.0 / phi)
    }
}

/// One level of the evaluated cascade.
#[derive(Debug, Clone)]
pub struct CascadeLevel {
    /// Error jet at this level (order shrinks by one per level).
    pub error: MatJet,
    /// Gain jet K_i = 1/(1 - phi_i^2 ||E_i||^2).
    pub gain: ScalarJet,
    /// Margin phi_i ||e_i|| in [0, 1).
    pub margin: f64,
}

/// Evaluated cascade at one time instant.
#[derive(Debug, Clone)]
pub struct CascadeState {
    pub levels: Vec<CascadeLevel>,
}

impl CascadeState {
    /// Scalar gain of the last level (the one the feedback law uses).
    pub fn final_gain(&self) -> f64 {
        self.levels
            .last()
            .map(|l| l.gain.coeffs[0])
            .unwrap_or(1.0)
    }

    /// Value of the last level's error vector.
    pub fn final_error(&self) -> DVector<f64> {
        let last = self.levels.last().expect("cascade has at least one level");
        DVector::from_column_slice(last.error.coeffs[0].as_slice())
    }
}

/// Run the gain cascade from the output-error jet.
///
/// `e0` must be a column-vector jet of order >= funnels.len() - 1; each level
/// consumes one derivative. Errors with `FunnelViolation` as soon as any
/// level's margin phi_i ||e_i|| reaches 1 - FUNNEL_GUARD.
pub fn cascade(e0: &MatJet, funnels: &[FunnelSpec], t: f64) -> Result<CascadeState> {
    let levels_n = funnels.len();
    if levels_n == 0 {
        return Err(Error::InvalidArgument {
            context: "cascade".to_string(),
            reason: "need at least one funnel level".to_string(),
        });
    }
    if e0.shape().1 != 1 {
        return Err(Error::dimension(
            "cascade error jet",
            "column vector".to_string(),
            format!("{}x{}", e0.shape().0, e0.shape().1),
        ));
    }
    if e0.order() + 1 < levels_n {
        return Err(Error::InsufficientJetOrder {
            context: "cascade".to_string(),
            needed: levels_n - 1,
            available: e0.order(),
        });
    }

    let mut levels: Vec<CascadeLevel> = Vec::with_capacity(levels_n);
    let mut current = e0.clone();
    for (i, funnel) in funnels.iter().enumerate() {
        let order = current.order();
        let phi = funnel.jet(t, order)?;
        let e_norm = current.coeffs[0].norm();
        let margin = phi.coeffs[0] * e_norm;
        if !margin.is_finite() {
            return Err(Error::NonFinite {
                context: format!("cascade margin at level {i}"),
            });
        }
        if margin >= 1.0 - FUNNEL_GUARD {
            return Err(Error::FunnelViolation {
                time: t,
                level: i,
                margin,
            });
        }
        // K_i = 1 / (1 - phi^2 ||E||^2) as a jet.
        let phi_sq = phi.mul(&phi);
        let nsq = current.norm_sq_jet();
        let denom = ScalarJet::constant(1.0, order).sub(&phi_sq.mul(&nsq));
        let gain = denom.recip()?;

        if i + 1 < levels_n {
            // E_{i+1} = E_i' + K_i E_i, one order lower.
            let e_dot = current.shift_derivative();
            let scaled = current.mul_scalar_jet(&gain).truncated(order - 1);
            let next = e_dot.add(&scaled)?;
            levels.push(CascadeLevel {
                error: current,
                gain,
                margin,
            });
            current = next;
        } else {
            levels.push(CascadeLevel {
                error: current.clone(),
                gain,
                margin,
            });
        }
    }
    Ok(CascadeState { levels })
}

/// Weighted funnel feedback u = -k K e, with k and e from the last cascade
/// level and K the (m x p) weight matrix.
pub fn feedback(state: &CascadeState, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
    let e = state.final_error();
    if weight.ncols() != e.len() {
        return Err(Error::dimension(
            "feedback weight",
            format!("{} columns", e.len()),
            format!("{} columns", weight.ncols()),
        ));
    }
    let k = state.final_gain();
    Ok(-(weight * e) * k)
}
