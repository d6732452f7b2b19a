//! Plant model: a linear system x' = A x + B L(t) u + f(t, x, u) whose input
//! matrix is scaled column-wise by per-actuator reliability signals L(t) =
//! diag(l_1(t), ..., l_m(t)), plus an optional input nonlinearity f routed
//! through the input matrix (f = B g with g acting componentwise on u).
//!
//! Reliability signals are sums of smooth terms with closed-form derivative
//! jets, so the constructions downstream can differentiate L(t) exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::jet::{MatJet, ScalarJet};
use crate::numkit::special::{erf, erf_jet, erfc_jet};

/// One additive term of a reliability signal l_i(t).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultTerm {
    /// Constant level (a healthy actuator is `{ level: 1.0 }`).
    Constant { level: f64 },
    /// Gradual degradation: level * erfc(slope * (t - center)).
    ErfcDecay { level: f64, center: f64, slope: f64 },
    /// Sharp cutoff, same closed form with a steep slope:
    /// level * erfc(slope * (t - center)).
    ErfcCutoff { level: f64, center: f64, slope: f64 },
    /// Product of sub-terms (e.g. a decay modulated by a window).
    Product { factors: Vec<FaultTerm> },
    /// Rational decay 1 / (((t - center)/width)^2 + 1).
    InverseQuadratic { center: f64, width: f64 },
}

impl FaultTerm {
    /// Derivative jet of this term at time t.
    pub fn jet(&self, t: f64, order: usize) -> Result<ScalarJet> {
        match self {
            FaultTerm::Constant { level } => Ok(ScalarJet::constant(*level, order)),
            FaultTerm::ErfcDecay { level, center, slope }
            | FaultTerm::ErfcCutoff { level, center, slope } => {
                // d^k/dt^k erfc(s(t-c)) = s^k erfc^(k)(s(t-c)).
                let inner = slope * (t - center);
                let base = erfc_jet(inner, order);
                let mut coeffs = base.coeffs;
                let mut pow = 1.0;
                for c in coeffs.iter_mut() {
                    *c *= level * pow;
                    pow *= slope;
                }
                Ok(ScalarJet::from_coeffs(coeffs))
            }
            FaultTerm::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidArgument {
                        context: "FaultTerm::Product".to_string(),
                        reason: "empty factor list".to_string(),
                    });
                }
                let mut acc = factors[0].jet(t, order)?;
                for f in &factors[1..] {
                    acc = acc.mul(&f.jet(t, order)?);
                }
                Ok(acc)
            }
            FaultTerm::InverseQuadratic { center, width } => {
                if *width == 0.0 || !width.is_finite() {
                    return Err(Error::InvalidArgument {
                        context: "FaultTerm::InverseQuadratic".to_string(),
                        reason: format!("width {width} must be finite and nonzero"),
                    });
                }
                // 1 / (((t-c)/w)^2 + 1), differentiated via the jet reciprocal
                // of the quadratic denominator (exact: denominator is degree 2).
                let s = ScalarJet::variable(t, order)
                    .sub(&ScalarJet::constant(*center, order))
                    .scale(1.0 / width);
                let denom = s.mul(&s).add(&ScalarJet::constant(1.0, order));
                denom.recip()
            }
        }
    }

    /// Value at time t.
    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t, 0)?.coeffs[0])
    }

    /// True when the term is identically zero for all t.
    fn is_structurally_zero(&self) -> bool {
        match self {
            FaultTerm::Constant { level } => *level == 0.0,
            FaultTerm::ErfcDecay { level, .. } | FaultTerm::ErfcCutoff { level, .. } => {
                *level == 0.0
            }
            FaultTerm::Product { factors } => {
                factors.is_empty() || factors.iter().any(|f| f.is_structurally_zero())
            }
            FaultTerm::InverseQuadratic { .. } => false,
        }
    }
}

/// Reliability signal of one actuator: a sum of fault terms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(transparent)]
pub struct ReliabilityProfile {
    pub terms: Vec<FaultTerm>,
}

impl ReliabilityProfile {
    pub fn healthy() -> Self {
        ReliabilityProfile {
            terms: vec![FaultTerm::Constant { level: 1.0 }],
        }
    }

    pub fn jet(&self, t: f64, order: usize) -> Result<ScalarJet> {
        let mut acc = ScalarJet::constant(0.0, order);
        for term in &self.terms {
            acc = acc.add(&term.jet(t, order)?);
        }
        Ok(acc)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.jet(t, 0)?.coeffs[0])
    }

    /// True when the signal is identically zero (every term structurally zero).
    pub fn is_structurally_zero(&self) -> bool {
        self.terms.iter().all(|t| t.is_structurally_zero())
    }
}

/// Smooth gate (1 + erf(slope * (t - center))) * level, ramping 0 -> 2*level.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GateProfile {
    pub level: f64,
    pub center: f64,
    pub slope: f64,
}

impl GateProfile {
    pub fn value(&self, t: f64) -> f64 {
        self.level * (1.0 + erf(self.slope * (t - self.center)))
    }

    pub fn jet(&self, t: f64, order: usize) -> ScalarJet {
        let base = erf_jet(self.slope * (t - self.center), order);
        let mut coeffs = base.coeffs;
        coeffs[0] += 1.0;
        let mut pow = 1.0;
        for c in coeffs.iter_mut() {
            *c *= self.level * pow;
            pow *= self.slope;
        }
        ScalarJet::from_coeffs(coeffs)
    }
}

/// Static input nonlinearity acting on one actuator channel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActuatorNonlinearity {
    /// g_i(t, v) = 0.
    None,
    /// Unit-slope saturation clipped at +/- threshold.
    Saturation { threshold: f64 },
    /// Constant offset.
    Bias { bias: f64 },
    /// Output frozen at a fixed value regardless of the command.
    Stuck { value: f64 },
    /// Saturation whose amplitude is modulated by a smooth time gate:
    /// g_i(t, v) = gate(t) * sat_threshold(v).
    GatedSaturation { threshold: f64, gate: GateProfile },
}

fn saturate(v: f64, threshold: f64) -> f64 {
    v.clamp(-threshold, threshold)
}

impl ActuatorNonlinearity {
    /// Evaluate g_i(t, v) for the commanded input v of this channel.
    pub fn eval(&self, t: f64, v: f64) -> f64 {
        match self {
            ActuatorNonlinearity::None => 0.0,
            ActuatorNonlinearity::Saturation { threshold } => saturate(v, *threshold),
            ActuatorNonlinearity::Bias { bias } => *bias,
            ActuatorNonlinearity::Stuck { value } => *value,
            ActuatorNonlinearity::GatedSaturation { threshold, gate } => {
                gate.value(t) * saturate(v, *threshold)
            }
        }
    }
}

/// How the disturbance/nonlinearity term f(t, x, u) enters the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityMode {
    /// f = 0.
    Zero,
    /// f(t, x, u) = B g(t, u) with g acting componentwise on u through the
    /// listed per-actuator nonlinearities (one entry per actuator).
    BComposed(Vec<ActuatorNonlinearity>),
}

/// Linear plant with faulting, possibly redundant actuators.
#[derive(Debug, Clone)]
pub struct Plant {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub reliability: Vec<ReliabilityProfile>,
    pub nonlinearity: NonlinearityMode,
    pub x0: DVector<f64>,
}

impl Plant {
    /// Validates dimensions, finiteness, m >= p, and that any stuck actuator
    /// has a structurally zero reliability signal (otherwise the model would
    /// feed the stuck channel's command through the healthy path too).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        reliability: Vec<ReliabilityProfile>,
        nonlinearity: NonlinearityMode,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dimension(
                "Plant system matrix",
                format!("{n}x{n}"),
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        let m = b.ncols();
        if b.nrows() != n {
            return Err(Error::dimension(
                "Plant input matrix",
                format!("{n} rows"),
                format!("{} rows", b.nrows()),
            ));
        }
        let p = c.nrows();
        if c.ncols() != n {
            return Err(Error::dimension(
                "Plant output matrix",
                format!("{n} columns"),
                format!("{} columns", c.ncols()),
            ));
        }
        if m < p {
            return Err(Error::InvalidArgument {
                context: "Plant".to_string(),
                reason: format!("need at least as many actuators as outputs (m = {m}, p = {p})"),
            });
        }
        if x0.len() != n {
            return Err(Error::dimension(
                "Plant initial state",
                format!("length {n}"),
                format!("length {}", x0.len()),
            ));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c)] {
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("Plant matrix {name}"),
                });
            }
        }
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Plant initial state".to_string(),
            });
        }
        if reliability.len() != m {
            return Err(Error::dimension(
                "Plant reliability profiles",
                format!("{m} profiles"),
                format!("{} profiles", reliability.len()),
            ));
        }
        if let NonlinearityMode::BComposed(channels) = &nonlinearity {
            if channels.len() != m {
                return Err(Error::dimension(
                    "Plant nonlinearity channels",
                    format!("{m} channels"),
                    format!("{} channels", channels.len()),
                ));
            }
            for (i, ch) in channels.iter().enumerate() {
                if let ActuatorNonlinearity::Stuck { .. } = ch {
                    if !reliability[i].is_structurally_zero() {
                        return Err(Error::InvalidArgument {
                            context: "Plant".to_string(),
                            reason: format!(
                                "actuator {} is stuck but its reliability signal is not \
                                 identically zero; a stuck actuator must be detached from \
                                 the commanded input",
                                i + 1
                            ),
                        });
                    }
                }
            }
        }
        Ok(Plant {
            n,
            m,
            p,
            a,
            b,
            c,
            reliability,
            nonlinearity,
            x0,
        })
    }

    /// Jet of the diagonal reliability matrix L(t) = diag(l_1, ..., l_m).
    pub fn reliability_jet(&self, t: f64, order: usize) -> Result<MatJet> {
        let mut coeffs = vec![DMatrix::zeros(self.m, self.m); order + 1];
        for (i, profile) in self.reliability.iter().enumerate() {
            let jet = profile.jet(t, order)?;
            for (k, c) in jet.coeffs.iter().enumerate() {
                coeffs[k][(i, i)] = *c;
            }
        }
        MatJet::from_coeffs(coeffs)
    }

    /// L(t) as a plain matrix.
    pub fn reliability_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.reliability_jet(t, 0)?.coeffs[0].clone())
    }

    /// Jet of the faulted input matrix B L(t).
    pub fn input_jet(&self, t: f64, order: usize) -> Result<MatJet> {
        self.reliability_jet(t, order)?.premul_const(&self.b)
    }

    /// Disturbance term f(t, x, u).
    pub fn nonlinearity_eval(&self, t: f64, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match &self.nonlinearity {
            NonlinearityMode::Zero => DVector::zeros(self.n),
            NonlinearityMode::BComposed(channels) => {
                let g = DVector::from_iterator(
                    self.m,
                    channels.iter().zip(u.iter()).map(|(ch, &v)| ch.eval(t, v)),
                );
                &self.b * g
            }
        }
    }

    /// Right-hand side x' = A x + B L(t) u + f(t, x, u).
    pub fn rhs(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.m {
            return Err(Error::dimension(
                "Plant::rhs input",
                format!("length {}", self.m),
                format!("length {}", u.len()),
            ));
        }
        let l = self.reliability_matrix(t)?;
        Ok(&self.a * x + &self.b * (l * u) + self.nonlinearity_eval(t, x, u))
    }

    /// Effective action of each actuator: l_i(t) u_i + g_i(t, u_i).
    ///
    /// This is the signal that actually reaches the plant through column i of
    /// B, combining the faulted linear path and the nonlinear path.
    pub fn effective_actions(&self, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.m);
        for i in 0..self.m {
            let linear = self.reliability[i].value(t)? * u[i];
            let nonlinear = match &self.nonlinearity {
                NonlinearityMode::Zero => 0.0,
                NonlinearityMode::BComposed(channels) => channels[i].eval(t, u[i]),
            };
            out[i] = linear + nonlinear;
        }
        Ok(out)
    }
}
