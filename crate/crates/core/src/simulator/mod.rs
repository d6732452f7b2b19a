//! Closed-loop assembly and integration.
//!
//! The loop runs in the plant's original coordinates: the output-error jet is
//! reconstructed algebraically from the state (y^(k) = C A^k x holds below
//! the relative degree because the low-order input couplings vanish), fed
//! through the funnel cascade, and the weighted feedback drives the plant.
//! The coordinate change of the normal form is an analysis artifact and is
//! never inverted inside the loop.

pub mod dopri;
pub mod reference;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::controller::{cascade, feedback, CascadeState, FunnelSpec};
use crate::error::{Error, Result};
use crate::normalform::weight::{weight_at, WeightMethod};
use crate::numkit::jet::MatJet;
use crate::plant::Plant;

pub use dopri::{integrate_fixed_rk4, DopriOptions, STALL_STEP};
pub use reference::{Reference, SampleNode, SinusoidChannel};

/// Everything needed to evaluate the closed loop at a time/state pair.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: Plant,
    pub reference: Reference,
    pub funnels: Vec<FunnelSpec>,
    pub weight: WeightMethod,
    /// Relative degree (= number of funnel levels).
    pub r: usize,
    /// Precomputed output-derivative maps [C, CA, ..., CA^{r-1}].
    ca_powers: Vec<DMatrix<f64>>,
    /// Weight matrix when it is time-invariant (gamma_transpose, explicit);
    /// None for the time-varying method, which synthesizes per evaluation.
    constant_weight: Option<DMatrix<f64>>,
    rank_tol: f64,
}

/// One right-hand-side evaluation with the controller internals exposed.
#[derive(Debug, Clone)]
pub struct RhsEval {
    pub xdot: DVector<f64>,
    pub cascade: CascadeState,
    /// Commanded input u.
    pub u: DVector<f64>,
    /// Effective per-actuator action l_i(t) u_i + g_i(t, u_i).
    pub u_effective: DVector<f64>,
}

impl ClosedLoop {
    pub fn new(
        plant: Plant,
        reference: Reference,
        funnels: Vec<FunnelSpec>,
        weight: WeightMethod,
        r: usize,
        rank_tol: f64,
    ) -> Result<Self> {
        if funnels.len() != r {
            return Err(Error::dimension(
                "closed-loop funnels",
                format!("{r} levels"),
                format!("{} levels", funnels.len()),
            ));
        }
        if reference.dim() != plant.p {
            return Err(Error::dimension(
                "closed-loop reference",
                format!("{} channels", plant.p),
                format!("{} channels", reference.dim()),
            ));
        }
        for f in &funnels {
            f.validate()?;
        }
        reference.validate(r.saturating_sub(1))?;

        let mut ca_powers = Vec::with_capacity(r);
        let mut row = plant.c.clone();
        for _ in 0..r {
            ca_powers.push(row.clone());
            row = &row * &plant.a;
        }
        let constant_weight = match &weight {
            WeightMethod::PinvFormula => None,
            method => Some(weight_at(&plant, 0.0, r, method, rank_tol)?),
        };
        Ok(ClosedLoop {
            plant,
            reference,
            funnels,
            weight,
            r,
            ca_powers,
            constant_weight,
            rank_tol,
        })
    }

    /// Output-error jet E_0 of order r-1: coefficient k is C A^k x - y_ref^(k).
    pub fn output_jet(&self, x: &DVector<f64>, yref_jet: &MatJet) -> Result<MatJet> {
        let order = self.r - 1;
        let p = self.plant.p;
        let mut coeffs = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let yk = &self.ca_powers[k] * x;
            let mut c = DMatrix::zeros(p, 1);
            for i in 0..p {
                c[(i, 0)] = yk[i] - yref_jet.coeffs[k][(i, 0)];
            }
            coeffs.push(c);
        }
        MatJet::from_coeffs(coeffs)
    }

    /// The weight matrix at time t.
    pub fn weight_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.constant_weight {
            Some(k) => Ok(k.clone()),
            None => weight_at(&self.plant, t, self.r, &self.weight, self.rank_tol),
        }
    }

    /// Evaluate the closed-loop right-hand side with controller internals.
    pub fn rhs_full(&self, t: f64, x: &DVector<f64>) -> Result<RhsEval> {
        let yref_jet = self.reference.jet(t, self.r - 1)?;
        let e0 = self.output_jet(x, &yref_jet)?;
        let state = cascade(&e0, &self.funnels, t)?;
        let k = self.weight_matrix(t)?;
        let u = feedback(&state, &k)?;
        let xdot = self.plant.rhs(t, x, &u)?;
        let u_effective = self.plant.effective_actions(t, &u)?;
        Ok(RhsEval {
            xdot,
            cascade: state,
            u,
            u_effective,
        })
    }

    /// Right-hand side only (for the integrator's trial stages).
    pub fn rhs(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.rhs_full(t, x)?.xdot)
    }
}

/// One sampled instant of a closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub y: Vec<f64>,
    pub y_ref: Vec<f64>,
    /// Per cascade level: error norm, margin phi_i ||e_i||, gain k_i.
    pub error_norms: Vec<f64>,
    pub margins: Vec<f64>,
    pub gains: Vec<f64>,
    pub u: Vec<f64>,
    pub u_effective: Vec<f64>,
    pub x: Vec<f64>,
}

/// Sampled closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    /// Number of cascade levels (controls the per-level column count).
    pub levels: usize,
    pub rows: Vec<TraceRow>,
}

/// Integration settings for a closed-loop run.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Output sampling interval (dense output, independent of step sizes).
    pub output_dt: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            t_end: 10.0,
            rtol: 1e-10,
            atol: 1e-12,
            output_dt: 0.01,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument {
                context: "SimOptions".to_string(),
                reason: format!("t_end must be positive and finite (got {})", self.t_end),
            });
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument {
                context: "SimOptions".to_string(),
                reason: format!(
                    "tolerances must be positive (rtol {}, atol {})",
                    self.rtol, self.atol
                ),
            });
        }
        if !(self.output_dt > 0.0 && self.output_dt <= self.t_end) {
            return Err(Error::InvalidArgument {
                context: "SimOptions".to_string(),
                reason: format!(
                    "output_dt must lie in (0, t_end] (got {})",
                    self.output_dt
                ),
            });
        }
        Ok(())
    }
}

fn sample_row(loop_: &ClosedLoop, t: f64, x: &DVector<f64>) -> Result<TraceRow> {
    let eval = loop_.rhs_full(t, x)?;
    let y = &loop_.plant.c * x;
    let y_ref = loop_.reference.value(t)?;
    let mut error_norms = Vec::with_capacity(eval.cascade.levels.len());
    let mut margins = Vec::with_capacity(eval.cascade.levels.len());
    let mut gains = Vec::with_capacity(eval.cascade.levels.len());
    for level in &eval.cascade.levels {
        error_norms.push(level.error.coeffs[0].norm());
        margins.push(level.margin);
        gains.push(level.gain.coeffs[0]);
    }
    Ok(TraceRow {
        t,
        y: y.iter().cloned().collect(),
        y_ref: y_ref.iter().cloned().collect(),
        error_norms,
        margins,
        gains,
        u: eval.u.iter().cloned().collect(),
        u_effective: eval.u_effective.iter().cloned().collect(),
        x: x.iter().cloned().collect(),
    })
}

/// Integrate the closed loop over [0, t_end], sampling the trace on the
/// uniform output grid k * output_dt (dense output, so the sample times do
/// not constrain the adaptive steps).
///
/// The step size is additionally capped at 4 * output_dt so that fault
/// transitions narrower than the sampling interval cannot be stepped over.
pub fn integrate(loop_: &ClosedLoop, opts: &SimOptions) -> Result<Trace> {
    opts.validate()?;
    let x0 = loop_.plant.x0.clone();

    // Output grid: k * output_dt, with the final point snapped onto t_end.
    let count = (opts.t_end / opts.output_dt + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=count)
        .map(|k| (k as f64 * opts.output_dt).min(opts.t_end))
        .collect();
    if grid.last().is_none_or(|&g| g < opts.t_end - 1e-9 * opts.t_end.max(1.0)) {
        grid.push(opts.t_end);
    }
    if let Some(last) = grid.last_mut() {
        *last = opts.t_end;
    }

    let mut rows: Vec<TraceRow> = Vec::with_capacity(grid.len());
    rows.push(sample_row(loop_, 0.0, &x0)?);
    let mut next_sample = 1usize;

    let dopri_opts = DopriOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        max_step: 4.0 * opts.output_dt,
        max_evals: 200_000_000,
    };

    dopri::integrate_adaptive(
        |t, x| loop_.rhs(t, x),
        0.0,
        opts.t_end,
        x0,
        &dopri_opts,
        |seg| {
            let seg_end = seg.t + seg.h;
            while next_sample < grid.len() && grid[next_sample] <= seg_end + 1e-14 {
                let ts = grid[next_sample].min(seg_end);
                let xs = seg.eval(ts);
                rows.push(sample_row(loop_, ts, &xs)?);
                next_sample += 1;
            }
            Ok(())
        },
    )?;

    Ok(Trace {
        levels: loop_.funnels.len(),
        rows,
    })
}

/// Fixed-step RK4 cross-check of the same closed loop: returns the state at
/// t_end. Used for convergence-order verification against the adaptive path.
pub fn integrate_rk4(loop_: &ClosedLoop, t_end: f64, h: f64) -> Result<DVector<f64>> {
    integrate_fixed_rk4(
        |t, x| loop_.rhs(t, x),
        0.0,
        t_end,
        h,
        loop_.plant.x0.clone(),
    )
}
