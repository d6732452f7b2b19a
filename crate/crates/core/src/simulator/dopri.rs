//! Embedded Dormand-Prince 5(4) integrator with PI step-size control,
//! FSAL stage reuse, and fifth-order-accurate dense output.
//!
//! Two behaviors are specific to the funnel-controlled closed loop:
//! - the right-hand side is only defined strictly inside the funnel, so any
//!   trial stage that reports a funnel violation rejects the step and halves
//!   the step size (bypassing the error controller);
//! - if the step size collapses below the stall threshold, the violation (if
//!   one caused the collapse) is surfaced with the last good time; otherwise
//!   the run aborts as stalled.

use nalgebra::DVector;

use crate::error::{Error, Result};

// Butcher tableau (classic Dormand-Prince 5(4) pair).
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

// PI step-size controller constants.
const SAFE: f64 = 0.9;
const FAC1: f64 = 0.2; // min shrink factor h_new >= FAC1 * h
const FAC2: f64 = 10.0; // max growth factor h_new <= FAC2 * h
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - 0.75 * BETA;

/// Step size below which the integration is considered stalled.
pub const STALL_STEP: f64 = 1e-12;

/// Options for one adaptive integration.
#[derive(Debug, Clone)]
pub struct DopriOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on the step size; also bounds the initial guess.
    pub max_step: f64,
    /// Safety limit on right-hand-side evaluations.
    pub max_evals: usize,
}

/// Dense-output interpolant for one accepted step [t, t + h].
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t: f64,
    pub h: f64,
    rcont1: DVector<f64>,
    rcont2: DVector<f64>,
    rcont3: DVector<f64>,
    rcont4: DVector<f64>,
    rcont5: DVector<f64>,
}

impl DenseSegment {
    /// Interpolated state at time `ts` in [t, t + h].
    pub fn eval(&self, ts: f64) -> DVector<f64> {
        let theta = (ts - self.t) / self.h;
        let theta1 = 1.0 - theta;
        &self.rcont1
            + (&self.rcont2
                + (&self.rcont3 + (&self.rcont4 + &self.rcont5 * theta1) * theta) * theta1)
                * theta
    }
}

/// Callbacks driving the integration.
///
/// `rhs` may fail with `FunnelViolation`, which is treated as "this point is
/// outside the domain" (step rejected, halved); any other error aborts.
/// `on_step` receives every accepted step's dense interpolant and may fail,
/// aborting the run (used to sample the trace on the output grid).
pub fn integrate_adaptive<F, S>(
    mut rhs: F,
    t0: f64,
    t_end: f64,
    y0: DVector<f64>,
    opts: &DopriOptions,
    mut on_step: S,
) -> Result<(f64, DVector<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    S: FnMut(&DenseSegment) -> Result<()>,
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidArgument {
            context: "integrate_adaptive".to_string(),
            reason: format!("tolerances must be positive (rtol {}, atol {})", opts.rtol, opts.atol),
        });
    }
    if t_end <= t0 {
        return Err(Error::InvalidArgument {
            context: "integrate_adaptive".to_string(),
            reason: format!("need t_end > t0 (got [{t0}, {t_end}])"),
        });
    }
    let n = y0.len();
    let inv_n = 1.0 / n as f64;
    let mut evals = 0usize;
    let mut eval = |t: f64, y: &DVector<f64>, evals: &mut usize| -> Result<DVector<f64>> {
        *evals += 1;
        if *evals > opts.max_evals {
            return Err(Error::InvalidArgument {
                context: "integrate_adaptive".to_string(),
                reason: format!("evaluation budget exhausted ({} calls)", opts.max_evals),
            });
        }
        rhs(t, y)
    };

    let mut t = t0;
    let mut y = y0;
    let mut k1 = eval(t, &y, &mut evals)?;

    // Initial step size: standard two-probe estimate, capped by max_step.
    let mut h = {
        let sc = |yv: &DVector<f64>| -> DVector<f64> {
            DVector::from_iterator(n, yv.iter().map(|v| opts.atol + opts.rtol * v.abs()))
        };
        let s = sc(&y);
        let d0 = (y.component_div(&s)).norm() * inv_n.sqrt();
        let d1 = (k1.component_div(&s)).norm() * inv_n.sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(opts.max_step).min(t_end - t0);
        // Second probe: explicit Euler step, then bound the second derivative.
        match eval(t + h0, &(&y + &k1 * h0), &mut evals) {
            Ok(f1) => {
                let d2 = ((&f1 - &k1).component_div(&s)).norm() * inv_n.sqrt() / h0;
                let d_max = d1.max(d2);
                let h1 = if d_max <= 1e-15 {
                    (h0 * 1e-3).max(1e-6)
                } else {
                    (0.01 / d_max).powf(0.2)
                };
                (100.0 * h0).min(h1).min(opts.max_step).min(t_end - t0)
            }
            // Probe left the funnel: start very conservatively.
            Err(Error::FunnelViolation { .. }) => (h0 * 1e-3).max(STALL_STEP * 10.0),
            Err(other) => return Err(other),
        }
    };

    let mut facold = 1e-4_f64;
    let mut last_rejected = false;
    let mut last_violation: Option<Error> = None;

    while t < t_end {
        if h < STALL_STEP {
            return Err(match last_violation {
                Some(v) => v,
                None => Error::IntegrationStalled { time: t, step: h },
            });
        }
        // Stretch (up to 1%) or shrink the step to land exactly on t_end.
        let (h_eff, last) = if t + 1.01 * h >= t_end {
            (t_end - t, true)
        } else {
            (h, false)
        };

        // Trial stages. A funnel violation in any stage rejects the step.
        let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
        ks.push(k1.clone());
        let mut violated = false;
        for (i, row) in A.iter().enumerate() {
            let mut yi = y.clone();
            for (j, aij) in row.iter().take(i + 1).enumerate() {
                if *aij != 0.0 {
                    yi += &ks[j] * (*aij * h_eff);
                }
            }
            match eval(t + C[i] * h_eff, &yi, &mut evals) {
                Ok(ki) => ks.push(ki),
                Err(err @ Error::FunnelViolation { .. }) => {
                    last_violation = Some(err);
                    violated = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        if violated {
            h = h_eff * 0.5;
            last_rejected = true;
            continue;
        }

        // Fifth-order solution (same coefficients as stage row 6) and the
        // embedded error estimate.
        let y_new = {
            let mut acc = y.clone();
            for (j, b) in A[5].iter().enumerate() {
                if *b != 0.0 {
                    acc += &ks[j] * (*b * h_eff);
                }
            }
            acc
        };
        let err_vec = {
            let mut acc = DVector::zeros(n);
            for (j, e) in E.iter().enumerate() {
                if *e != 0.0 {
                    acc += &ks[j] * (*e * h_eff);
                }
            }
            acc
        };
        let err = {
            let mut sum = 0.0;
            for i in 0..n {
                let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                let q = err_vec[i] / sc;
                sum += q * q;
            }
            (sum * inv_n).sqrt()
        };

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            // Accept. PI controller for the next step size.
            facold = err.max(1e-4);
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC2, 1.0 / FAC1);
            let mut h_new = h_eff / fac;
            if last_rejected {
                h_new = h_new.min(h_eff);
            }
            last_rejected = false;
            last_violation = None;

            // Dense output over [t, t + h_eff].
            let delta = &y_new - &y;
            let rcont3 = &ks[0] * h_eff - &delta;
            let rcont4 = &delta - &ks[6] * h_eff - &rcont3;
            let mut rcont5 = DVector::zeros(n);
            for (j, d) in D.iter().enumerate() {
                if *d != 0.0 {
                    rcont5 += &ks[j] * (*d * h_eff);
                }
            }
            on_step(&DenseSegment {
                t,
                h: h_eff,
                rcont1: y.clone(),
                rcont2: delta,
                rcont3,
                rcont4,
                rcont5,
            })?;

            t = if last { t_end } else { t + h_eff };
            y = y_new;
            k1 = ks[6].clone(); // FSAL: last stage value is the next first stage
            h = h_new.min(opts.max_step);
        } else {
            // Reject on error estimate.
            h = h_eff / (fac11 / SAFE).min(1.0 / FAC1);
            last_rejected = true;
        }
    }

    Ok((t, y))
}

/// Classical fixed-step fourth-order Runge-Kutta over [t0, t_end].
///
/// Returns the final state. The step count is ceil((t_end - t0)/h); the last
/// step is shortened to land on t_end exactly.
pub fn integrate_fixed_rk4<F>(
    mut rhs: F,
    t0: f64,
    t_end: f64,
    h: f64,
    mut y: DVector<f64>,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if h <= 0.0 || t_end <= t0 {
        return Err(Error::InvalidArgument {
            context: "integrate_fixed_rk4".to_string(),
            reason: format!("need positive step and t_end > t0 (h = {h}, span [{t0}, {t_end}])"),
        });
    }
    let mut t = t0;
    while t < t_end - 1e-14 {
        let step = h.min(t_end - t);
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + step / 2.0, &(&y + &k1 * (step / 2.0)))?;
        let k3 = rhs(t + step / 2.0, &(&y + &k2 * (step / 2.0)))?;
        let k4 = rhs(t + step, &(&y + &k3 * step))?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        t += step;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn default_opts() -> DopriOptions {
        DopriOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: 0.1,
            max_evals: 10_000_000,
        }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let (t, y) = integrate_adaptive(
            |_t, y| Ok(-y.clone()),
            0.0,
            1.0,
            dvector![1.0],
            &default_opts(),
            |_seg| Ok(()),
        )
        .unwrap();
        assert_relative_eq!(t, 1.0, epsilon = 1e-14);
        assert_relative_eq!(y[0], (-1.0_f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        // y' = cos(t), y(0) = 0 -> y = sin(t). Sample the interpolant.
        let mut worst = 0.0_f64;
        integrate_adaptive(
            |t, _y| Ok(dvector![t.cos()]),
            0.0,
            3.0,
            dvector![0.0],
            &default_opts(),
            |seg| {
                for q in 0..5 {
                    let ts = seg.t + seg.h * (q as f64) / 4.0;
                    let err = (seg.eval(ts)[0] - ts.sin()).abs();
                    worst = worst.max(err);
                }
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-9, "dense output error {worst}");
    }

    #[test]
    fn domain_violation_near_boundary_is_surfaced() {
        // rhs undefined for y >= 1 (mimics the funnel boundary): y' = 2
        // reaches y = 1 at t = 0.5 and can never pass it.
        let result = integrate_adaptive(
            |t, y| {
                if y[0] >= 1.0 {
                    Err(Error::FunnelViolation {
                        time: t,
                        level: 0,
                        margin: y[0],
                    })
                } else {
                    Ok(dvector![2.0])
                }
            },
            0.0,
            1.0,
            dvector![0.0],
            &default_opts(),
            |_seg| Ok(()),
        );
        match result {
            Err(Error::FunnelViolation { time, .. }) => {
                assert!(time > 0.49 && time <= 0.52, "violation time {time}");
            }
            other => panic!("expected funnel violation, got {other:?}"),
        }
    }

    #[test]
    fn evaluation_budget_aborts_the_run() {
        let result = integrate_adaptive(
            |_t, y| Ok(-y.clone()),
            0.0,
            1.0,
            dvector![1.0],
            &DopriOptions {
                rtol: 1e-10,
                atol: 1e-12,
                max_step: 0.1,
                max_evals: 3,
            },
            |_seg| Ok(()),
        );
        assert!(result.is_err());
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // y' = -y on [0, 1]: halving h shrinks the error ~16x.
        let exact = (-1.0_f64).exp();
        let e1 = (integrate_fixed_rk4(|_t, y| Ok(-y.clone()), 0.0, 1.0, 0.1, dvector![1.0])
            .unwrap()[0]
            - exact)
            .abs();
        let e2 = (integrate_fixed_rk4(|_t, y| Ok(-y.clone()), 0.0, 1.0, 0.05, dvector![1.0])
            .unwrap()[0]
            - exact)
            .abs();
        let ratio = e1 / e2;
        assert!((10.0..25.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_lands_exactly_on_t_end() {
        // Step 0.3 does not divide 1.0; the last step must shorten.
        let y = integrate_fixed_rk4(|_t, _y| Ok(dvector![1.0]), 0.0, 1.0, 0.3, dvector![0.0])
            .unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn max_step_is_respected() {
        let mut max_h = 0.0_f64;
        integrate_adaptive(
            |_t, y| Ok(-y.clone()),
            0.0,
            2.0,
            dvector![1.0],
            &DopriOptions {
                rtol: 1e-6,
                atol: 1e-8,
                max_step: 0.05,
                max_evals: 1_000_000,
            },
            |seg| {
                max_h = max_h.max(seg.h);
                Ok(())
            },
        )
        .unwrap();
        assert!(max_h <= 0.05 + 1e-12, "max step {max_h}");
    }
}
