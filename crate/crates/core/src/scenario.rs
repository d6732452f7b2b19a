//! Scenario files: a JSON-friendly description of a complete closed-loop
//! experiment (plant, faults, reference, funnels, weight choice, integration
//! settings, declared expectations), the compiled form ready to run, and the
//! summary report computed from a finished run.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::FunnelSpec;
use crate::error::{Error, Result};
use crate::normalform::checks::{check_assumptions, AssumptionReport, CheckThresholds};
use crate::normalform::detect_relative_degree;
use crate::normalform::weight::WeightMethod;
use crate::plant::{ActuatorNonlinearity, FaultTerm, GateProfile, NonlinearityMode, Plant, ReliabilityProfile};
use crate::simulator::{ClosedLoop, Reference, SimOptions, SinusoidChannel, Trace};

/// Name of the built-in aircraft lateral-dynamics scenario.
pub const BUILTIN_AIRCRAFT: &str = "boeing737";

/// System matrices in row-major nested-array form.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

/// Integration settings as they appear in scenario files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimDef {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
    /// Number of grid points for the assumption checks on [0, t_end].
    #[serde(default = "default_check_grid_points")]
    pub check_grid_points: usize,
}

fn default_t_end() -> f64 {
    10.0
}

fn default_rtol() -> f64 {
    1e-10
}

fn default_atol() -> f64 {
    1e-12
}

fn default_output_dt() -> f64 {
    0.01
}

fn default_check_grid_points() -> usize {
    201
}

impl Default for SimDef {
    fn default() -> Self {
        SimDef {
            t_end: default_t_end(),
            rtol: default_rtol(),
            atol: default_atol(),
            output_dt: default_output_dt(),
            check_grid_points: default_check_grid_points(),
        }
    }
}

/// Post-run assertion on the sampled trace. Actuator indices are 1-based,
/// matching the `u_i` / `ueff_i` column labels of the exported trace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    /// |effective action| of the actuator stays <= threshold at every
    /// sample with from <= t <= to.
    EffectiveActionBelow {
        actuator: usize,
        threshold: f64,
        from: f64,
        to: f64,
    },
    /// |effective action| of the actuator reaches >= level at some sample
    /// with from <= t <= to.
    EffectiveActionAttains {
        actuator: usize,
        level: f64,
        from: f64,
        to: f64,
    },
}

impl Expectation {
    fn actuator(&self) -> usize {
        match self {
            Expectation::EffectiveActionBelow { actuator, .. }
            | Expectation::EffectiveActionAttains { actuator, .. } => *actuator,
        }
    }

    fn window(&self) -> (f64, f64) {
        match self {
            Expectation::EffectiveActionBelow { from, to, .. }
            | Expectation::EffectiveActionAttains { from, to, .. } => (*from, *to),
        }
    }

    fn bound(&self) -> f64 {
        match self {
            Expectation::EffectiveActionBelow { threshold, .. } => *threshold,
            Expectation::EffectiveActionAttains { level, .. } => *level,
        }
    }
}

/// Complete closed-loop experiment description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemDef,
    pub x0: Vec<f64>,
    /// Relative degree; detected from the matrices when absent, validated
    /// against the detected value when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_degree: Option<usize>,
    /// Per-actuator reliability signals (one list of additive terms each).
    pub reliability: Vec<ReliabilityProfile>,
    /// Per-actuator input nonlinearities; omitted means none anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<Vec<ActuatorNonlinearity>>,
    pub reference: Reference,
    /// One funnel per cascade level (length must equal the relative degree).
    pub funnels: Vec<FunnelSpec>,
    pub weight: WeightMethod,
    #[serde(default)]
    pub sim: SimDef,
    #[serde(default)]
    pub thresholds: CheckThresholds,
    #[serde(default)]
    pub expectations: Vec<Expectation>,
    /// Run the simulation even when an assumption check fails.
    #[serde(default)]
    pub override_assumption_gate: bool,
}

/// Scenario compiled into runnable pieces.
#[derive(Debug, Clone)]
pub struct CompiledScenario {
    pub closed_loop: ClosedLoop,
    pub r: usize,
    pub sim: SimOptions,
    pub check_grid_points: usize,
    pub thresholds: CheckThresholds,
    pub expectations: Vec<Expectation>,
    pub override_assumption_gate: bool,
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    field: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::scenario(
            field,
            format!("expected {nrows} rows, got {}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::scenario(
                &format!("{field}[{i}]"),
                format!("expected {ncols} entries, got {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl Scenario {
    /// Parse a scenario from JSON text; `origin` labels the source (a file
    /// path or a description) in error messages.
    pub fn from_json(json: &str, origin: &str) -> Result<Scenario> {
        serde_json::from_str(json).map_err(|e| Error::scenario(origin, e))
    }

    /// Look up a built-in scenario by name.
    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            BUILTIN_AIRCRAFT => Some(builtin_boeing737()),
            _ => None,
        }
    }

    /// Validate every field and compile into a runnable closed loop.
    /// Shape violations are reported with the path of the offending field.
    pub fn build(&self) -> Result<CompiledScenario> {
        let (n, m, p) = (self.system.n, self.system.m, self.system.p);
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::scenario(
                "system",
                format!("dimensions must be positive (n = {n}, m = {m}, p = {p})"),
            ));
        }
        let a = matrix_from_rows(&self.system.a, n, n, "system.A")?;
        let b = matrix_from_rows(&self.system.b, n, m, "system.B")?;
        let c = matrix_from_rows(&self.system.c, p, n, "system.C")?;

        if self.x0.len() != n {
            return Err(Error::scenario(
                "x0",
                format!("expected {n} entries, got {}", self.x0.len()),
            ));
        }
        let x0 = DVector::from_column_slice(&self.x0);

        if self.reliability.len() != m {
            return Err(Error::scenario(
                "reliability",
                format!(
                    "expected one profile per actuator ({m}), got {}",
                    self.reliability.len()
                ),
            ));
        }
        let nonlinearity = match &self.nonlinearity {
            None => NonlinearityMode::Zero,
            Some(list) => {
                if list.len() != m {
                    return Err(Error::scenario(
                        "nonlinearity",
                        format!(
                            "expected one entry per actuator ({m}), got {}",
                            list.len()
                        ),
                    ));
                }
                NonlinearityMode::BComposed(list.clone())
            }
        };

        let plant = Plant::new(a, b, c, self.reliability.clone(), nonlinearity, x0)?;

        let detected = detect_relative_degree(&plant, 0.0, self.thresholds.rank_tol)?;
        let r = match self.relative_degree {
            None => detected,
            Some(declared) => {
                if declared != detected {
                    return Err(Error::scenario(
                        "relative_degree",
                        format!("declared {declared}, but the matrices give {detected}"),
                    ));
                }
                declared
            }
        };

        if self.funnels.len() != r {
            return Err(Error::scenario(
                "funnels",
                format!(
                    "expected one funnel per cascade level ({r}), got {}",
                    self.funnels.len()
                ),
            ));
        }

        let sim = SimOptions {
            t_end: self.sim.t_end,
            rtol: self.sim.rtol,
            atol: self.sim.atol,
            output_dt: self.sim.output_dt,
        };
        sim.validate().map_err(|e| Error::scenario("sim", e))?;
        if self.sim.check_grid_points < 2 {
            return Err(Error::scenario(
                "sim.check_grid_points",
                format!("need at least 2 points, got {}", self.sim.check_grid_points),
            ));
        }

        for (i, exp) in self.expectations.iter().enumerate() {
            let field = format!("expectations[{i}]");
            let act = exp.actuator();
            if act == 0 || act > m {
                return Err(Error::scenario(
                    &field,
                    format!("actuator index {act} out of range 1..={m}"),
                ));
            }
            let (from, to) = exp.window();
            if !(from.is_finite() && to.is_finite() && from <= to) {
                return Err(Error::scenario(
                    &field,
                    format!("need finite from <= to (got from = {from}, to = {to})"),
                ));
            }
            let bound = exp.bound();
            if !(bound.is_finite() && bound >= 0.0) {
                return Err(Error::scenario(
                    &field,
                    format!("bound must be finite and nonnegative (got {bound})"),
                ));
            }
        }

        let closed_loop = ClosedLoop::new(
            plant,
            self.reference.clone(),
            self.funnels.clone(),
            self.weight.clone(),
            r,
            self.thresholds.rank_tol,
        )?;

        Ok(CompiledScenario {
            closed_loop,
            r,
            sim,
            check_grid_points: self.sim.check_grid_points,
            thresholds: self.thresholds.clone(),
            expectations: self.expectations.clone(),
            override_assumption_gate: self.override_assumption_gate,
        })
    }
}

impl CompiledScenario {
    pub fn plant(&self) -> &Plant {
        &self.closed_loop.plant
    }

    /// Run the assumption checks on [0, t_end]; `points` overrides the
    /// scenario's grid resolution.
    pub fn check(&self, points: Option<usize>) -> Result<AssumptionReport> {
        check_assumptions(
            self.plant(),
            self.r,
            0.0,
            self.sim.t_end,
            points.unwrap_or(self.check_grid_points),
            &self.thresholds,
            &self.closed_loop.weight,
        )
    }
}

/// Extremes of one cascade level over the sampled run.
#[derive(Debug, Clone, Serialize)]
pub struct LevelStats {
    pub level: usize,
    /// Largest observed phi_i ||e_i|| (must stay < 1).
    pub max_margin: f64,
    /// Smallest observed 1 - phi_i ||e_i|| (distance to the funnel boundary).
    pub min_boundary_distance: f64,
    pub max_gain: f64,
    pub max_error_norm: f64,
}

/// Sample windows during which an actuator's saturation was clipping.
#[derive(Debug, Clone, Serialize)]
pub struct SaturationWindow {
    /// 1-based actuator index.
    pub actuator: usize,
    pub threshold: f64,
    /// Closed [start, end] intervals of consecutive clipping samples.
    pub windows: Vec<[f64; 2]>,
}

/// Verdict for one declared expectation.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    /// Largest |effective action| observed in the window.
    pub observed: f64,
    pub pass: bool,
}

/// Post-run report: assumption checks, funnel/gain/signal extremes,
/// saturation activity, and expectation verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    /// Whether the trace reaches the requested end time.
    pub completed: bool,
    pub t_end: f64,
    pub assumptions: AssumptionReport,
    pub levels: Vec<LevelStats>,
    pub max_u_norm: f64,
    pub max_u_effective_norm: f64,
    pub max_x_norm: f64,
    /// Largest gain over all levels and samples.
    pub max_gain: f64,
    pub saturation: Vec<SaturationWindow>,
    pub expectations: Vec<ExpectationResult>,
}

impl SummaryReport {
    pub fn expectations_pass(&self) -> bool {
        self.expectations.iter().all(|e| e.pass)
    }
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Saturation is considered active at a sample when the command exceeds the
/// clip threshold and (for gated saturations) the gate is actually open.
fn saturation_active(nl: &ActuatorNonlinearity, t: f64, command: f64) -> Option<(f64, bool)> {
    match nl {
        ActuatorNonlinearity::Saturation { threshold } => {
            Some((*threshold, command.abs() > *threshold))
        }
        ActuatorNonlinearity::GatedSaturation { threshold, gate } => Some((
            *threshold,
            command.abs() > *threshold && gate.value(t) > 1e-12,
        )),
        _ => None,
    }
}

/// Build the summary report for a finished run.
pub fn summarize(
    plant: &Plant,
    trace: &Trace,
    assumptions: AssumptionReport,
    expectations: &[Expectation],
    t_end: f64,
) -> SummaryReport {
    let rows = &trace.rows;
    let completed = rows
        .last()
        .is_some_and(|row| row.t >= t_end - 1e-9 * t_end.max(1.0));

    let mut levels = Vec::with_capacity(trace.levels);
    for i in 0..trace.levels {
        let mut max_margin = 0.0_f64;
        let mut max_gain = 0.0_f64;
        let mut max_error_norm = 0.0_f64;
        for row in rows {
            max_margin = max_margin.max(row.margins[i]);
            max_gain = max_gain.max(row.gains[i]);
            max_error_norm = max_error_norm.max(row.error_norms[i]);
        }
        levels.push(LevelStats {
            level: i,
            max_margin,
            min_boundary_distance: if rows.is_empty() { 0.0 } else { 1.0 - max_margin },
            max_gain,
            max_error_norm,
        });
    }

    let max_u_norm = rows.iter().map(|r| norm(&r.u)).fold(0.0, f64::max);
    let max_u_effective_norm = rows
        .iter()
        .map(|r| norm(&r.u_effective))
        .fold(0.0, f64::max);
    let max_x_norm = rows.iter().map(|r| norm(&r.x)).fold(0.0, f64::max);
    let max_gain = levels.iter().map(|l| l.max_gain).fold(0.0, f64::max);

    let mut saturation = Vec::new();
    if let NonlinearityMode::BComposed(list) = &plant.nonlinearity {
        for (idx, nl) in list.iter().enumerate() {
            let Some((threshold, _)) = saturation_active(nl, 0.0, 0.0) else {
                continue;
            };
            let mut windows: Vec<[f64; 2]> = Vec::new();
            let mut open: Option<[f64; 2]> = None;
            for row in rows {
                let active = saturation_active(nl, row.t, row.u[idx])
                    .map(|(_, a)| a)
                    .unwrap_or(false);
                match (&mut open, active) {
                    (Some(w), true) => w[1] = row.t,
                    (Some(_), false) => windows.push(open.take().unwrap()),
                    (None, true) => open = Some([row.t, row.t]),
                    (None, false) => {}
                }
            }
            if let Some(w) = open {
                windows.push(w);
            }
            saturation.push(SaturationWindow {
                actuator: idx + 1,
                threshold,
                windows,
            });
        }
    }

    let expectations = expectations
        .iter()
        .map(|exp| {
            let (from, to) = exp.window();
            let idx = exp.actuator() - 1;
            let slack = 1e-12 * to.abs().max(1.0);
            let observed = rows
                .iter()
                .filter(|row| row.t >= from - slack && row.t <= to + slack)
                .map(|row| row.u_effective[idx].abs())
                .fold(0.0, f64::max);
            let pass = match exp {
                Expectation::EffectiveActionBelow { threshold, .. } => observed <= *threshold,
                Expectation::EffectiveActionAttains { level, .. } => observed >= *level,
            };
            ExpectationResult {
                expectation: exp.clone(),
                observed,
                pass,
            }
        })
        .collect();

    SummaryReport {
        completed,
        t_end: rows.last().map(|r| r.t).unwrap_or(0.0),
        assumptions,
        levels,
        max_u_norm,
        max_u_effective_norm,
        max_x_norm,
        max_gain,
        saturation,
        expectations,
    }
}

/// Built-in scenario: lateral dynamics of a large passenger aircraft in
/// cruise, with paired redundant rudder/aileron surfaces, a mid-flight
/// degradation and partial recovery of actuator 2, and a cutoff of
/// actuator 4. Tracks a sinusoidal bank/heading reference.
pub fn builtin_boeing737() -> Scenario {
    Scenario {
        system: SystemDef {
            n: 5,
            m: 4,
            p: 2,
            a: vec![
                vec![-0.13858, 14.326, -219.04, 32.167, 0.0],
                vec![-0.02073, -2.1692, 0.91315, 0.000256, 0.0],
                vec![0.00289, -0.16444, -0.15768, -0.00489, 0.0],
                vec![0.0, 1.0, 0.00618, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
            ],
            b: vec![
                vec![0.15935, 0.15935, 0.00211, 0.00211],
                vec![0.01264, 0.01264, 0.21326, 0.21326],
                vec![-0.12879, -0.12879, 0.00171, 0.00171],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
            c: vec![
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0],
            ],
        },
        x0: vec![0.0; 5],
        relative_degree: None,
        reliability: vec![
            ReliabilityProfile {
                terms: vec![FaultTerm::Constant { level: 1.0 }],
            },
            ReliabilityProfile {
                terms: vec![
                    FaultTerm::ErfcDecay {
                        level: 0.25,
                        center: 3.0,
                        slope: 1.0,
                    },
                    FaultTerm::ErfcCutoff {
                        level: 0.25,
                        center: 6.0,
                        slope: 100.0,
                    },
                ],
            },
            ReliabilityProfile {
                terms: vec![FaultTerm::Constant { level: 1.0 }],
            },
            ReliabilityProfile {
                terms: vec![FaultTerm::ErfcCutoff {
                    level: 0.5,
                    center: 7.0,
                    slope: 20.0,
                }],
            },
        ],
        nonlinearity: Some(vec![
            ActuatorNonlinearity::None,
            ActuatorNonlinearity::GatedSaturation {
                threshold: 1.0,
                gate: GateProfile {
                    level: 0.25,
                    center: 6.0,
                    slope: 100.0,
                },
            },
            ActuatorNonlinearity::None,
            ActuatorNonlinearity::None,
        ]),
        reference: Reference::Sinusoid {
            channels: vec![
                SinusoidChannel {
                    amplitude: 2.0,
                    omega: 1.0,
                    phase: 0.0,
                    offset: 0.0,
                },
                SinusoidChannel {
                    amplitude: 1.0,
                    omega: 1.0,
                    phase: FRAC_PI_2,
                    offset: 0.0,
                },
            ],
        },
        funnels: vec![
            FunnelSpec::ExpPlusConst {
                a: 5.0,
                b: 1.0,
                c: 0.1,
            },
            FunnelSpec::ExpPlusConst {
                a: 2.5,
                b: 0.5,
                c: 0.1,
            },
        ],
        weight: WeightMethod::GammaTranspose,
        sim: SimDef::default(),
        // The output-input coupling determinant dips to ~5.7e-7 after the
        // actuator-4 cutoff, which is still comfortably invertible for this
        // plant, so the scenario lowers the bound below the generic default.
        thresholds: CheckThresholds {
            bound_alpha: 1e-7,
            ..CheckThresholds::default()
        },
        expectations: vec![
            Expectation::EffectiveActionAttains {
                actuator: 2,
                level: 0.499,
                from: 7.0,
                to: 9.0,
            },
            Expectation::EffectiveActionBelow {
                actuator: 4,
                threshold: 1e-3,
                from: 7.2,
                to: 10.0,
            },
        ],
        override_assumption_gate: false,
    }
}
