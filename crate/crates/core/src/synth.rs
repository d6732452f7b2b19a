//! Random generation of well-posed test systems with a prescribed relative
//! degree, for property-based suites and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::normalform::{build_cal_c, detect_relative_degree};
use crate::numkit::linalg::{nullspace_basis, rank_of, DEFAULT_RANK_TOL};
use crate::plant::{FaultTerm, NonlinearityMode, Plant, ReliabilityProfile};

/// Shape of a synthesized system.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Output channels.
    pub p: usize,
    /// Actuators (must be >= p).
    pub m: usize,
    /// Relative degree.
    pub r: usize,
    /// Dimension of the internal dynamics; the state dimension is
    /// r * p + zero_dynamics_dim.
    pub zero_dynamics_dim: usize,
    /// Rank of the input matrix. None leaves it at its generic value; with
    /// Some(p) the redundant actuators span only a p-dimensional range.
    pub input_rank: Option<usize>,
    /// Give each actuator a smoothly decaying reliability signal instead of
    /// a constant one.
    pub time_varying: bool,
}

impl SynthConfig {
    pub fn state_dim(&self) -> usize {
        self.r * self.p + self.zero_dynamics_dim
    }
}

const MAX_ATTEMPTS: usize = 50;

/// Smallest acceptable p-th singular value of the output-input coupling at
/// t = 0. Rejecting nearly degenerate draws keeps tolerance-based property
/// checks meaningful.
const MIN_COUPLING_SIGMA: f64 = 1e-3;

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |_, _| rng.random_range(-1.0..1.0))
}

/// Per-actuator reliability signals bounded inside (0.4, 1), so the faulted
/// input matrix keeps full column scale for every t >= 0.
fn random_reliability<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    time_varying: bool,
) -> Vec<ReliabilityProfile> {
    (0..m)
        .map(|_| {
            if time_varying {
                // base + level * erfc(slope (t - center)) ranges over
                // (base, base + 2 level) with base + 2 level <= 1.
                let base = rng.random_range(0.4..0.7);
                let level = rng.random_range(0.05..(1.0 - base) / 2.0);
                ReliabilityProfile {
                    terms: vec![
                        FaultTerm::Constant { level: base },
                        FaultTerm::ErfcDecay {
                            level,
                            center: rng.random_range(0.5..2.0),
                            slope: rng.random_range(0.3..2.0),
                        },
                    ],
                }
            } else {
                ReliabilityProfile {
                    terms: vec![FaultTerm::Constant {
                        level: rng.random_range(0.4..1.0),
                    }],
                }
            }
        })
        .collect()
}

/// Draw a random plant whose relative degree is exactly `cfg.r`.
///
/// The input matrix is drawn from the kernel of the stacked first r - 1
/// output-derivative maps, which makes the early couplings C A^k B vanish
/// exactly; draws whose final coupling is rank-deficient or nearly
/// degenerate are rejected and redrawn.
pub fn random_plant<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> Result<Plant> {
    if cfg.p == 0 || cfg.r == 0 || cfg.m < cfg.p {
        return Err(Error::InvalidArgument {
            context: "random_plant".to_string(),
            reason: format!(
                "need p >= 1, r >= 1, m >= p (got p = {}, r = {}, m = {})",
                cfg.p, cfg.r, cfg.m
            ),
        });
    }
    let n = cfg.state_dim();
    for _ in 0..MAX_ATTEMPTS {
        let a = random_matrix(rng, n, n);
        let c = random_matrix(rng, cfg.p, n);

        let span = if cfg.r == 1 {
            DMatrix::identity(n, n)
        } else {
            let partial = build_cal_c(&a, &c, cfg.r - 1)?;
            let kernel = nullspace_basis(&partial, DEFAULT_RANK_TOL)?;
            if kernel.ncols() < cfg.p {
                continue;
            }
            kernel
        };
        let b = match cfg.input_rank {
            None => &span * random_matrix(rng, span.ncols(), cfg.m),
            Some(q) => {
                if q < cfg.p || q > span.ncols().min(cfg.m) {
                    return Err(Error::InvalidArgument {
                        context: "random_plant".to_string(),
                        reason: format!(
                            "input_rank {q} outside the admissible range {}..={}",
                            cfg.p,
                            span.ncols().min(cfg.m)
                        ),
                    });
                }
                &span * random_matrix(rng, span.ncols(), q) * random_matrix(rng, q, cfg.m)
            }
        };

        let expected_rank = cfg.input_rank.unwrap_or(span.ncols().min(cfg.m));

        let reliability = random_reliability(rng, cfg.m, cfg.time_varying);
        let plant = Plant::new(
            a,
            b,
            c,
            reliability,
            NonlinearityMode::Zero,
            DVector::zeros(n),
        )?;

        if rank_of(&plant.b, DEFAULT_RANK_TOL)? != expected_rank {
            continue;
        }
        match detect_relative_degree(&plant, 0.0, DEFAULT_RANK_TOL) {
            Ok(detected) if detected == cfg.r => {}
            _ => continue,
        }
        let cal_c = build_cal_c(&plant.a, &plant.c, cfg.r)?;
        if rank_of(&cal_c, DEFAULT_RANK_TOL)? != cfg.r * cfg.p {
            continue;
        }
        let gamma_l =
            plant.c.clone() * plant.a.pow(cfg.r as u32 - 1) * &plant.b * plant.reliability_matrix(0.0)?;
        let sigma_min = gamma_l
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if sigma_min < MIN_COUPLING_SIGMA {
            continue;
        }
        return Ok(plant);
    }
    Err(Error::InvalidArgument {
        context: "random_plant".to_string(),
        reason: format!(
            "no admissible system found in {MAX_ATTEMPTS} draws \
             (p = {}, m = {}, r = {}, internal dim {})",
            cfg.p, cfg.m, cfg.r, cfg.zero_dynamics_dim
        ),
    })
}
