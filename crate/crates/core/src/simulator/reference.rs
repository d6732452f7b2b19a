//! Reference signals with exact derivative jets.
//!
//! The cascade consumes y_ref together with its first r-1 derivatives, so a
//! reference must provide jets, not just values. Sinusoids differentiate in
//! closed form; sampled references carry derivative data at their nodes and
//! interpolate between consecutive nodes with the two-point polynomial that
//! matches all provided derivatives on both ends.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::jet::{MatJet, ScalarJet};

/// One sinusoidal output channel: amplitude * sin(omega t + phase) + offset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SinusoidChannel {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

/// One node of a sampled reference: time, values, and derivatives.
/// `derivatives[k]` holds the k-th derivative of every channel (length p);
/// `derivatives[0]` is the value itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleNode {
    pub t: f64,
    pub derivatives: Vec<Vec<f64>>,
}

/// Reference signal for all p output channels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// Independent sinusoids, one per channel.
    Sinusoid { channels: Vec<SinusoidChannel> },
    /// Piecewise-polynomial reference through sampled derivative data.
    Sampled { nodes: Vec<SampleNode> },
}

impl Reference {
    /// Number of output channels.
    pub fn dim(&self) -> usize {
        match self {
            Reference::Sinusoid { channels } => channels.len(),
            Reference::Sampled { nodes } => nodes
                .first()
                .and_then(|n| n.derivatives.first())
                .map_or(0, |v| v.len()),
        }
    }

    /// Validate internal consistency; for sampled references: at least two
    /// nodes, strictly increasing times, uniform shape, derivative depth
    /// at least `min_order`.
    pub fn validate(&self, min_order: usize) -> Result<()> {
        match self {
            Reference::Sinusoid { channels } => {
                if channels.is_empty() {
                    return Err(Error::InvalidArgument {
                        context: "Reference::Sinusoid".to_string(),
                        reason: "no channels".to_string(),
                    });
                }
                for ch in channels {
                    if ![ch.amplitude, ch.omega, ch.phase, ch.offset]
                        .iter()
                        .all(|v| v.is_finite())
                    {
                        return Err(Error::NonFinite {
                            context: "sinusoid reference parameters".to_string(),
                        });
                    }
                }
                Ok(())
            }
            Reference::Sampled { nodes } => {
                if nodes.len() < 2 {
                    return Err(Error::InvalidArgument {
                        context: "Reference::Sampled".to_string(),
                        reason: "need at least two nodes".to_string(),
                    });
                }
                let p = self.dim();
                let depth = nodes[0].derivatives.len();
                if depth < min_order + 1 {
                    return Err(Error::InvalidArgument {
                        context: "Reference::Sampled".to_string(),
                        reason: format!(
                            "nodes carry {depth} derivative levels but the cascade needs \
                             {}",
                            min_order + 1
                        ),
                    });
                }
                for w in nodes.windows(2) {
                    if w[1].t <= w[0].t {
                        return Err(Error::InvalidArgument {
                            context: "Reference::Sampled".to_string(),
                            reason: format!(
                                "node times must increase strictly ({} then {})",
                                w[0].t, w[1].t
                            ),
                        });
                    }
                }
                for node in nodes {
                    if node.derivatives.len() != depth
                        || node.derivatives.iter().any(|d| d.len() != p)
                    {
                        return Err(Error::InvalidArgument {
                            context: "Reference::Sampled".to_string(),
                            reason: "ragged derivative data".to_string(),
                        });
                    }
                    if node
                        .derivatives
                        .iter()
                        .flatten()
                        .any(|v| !v.is_finite())
                    {
                        return Err(Error::NonFinite {
                            context: "sampled reference data".to_string(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Jet of the reference at time t: a p x 1 column jet of the given order.
    pub fn jet(&self, t: f64, order: usize) -> Result<MatJet> {
        match self {
            Reference::Sinusoid { channels } => {
                let p = channels.len();
                let mut coeffs = vec![DMatrix::zeros(p, 1); order + 1];
                for (i, ch) in channels.iter().enumerate() {
                    // d^k/dt^k [A sin(wt + ph)] = A w^k sin(wt + ph + k pi/2).
                    let mut pow = 1.0;
                    for (k, c) in coeffs.iter_mut().enumerate() {
                        let arg = ch.omega * t + ch.phase + k as f64 * std::f64::consts::FRAC_PI_2;
                        c[(i, 0)] = ch.amplitude * pow * arg.sin();
                        pow *= ch.omega;
                    }
                    coeffs[0][(i, 0)] += ch.offset;
                }
                MatJet::from_coeffs(coeffs)
            }
            Reference::Sampled { nodes } => self.sampled_jet(nodes, t, order),
        }
    }

    /// Value of the reference at time t.
    pub fn value(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.jet(t, 0)?.coeffs[0].clone())
    }

    fn sampled_jet(&self, nodes: &[SampleNode], t: f64, order: usize) -> Result<MatJet> {
        // Clamp to the sampled span, then find the bracketing segment.
        let first = &nodes[0];
        let last = &nodes[nodes.len() - 1];
        if t < first.t - 1e-9 || t > last.t + 1e-9 {
            return Err(Error::InvalidArgument {
                context: "Reference::Sampled".to_string(),
                reason: format!(
                    "time {t} outside the sampled span [{}, {}]",
                    first.t, last.t
                ),
            });
        }
        let seg = nodes
            .windows(2)
            .position(|w| t <= w[1].t)
            .unwrap_or(nodes.len() - 2);
        let (a, b) = (&nodes[seg], &nodes[seg + 1]);
        let depth = a.derivatives.len(); // derivative levels per node
        let p = self.dim();

        // Two-point interpolation with full derivative matching on both ends
        // via Newton divided differences on repeated nodes:
        // for a node repeated j+1 times, dd = f^{(j)} / j!.
        let m = 2 * depth; // polynomial degree m - 1
        let mut zs = vec![a.t; depth];
        zs.extend(std::iter::repeat(b.t).take(depth));

        let mut coeffs = vec![DMatrix::zeros(p, 1); order + 1];
        for ch in 0..p {
            // Divided-difference table, column by column.
            let mut dd: Vec<f64> = (0..m)
                .map(|i| {
                    if i < depth {
                        a.derivatives[0][ch]
                    } else {
                        b.derivatives[0][ch]
                    }
                })
                .collect();
            let mut newton = vec![dd[0]];
            let mut fact = 1.0;
            for level in 1..m {
                fact *= level as f64;
                let mut next = Vec::with_capacity(m - level);
                for i in 0..m - level {
                    let dz = zs[i + level] - zs[i];
                    if dz.abs() < 1e-300 {
                        // All nodes in the window coincide: confluent entry
                        // f^{(level)} / level!.
                        let node = if i < depth.saturating_sub(level) { a } else { b };
                        next.push(node.derivatives[level][ch] / fact);
                    } else {
                        next.push((dd[i + 1] - dd[i]) / dz);
                    }
                }
                dd = next;
                newton.push(dd[0]);
            }

            // Evaluate the Newton form at a time jet to get derivatives:
            // P = c_0 + (x - z_0)(c_1 + (x - z_1)(c_2 + ...)).
            let x = ScalarJet::variable(t, order);
            let mut acc = ScalarJet::constant(newton[m - 1], order);
            for j in (0..m - 1).rev() {
                let shift = x.sub(&ScalarJet::constant(zs[j], order));
                acc = acc.mul(&shift).add(&ScalarJet::constant(newton[j], order));
            }
            for (k, c) in coeffs.iter_mut().enumerate() {
                c[(ch, 0)] = acc.coeffs[k];
            }
        }
        MatJet::from_coeffs(coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn boeing_reference() -> Reference {
        Reference::Sinusoid {
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
                    phase: std::f64::consts::FRAC_PI_2,
                    offset: 0.0,
                },
            ],
        }
    }

    #[test]
    fn sinusoid_values_and_derivatives() {
        // (2 sin t, cos t) at t = 0: value (0, 1), derivative (2, 0),
        // second derivative (0, -1).
        let reference = boeing_reference();
        let j = reference.jet(0.0, 2).unwrap();
        assert_relative_eq!(j.coeffs[0][(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[0][(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[1][(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[1][(1, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[2][(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[2][(1, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn sinusoid_offset_only_in_value() {
        let reference = Reference::Sinusoid {
            channels: vec![SinusoidChannel {
                amplitude: 1.0,
                omega: 2.0,
                phase: 0.0,
                offset: 5.0,
            }],
        };
        let j = reference.jet(0.0, 1).unwrap();
        assert_relative_eq!(j.coeffs[0][(0, 0)], 5.0, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs[1][(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_reproduces_cubic_exactly() {
        // y = t^3 sampled with first derivatives at t = 0, 2: the two-point
        // interpolant is the unique cubic through that data, i.e. t^3 itself.
        let reference = Reference::Sampled {
            nodes: vec![
                SampleNode {
                    t: 0.0,
                    derivatives: vec![vec![0.0], vec![0.0]],
                },
                SampleNode {
                    t: 2.0,
                    derivatives: vec![vec![8.0], vec![12.0]],
                },
            ],
        };
        reference.validate(1).unwrap();
        let j = reference.jet(1.0, 1).unwrap();
        assert_relative_eq!(j.coeffs[0][(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j.coeffs[1][(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_matches_node_data_at_nodes() {
        let reference = Reference::Sampled {
            nodes: vec![
                SampleNode {
                    t: 0.0,
                    derivatives: vec![vec![1.0, -1.0], vec![0.5, 2.0]],
                },
                SampleNode {
                    t: 1.0,
                    derivatives: vec![vec![2.0, 0.0], vec![-0.5, 1.0]],
                },
            ],
        };
        let j0 = reference.jet(0.0, 1).unwrap();
        assert_relative_eq!(j0.coeffs[0][(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j0.coeffs[0][(1, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(j0.coeffs[1][(0, 0)], 0.5, epsilon = 1e-12);
        let j1 = reference.jet(1.0, 1).unwrap();
        assert_relative_eq!(j1.coeffs[0][(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(j1.coeffs[1][(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_rejects_bad_data() {
        // Single node.
        let one = Reference::Sampled {
            nodes: vec![SampleNode {
                t: 0.0,
                derivatives: vec![vec![0.0]],
            }],
        };
        assert!(one.validate(0).is_err());
        // Non-increasing times.
        let swapped = Reference::Sampled {
            nodes: vec![
                SampleNode {
                    t: 1.0,
                    derivatives: vec![vec![0.0]],
                },
                SampleNode {
                    t: 0.0,
                    derivatives: vec![vec![0.0]],
                },
            ],
        };
        assert!(swapped.validate(0).is_err());
        // Not enough derivative depth for a second-order cascade.
        let shallow = Reference::Sampled {
            nodes: vec![
                SampleNode {
                    t: 0.0,
                    derivatives: vec![vec![0.0]],
                },
                SampleNode {
                    t: 1.0,
                    derivatives: vec![vec![0.0]],
                },
            ],
        };
        assert!(shallow.validate(1).is_err());
    }

    #[test]
    fn sampled_out_of_span_is_rejected() {
        let reference = Reference::Sampled {
            nodes: vec![
                SampleNode {
                    t: 0.0,
                    derivatives: vec![vec![0.0], vec![0.0]],
                },
                SampleNode {
                    t: 1.0,
                    derivatives: vec![vec![1.0], vec![1.0]],
                },
            ],
        };
        assert!(reference.jet(2.0, 1).is_err());
    }
}
