//! Error-function evaluations and their derivative jets.
//!
//! erfc'(t) = -(2/sqrt(pi)) e^{-t^2}, and every higher derivative is a
//! polynomial multiple of e^{-t^2}: erfc^(k)(t) = -(2/sqrt(pi)) p_{k-1}(t)
//! e^{-t^2} with p_0 = 1 and p_{j+1} = p_j' - 2 t p_j (the Hermite-polynomial
//! recursion up to sign).

use std::f64::consts::PI;

use crate::numkit::jet::ScalarJet;

/// erf(t) via the statistical special-function crate.
pub fn erf(t: f64) -> f64 {
    statrs::function::erf::erf(t)
}

/// erfc(t) = 1 - erf(t), computed without cancellation for large t.
pub fn erfc(t: f64) -> f64 {
    statrs::function::erf::erfc(t)
}

/// Evaluate p_{k}(t) for k = 0..=max via p_{j+1} = p_j' - 2 t p_j,
/// returning the polynomial values at t (not the coefficient lists).
fn hermite_like_values(t: f64, max: usize) -> Vec<f64> {
    // Work with coefficient vectors (lowest degree first) so the derivative
    // is exact; degrees stay tiny (max is the jet order, typically <= 4).
    let mut polys: Vec<Vec<f64>> = Vec::with_capacity(max + 1);
    polys.push(vec![1.0]);
    for j in 0..max {
        let p = &polys[j];
        // p' coefficients.
        let mut next = vec![0.0; p.len() + 1];
        for (d, c) in p.iter().enumerate().skip(1) {
            next[d - 1] += c * d as f64;
        }
        // -2 t p coefficients.
        for (d, c) in p.iter().enumerate() {
            next[d + 1] += -2.0 * c;
        }
        polys.push(next);
    }
    polys
        .iter()
        .map(|p| p.iter().rev().fold(0.0, |acc, c| acc * t + c))
        .collect()
}

/// Jet of erfc at t: (erfc(t), erfc'(t), ..., erfc^(order)(t)).
pub fn erfc_jet(t: f64, order: usize) -> ScalarJet {
    let mut coeffs = vec![0.0; order + 1];
    coeffs[0] = erfc(t);
    if order >= 1 {
        let gauss = (-t * t).exp(); // underflows to 0 for |t| >~ 27; jets follow suit
        let scale = -2.0 / PI.sqrt() * gauss;
        let poly = hermite_like_values(t, order - 1);
        for k in 1..=order {
            coeffs[k] = scale * poly[k - 1];
        }
    }
    ScalarJet::from_coeffs(coeffs)
}

/// Jet of erf at t (erf = 1 - erfc, so derivatives flip sign).
pub fn erf_jet(t: f64, order: usize) -> ScalarJet {
    let c = erfc_jet(t, order);
    let mut coeffs = c.coeffs;
    coeffs[0] = erf(t);
    for v in coeffs.iter_mut().skip(1) {
        *v = -*v;
    }
    ScalarJet::from_coeffs(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn erfc_reference_values() {
        assert_relative_eq!(erfc(0.0), 1.0, epsilon = 1e-15);
        // The backend's rational approximation is good to ~1e-11 relative.
        assert_relative_eq!(erfc(1.0), 0.15729920705028513, epsilon = 1e-10);
        assert_relative_eq!(erf(1.0) + erfc(1.0), 1.0, epsilon = 1e-15);
        // Saturated tails: erfc(-x) -> 2 and erfc(x) -> 0 for large x.
        assert_relative_eq!(erfc(-600.0), 2.0, epsilon = 1e-15);
        assert!(erfc(600.0).abs() < 1e-300);
    }

    #[test]
    fn erfc_jet_first_derivative() {
        // erfc'(t) = -(2/sqrt(pi)) e^{-t^2}.
        let j = erfc_jet(0.5, 1);
        let expected = -2.0 / PI.sqrt() * (-0.25_f64).exp();
        assert_relative_eq!(j.coeffs[1], expected, epsilon = 1e-14);
    }

    #[test]
    fn erfc_jet_second_derivative() {
        // erfc''(t) = (4t/sqrt(pi)) e^{-t^2} (p_1 = -2t).
        let t = 0.7;
        let j = erfc_jet(t, 2);
        let expected = 4.0 * t / PI.sqrt() * (-t * t).exp();
        assert_relative_eq!(j.coeffs[2], expected, epsilon = 1e-14);
    }

    #[test]
    fn erfc_jet_matches_finite_differences() {
        let t = 1.3;
        let h = 1e-5;
        let j = erfc_jet(t, 2);
        let fd1 = (erfc(t + h) - erfc(t - h)) / (2.0 * h);
        let fd2 = (erfc(t + h) - 2.0 * erfc(t) + erfc(t - h)) / (h * h);
        assert_relative_eq!(j.coeffs[1], fd1, epsilon = 1e-8);
        assert_relative_eq!(j.coeffs[2], fd2, epsilon = 1e-4);
    }

    #[test]
    fn erfc_jet_far_tail_underflows_gracefully() {
        let j = erfc_jet(40.0, 3);
        assert_relative_eq!(j.coeffs[0], 0.0, epsilon = 1e-300);
        for c in &j.coeffs[1..] {
            assert!(c.is_finite());
            assert_relative_eq!(*c, 0.0, epsilon = 1e-300);
        }
    }

    #[test]
    fn erf_jet_is_negated_erfc_derivatives() {
        let je = erf_jet(0.9, 3);
        let jc = erfc_jet(0.9, 3);
        for k in 1..=3 {
            assert_relative_eq!(je.coeffs[k], -jc.coeffs[k], epsilon = 1e-15);
        }
        assert_relative_eq!(je.coeffs[0] + jc.coeffs[0], 1.0, epsilon = 1e-15);
    }
}
