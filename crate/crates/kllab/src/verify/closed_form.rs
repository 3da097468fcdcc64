//! Closed-form solution of the one-slit radial Loewner flow.
//!
//! With no interior slits and a constant driving point the uniformizing
//! map of the growing radial slit satisfies the implicit relation
//!
//! ```text
//!     g/(1-g)² = eᵗ · z/(1-z)²,
//! ```
//!
//! which pins every value of `g_t(z)` without integrating the flow.  The
//! relation is solved here by Newton iteration started at `g = z` (the
//! correct branch at `t = 0`, followed continuously in `t` through the
//! contraction of the iteration).  The corresponding slit grows along a
//! radius toward the point where the relation degenerates; evaluation
//! requests from that ray fail with a branch error.
//!
//! This module is the independent reference for the evolution code: the
//! deterministic one-slit chain must reproduce these values, and the tip
//! and capacity formulas below
//!
//! ```text
//!     a(t) = 2eᵗ - 1 - 2√(e²ᵗ - eᵗ),       eᵗ = (2-ℓ)²/(4(1-ℓ))
//! ```
//!
//! anchor the hull-size bookkeeping of the variational experiments.

use num_complex::Complex64;

use crate::{KlError, Result};

pub use crate::kernel::canonical::{spoke_capacity, spoke_tip_radius};

/// Solves `g/(1-g)² = eᵗ z/(1-z)²` by Newton iteration from `g = z`.
///
/// Fails with a branch error when the iteration leaves the closed disk or
/// stalls, which happens for `z` on or near the grown slit.
pub fn radial_loewner_closed_form(t: f64, z: Complex64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    if (z - one).norm() < 1e-12 {
        // The driving point itself is a fixed point of the relation.
        return Ok(one);
    }
    let target = t.exp() * z / ((one - z) * (one - z));
    let mut g = z;
    for _ in 0..60 {
        let omg = one - g;
        let f = g / (omg * omg) - target;
        if f.norm() <= 1e-13 * (1.0 + target.norm()) {
            if g.norm() > 1.0 + 1e-9 {
                return Err(KlError::BranchFailure(format!(
                    "converged outside the closed disk: |g| = {}",
                    g.norm()
                )));
            }
            return Ok(g);
        }
        // d/dg [g/(1-g)²] = (1+g)/(1-g)³.
        let fp = (one + g) / (omg * omg * omg);
        if fp.norm() < 1e-14 {
            break;
        }
        let mut step = f / fp;
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        g -= step;
        if g.norm() > 2.0 {
            break;
        }
    }
    Err(KlError::BranchFailure(
        "Newton iteration for the implicit relation did not converge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relation_residual(t: f64, z: Complex64, g: Complex64) -> f64 {
        let one = Complex64::new(1.0, 0.0);
        (g / ((one - g) * (one - g)) - t.exp() * z / ((one - z) * (one - z))).norm()
    }

    #[test]
    fn zero_time_is_identity() {
        for &z in &[
            Complex64::new(0.3, 0.4),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, -0.7),
        ] {
            let g = radial_loewner_closed_form(0.0, z).unwrap();
            assert!((g - z).norm() < 1e-12);
        }
    }

    #[test]
    fn origin_is_fixed() {
        for &t in &[0.0, 0.2, 0.7, 1.3] {
            let g = radial_loewner_closed_form(t, Complex64::new(0.0, 0.0)).unwrap();
            assert!(g.norm() < 1e-12);
        }
    }

    #[test]
    fn sample_value_satisfies_relation() {
        let g = radial_loewner_closed_form(0.1, Complex64::new(-0.5, 0.0)).unwrap();
        assert!(relation_residual(0.1, Complex64::new(-0.5, 0.0), g) < 1e-12);
        assert!(g.norm() < 1.0);
    }

    #[test]
    fn interior_samples_stay_in_disk_and_satisfy_relation() {
        for &t in &[0.05, 0.3, 0.8] {
            for &z in &[
                Complex64::new(0.2, 0.5),
                Complex64::new(-0.4, -0.3),
                Complex64::new(0.1, -0.6),
            ] {
                let g = radial_loewner_closed_form(t, z).unwrap();
                assert!(g.norm() <= 1.0 + 1e-12, "t {t} z {z}: |g| = {}", g.norm());
                assert!(relation_residual(t, z, g) < 1e-11);
            }
        }
    }

    #[test]
    fn capacity_tip_consistency() {
        let len = 0.3;
        let t = spoke_capacity(len);
        assert!((spoke_tip_radius(t) - (1.0 - len)).abs() < 1e-12);
    }
}
