//! Boundary-variation check of the canonical-map derivative.
//!
//! Grow a small radial hull `B_eps` of length `eps` at a circle point
//! `xi = e^{ix}` of a standard domain `E`, and watch two scalar
//! functionals of the origin respond: the conformal radius
//! `r(0)` and the domain constant `d(0)`.  Both increments are of order
//! `eps^2` (a boundary hull of diameter `eps` carries capacity
//! `~ eps^2/4`).  Now repeat the growth inside the image domain
//! `E* = Phi_A(E \ A)` of a second, fixed hull `A`.  First-order
//! perturbation theory for the Green function says the two responses
//! differ asymptotically by the conformal stretch at the insertion
//! point:
//!
//! ```text
//!   [r*(0) increment] / [r(0) increment]  ->  |Phi_A'(xi)|^2 ,
//!   [d*(0) increment] / [d(0) increment]  ->  |Phi_A'(xi)|^2 ,
//! ```
//!
//! as `eps -> 0`.  The experiment measures both ratios along a ladder of
//! `eps` values and compares against the canonical-map derivative
//! (closed form when `E` is the disk and `A` a single radial spoke,
//! numeric otherwise).
//!
//! # Staying in one plane
//!
//! The image increments never require mapping `B_eps` forward (its image
//! would be a curved hull outside the radial-spoke class).  Because the
//! composition of canonical maps is the canonical map of the composite
//! domain, the image-side increments equal plain differences in the
//! original plane:
//!
//! ```text
//!   r*_{E* \ B*}(0) - r*_{E*}(0) = r_{E \ A \ B}(0) - r_{E \ A}(0),
//!   d*_{E* \ B*}(0) - d*_{E*}(0) = d_{E \ A \ B}(0) - d_{E \ A}(0),
//! ```
//!
//! so every solve happens on radial-spoke hulls in `E`.
//!
//! # Beating cancellation
//!
//! Subtracting two independently solved potentials of size `O(1)` to
//! extract an `O(eps^2)` difference would drown the signal in solver
//! error.  Instead each increment is obtained from a *correction solve*:
//! the difference of the two potentials is itself harmonic, vanishes on
//! every boundary piece except the sides of `B_eps`, and carries data of
//! size `O(eps)` there.  Its value at the origin *is* the increment, and
//! the collocation error scales with the small data, not with the large
//! potentials.  When the increments sink below the solver's accuracy
//! floor the experiment refuses to report a ratio and fails with an
//! increment-underflow error instead.


use std::time::Instant;

use num_complex::Complex64;

use crate::domain::{canonical_angle, Hull, HullShape, StandardDomain};
use crate::kernel::canonical::{
    spoke_capacity, BoundaryPoint, CanonicalMap, HullDomainSolver, HullSolverParams,
    SlitCondition,
};
use crate::kernel::{build_domain_functions, DEFAULT_K};
use crate::verify::{ExperimentReport, ReportEntry};
use crate::{KlError, Result};

/// Relative tolerance on the drift between ratios at successive hull
/// sizes; the ladder must look like a converging (Cauchy) sequence.
pub const CAUCHY_TOL: f64 = 0.10;

/// Measured increments and ratios at one hull size.
#[derive(Debug, Clone, Copy)]
struct RungResult {
    eps: f64,
    ratio_r: f64,
    ratio_d: f64,
}

/// Runs the boundary-variation experiment.
///
/// * `domain` — the standard domain `E`.
/// * `hull_a` — the fixed hull `A` (``None`` means the identity map, for
///   which both ratios are exactly one).
/// * `x` — boundary angle of the insertion point `xi = e^{ix}`.
/// * `epsilons` — hull lengths to probe; processed largest-first.
/// * `ratio_tol` — relative tolerance on the ratio at the *smallest*
///   hull size against `|Phi_A'(xi)|^2`.
/// * `tol` — boundary tolerance handed to the collocation solvers.
pub fn hadamard_ratio_experiment(
    domain: &StandardDomain,
    hull_a: Option<&Hull>,
    x: f64,
    epsilons: &[f64],
    ratio_tol: f64,
    tol: f64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if epsilons.is_empty() {
        return Err(KlError::InvalidModuli(vec![
            "boundary-variation experiment needs at least one hull size".into(),
        ]));
    }
    let mut eps_sorted = epsilons.to_vec();
    eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if eps_sorted[0] > 0.05 || *eps_sorted.last().unwrap() <= 0.0 {
        return Err(KlError::InvalidModuli(vec![format!(
            "hull sizes must lie in (0, 0.05], got {eps_sorted:?}"
        )]));
    }
    if let Some(a) = hull_a {
        if let HullShape::RadialSpoke { angle, .. } = a.shape() {
            if canonical_angle(angle - x).abs() < 0.2 {
                return Err(KlError::UnsupportedHull(format!(
                    "insertion angle {x} lies within 0.2 of the hull attachment {angle}"
                )));
            }
        }
    }

    let params = HullSolverParams {
        tol,
        ..HullSolverParams::default()
    };
    let moduli = domain.moduli().clone();
    let is_disk = domain.num_slits() == 0;

    // Reference conformal stretch at the insertion point.
    let xi = Complex64::from_polar(1.0, x);
    let (phi_sq, phi_source) = match hull_a {
        None => (1.0, "identity map".to_string()),
        Some(a) => {
            let cmap = CanonicalMap::build(domain, std::slice::from_ref(a), tol)?;
            let d = cmap.dphi(xi)?;
            let source = if is_disk {
                "closed-form spoke-map derivative".to_string()
            } else {
                "canonical-map derivative at the boundary point".to_string()
            };
            (d.norm_sqr(), source)
        }
    };

    // Hull-independent solves: the canonical-map log `p_A = log(Phi_A/z)`
    // and the regular Green part `u_{E\A} = G_{E\A}(., 0) + ln|.|`.
    let pre = match hull_a {
        Some(a) => {
            let solver_a = HullDomainSolver::new(domain, std::slice::from_ref(a), params)?;
            let p_a = solver_a.solve(
                &|bp| match bp {
                    BoundaryPoint::HullSide { z, .. } => -z.norm().ln(),
                    _ => 0.0,
                },
                SlitCondition::FreeConstants,
            )?;
            let m = moduli.clone();
            let u_a = solver_a.solve(
                &|bp| match bp {
                    BoundaryPoint::HullSide { z, .. } => z.norm().ln(),
                    BoundaryPoint::Slit { slit, .. } => m.m[*slit].ln(),
                    BoundaryPoint::Circle { .. } => 0.0,
                },
                SlitCondition::Prescribed,
            )?;
            Some((p_a, u_a))
        }
        None => None,
    };
    // Green function of `E` itself, for the base-plane `d` increment.
    let funcs = if is_disk {
        None
    } else {
        Some(build_domain_functions(domain, tol, DEFAULT_K)?)
    };
    let green_e = funcs
        .as_ref()
        .map(|f| f.green_fn(Complex64::new(0.0, 0.0)))
        .transpose()?;

    let mut rungs: Vec<RungResult> = Vec::new();
    for &eps in &eps_sorted {
        let hull_b = Hull::radial_spoke(x, 1.0 - eps);
        let mut floor = 1e-12_f64;

        // Base-plane increments in E \ B.
        let (dr_e, dd_e) = if is_disk {
            // Exact: the disk minus one spoke is simply connected, where
            // the domain constant and the conformal radius coincide.
            let cap = spoke_capacity(eps);
            (cap, cap)
        } else {
            let solver_b =
                HullDomainSolver::new(domain, std::slice::from_ref(&hull_b), params)?;
            let p_b = solver_b.solve(
                &|bp| match bp {
                    BoundaryPoint::HullSide { z, .. } => -z.norm().ln(),
                    _ => 0.0,
                },
                SlitCondition::FreeConstants,
            )?;
            let green = green_e.as_ref().unwrap();
            let q_d = solver_b.solve(
                &|bp| match bp {
                    BoundaryPoint::HullSide { z, .. } => -green.value(*z),
                    _ => 0.0,
                },
                SlitCondition::Prescribed,
            )?;
            floor = floor.max(10.0 * p_b.residual.max(q_d.residual));
            let origin = Complex64::new(0.0, 0.0);
            (p_b.value(origin), -q_d.value(origin))
        };

        // Image-plane increments, computed as differences in E \ A \ B.
        let (dr_star, dd_star) = match &pre {
            None => (dr_e, dd_e),
            Some((p_a, u_a)) => {
                let hulls = [hull_a.unwrap().clone(), hull_b.clone()];
                let solver_ab = HullDomainSolver::new(domain, &hulls, params)?;
                let q_r = solver_ab.solve(
                    &|bp| match bp {
                        BoundaryPoint::HullSide { hull: 1, z, .. } => {
                            -z.norm().ln() - p_a.value(*z)
                        }
                        _ => 0.0,
                    },
                    SlitCondition::FreeConstants,
                )?;
                // On slits and on the sides of A the two regular Green
                // parts agree, so the correction data vanishes there.
                let q_s = solver_ab.solve(
                    &|bp| match bp {
                        BoundaryPoint::HullSide { hull: 1, z, .. } => {
                            z.norm().ln() - u_a.value(*z)
                        }
                        _ => 0.0,
                    },
                    SlitCondition::Prescribed,
                )?;
                floor = floor.max(10.0 * q_r.residual.max(q_s.residual));
                let origin = Complex64::new(0.0, 0.0);
                (q_r.value(origin), -q_s.value(origin))
            }
        };

        let smallest = dr_e.abs().min(dd_e.abs()).min(dr_star.abs()).min(dd_star.abs());
        if smallest < floor {
            return Err(KlError::IncrementUnderflow {
                delta: smallest,
                floor,
            });
        }
        rungs.push(RungResult {
            eps,
            ratio_r: dr_star / dr_e,
            ratio_d: dd_star / dd_e,
        });
    }

    let mut entries = Vec::new();
    let last = rungs.last().unwrap();
    entries.push(ReportEntry::relative(
        format!("conformal-radius increment ratio at eps = {:.1e}", last.eps),
        last.ratio_r,
        phi_sq,
        phi_source.clone(),
        ratio_tol,
    ));
    entries.push(ReportEntry::relative(
        format!("domain-constant increment ratio at eps = {:.1e}", last.eps),
        last.ratio_d,
        phi_sq,
        phi_source.clone(),
        ratio_tol,
    ));
    for pair in rungs.windows(2) {
        entries.push(ReportEntry::relative(
            format!(
                "radius-ratio drift eps {:.1e} -> {:.1e}",
                pair[0].eps, pair[1].eps
            ),
            pair[1].ratio_r,
            pair[0].ratio_r,
            "ratio at the previous hull size",
            CAUCHY_TOL,
        ));
        entries.push(ReportEntry::relative(
            format!(
                "constant-ratio drift eps {:.1e} -> {:.1e}",
                pair[0].eps, pair[1].eps
            ),
            pair[1].ratio_d,
            pair[0].ratio_d,
            "ratio at the previous hull size",
            CAUCHY_TOL,
        ));
    }

    let parameters = serde_json::json!({
        "moduli": moduli,
        "x": x,
        "epsilons": eps_sorted,
        "hull": hull_a.map(|a| a.points.clone()),
        "ratio_tol": ratio_tol,
        "tol": tol,
        "reference_stretch": phi_sq,
    });
    Ok(ExperimentReport::new(
        "hadamard-ratio",
        parameters,
        entries,
        start.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Moduli;

    fn disk() -> StandardDomain {
        StandardDomain::new(Moduli::new(vec![], vec![], vec![])).unwrap()
    }

    #[test]
    fn empty_hull_gives_unit_ratio() {
        let report =
            hadamard_ratio_experiment(&disk(), None, 1.0, &[5e-3], 1e-12, 1e-8).unwrap();
        assert!(report.passed, "{report:?}");
        for e in &report.entries {
            assert!((e.measured - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn disk_spoke_ratio_matches_closed_form() {
        let domain = disk();
        let hull = Hull::radial_spoke(PI, 0.7);
        let report = hadamard_ratio_experiment(
            &domain,
            Some(&hull),
            0.0,
            &[4e-3, 2e-3],
            0.05,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        // |Phi_A'(1)|^2 = e^{-T0} for a spoke of capacity T0 opposite xi = 1.
        let expected = (-spoke_capacity(0.3)).exp();
        let entry = &report.entries[0];
        assert!(
            (entry.measured - expected).abs() < 0.02 * expected,
            "ratio {} vs closed form {expected}",
            entry.measured
        );
        assert!((entry.reference - expected).abs() < 1e-10);
    }

    #[test]
    fn slit_domain_ratios_form_cauchy_sequence() {
        let domain = StandardDomain::new(Moduli::new(
            vec![0.55],
            vec![3.5],
            vec![4.5],
        ))
        .unwrap();
        let hull = Hull::radial_spoke(2.2, 0.75);
        let report = hadamard_ratio_experiment(
            &domain,
            Some(&hull),
            0.3,
            &[6e-3, 3e-3],
            0.2,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        let ratio = report.entries[0].measured;
        assert!(ratio.is_finite() && ratio > 0.3 && ratio < 2.0, "ratio {ratio}");
    }

    #[test]
    fn vanishing_increment_is_rejected() {
        let err = hadamard_ratio_experiment(&disk(), None, 0.0, &[1e-9], 0.05, 1e-8)
            .unwrap_err();
        match err {
            KlError::IncrementUnderflow { delta, floor } => {
                assert!(delta < floor);
            }
            other => panic!("expected increment underflow, got {other:?}"),
        }
    }
}
