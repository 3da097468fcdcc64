//! Monte Carlo harmonic measure by walk-on-spheres.
//!
//! The harmonic measure `ω_j(z)` is the probability that Brownian motion
//! started at `z` first exits the domain through slit `A_j`.  This module
//! estimates those exit probabilities directly by simulating walks, which
//! provides an oracle fully independent of both the collocation machinery
//! and the grid solver.
//!
//! Away from the slits a walk jumps to a uniform point on the largest
//! disk contained in the domain — the exact exit law of Brownian motion
//! from a disk, so these jumps introduce no bias.  Near a slit, spheres
//! become inefficient and a thin arc is easy to step across, so the walk
//! switches to small Gaussian increments and every increment segment is
//! tested for crossings against each arc (a quadratic in the step
//! parameter for the radius crossing, plus an angular containment check).
//! Walks terminate on the circle or a slit when within an absorption
//! distance `ε`, or at a detected crossing.
//!
//! Walks are independent; each draws its randomness from a counter-mode
//! generator seeded by the experiment seed and the walk index, so results
//! are reproducible regardless of how the loop is scheduled.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{angle_in_arc, point_arc_distance, StandardDomain};

/// Absorption distance for boundary contact.
const EPS_ABS: f64 = 1e-4;
/// Slit distance below which the walk leaves sphere mode.
const NEAR_SLIT: f64 = 0.02;
/// Fixed Gaussian step scale in near-slit mode.
const NEAR_STEP: f64 = NEAR_SLIT / 16.0;
/// Step budget per walk before it is declared lost.
const MAX_STEPS: usize = 2_000_000;

/// Exit statistics of a batch of walks.
#[derive(Debug, Clone)]
pub struct WalkEstimate {
    /// First-contact counts per slit.
    pub slit_hits: Vec<u64>,
    /// First-contact count on the unit circle.
    pub circle_hits: u64,
    /// Total walks simulated.
    pub walks: u64,
    /// Walks abandoned after the step budget (should be zero).
    pub lost: u64,
}

impl WalkEstimate {
    /// Hitting frequency of slit `j`.
    pub fn frequency(&self, j: usize) -> f64 {
        self.slit_hits[j] as f64 / self.walks as f64
    }

    /// Binomial standard error of the slit-`j` frequency.
    pub fn std_err(&self, j: usize) -> f64 {
        let p = self.frequency(j);
        (p * (1.0 - p) / self.walks as f64).sqrt()
    }

    /// Hitting frequency of the unit circle.
    pub fn circle_frequency(&self) -> f64 {
        self.circle_hits as f64 / self.walks as f64
    }
}

enum Exit {
    Circle,
    Slit(usize),
    Lost,
}

/// Estimates the harmonic measures of all slits at `z` from `walks`
/// Brownian walks.  The returned frequencies and the circle frequency sum
/// to one exactly (every walk exits somewhere or is counted as lost).
pub fn brownian_harmonic_measure(
    domain: &StandardDomain,
    z: Complex64,
    walks: u64,
    seed: u64,
) -> WalkEstimate {
    let nsl = domain.num_slits();
    let (slit_hits, circle_hits, lost) = (0..walks)
        .into_par_iter()
        .fold(
            || (vec![0u64; nsl], 0u64, 0u64),
            |(mut sh, mut ch, mut lost), widx| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(widx);
                match single_walk(domain, z, &mut rng) {
                    Exit::Circle => ch += 1,
                    Exit::Slit(j) => sh[j] += 1,
                    Exit::Lost => lost += 1,
                }
                (sh, ch, lost)
            },
        )
        .reduce(
            || (vec![0u64; nsl], 0u64, 0u64),
            |(mut a, ac, al), (b, bc, bl)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
                (a, ac + bc, al + bl)
            },
        );
    WalkEstimate {
        slit_hits,
        circle_hits,
        walks,
        lost,
    }
}

fn single_walk(domain: &StandardDomain, start: Complex64, rng: &mut ChaCha8Rng) -> Exit {
    let m = domain.moduli();
    let mut z = start;
    for _ in 0..MAX_STEPS {
        let dc = 1.0 - z.norm();
        let ds = domain.slit_distance(z);
        if dc <= EPS_ABS {
            return Exit::Circle;
        }
        if ds <= EPS_ABS {
            return Exit::Slit(nearest_slit(domain, z));
        }
        if ds > NEAR_SLIT {
            // Sphere jump: exact exit law, radius limited by the boundary.
            let r = dc.min(ds);
            let ang = 2.0 * PI * rng.gen::<f64>();
            z += Complex64::from_polar(r, ang);
        } else {
            // Near-slit diffusion with crossing detection.
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            let dz = Complex64::new(NEAR_STEP * g1, NEAR_STEP * g2);
            if let Some(j) = first_arc_crossing(m.num_slits(), domain, z, dz) {
                return Exit::Slit(j);
            }
            z += dz;
            if z.norm() >= 1.0 {
                return Exit::Circle;
            }
        }
    }
    Exit::Lost
}

fn nearest_slit(domain: &StandardDomain, z: Complex64) -> usize {
    let m = domain.moduli();
    let mut best = (f64::INFINITY, 0);
    for j in 0..m.num_slits() {
        let d = point_arc_distance(z, m.m[j], m.theta[j], m.theta_prime[j]);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// First slit crossed by the segment `z → z + dz`, if any.
fn first_arc_crossing(
    nsl: usize,
    domain: &StandardDomain,
    z: Complex64,
    dz: Complex64,
) -> Option<usize> {
    let m = domain.moduli();
    let mut best: Option<(f64, usize)> = None;
    let a = dz.norm_sqr();
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * (z.conj() * dz).re;
    for j in 0..nsl {
        let c = z.norm_sqr() - m.m[j] * m.m[j];
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for u in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
            if u <= 0.0 || u > 1.0 {
                continue;
            }
            let hit = z + u * dz;
            if angle_in_arc(hit.arg(), m.theta[j], m.theta_prime[j])
                && best.map_or(true, |(ub, _)| u < ub)
            {
                best = Some((u, j));
            }
        }
    }
    best.map(|(_, j)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Moduli;
    use crate::kernel::build_domain_functions;

    #[test]
    fn disk_walks_all_exit_through_circle() {
        let dom = StandardDomain::new(Moduli::disk()).unwrap();
        let est = brownian_harmonic_measure(&dom, Complex64::new(0.3, 0.1), 2000, 7);
        assert!(est.slit_hits.is_empty());
        assert_eq!(est.circle_hits, 2000);
        assert_eq!(est.lost, 0);
        assert!((est.circle_frequency() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frequencies_are_exhaustive() {
        let dom =
            StandardDomain::new(Moduli::new(vec![0.5], vec![0.6], vec![2.1])).unwrap();
        let est = brownian_harmonic_measure(&dom, Complex64::new(0.1, 0.2), 5000, 11);
        let total: u64 = est.slit_hits.iter().sum::<u64>() + est.circle_hits + est.lost;
        assert_eq!(total, 5000);
        assert_eq!(est.lost, 0);
    }

    #[test]
    fn walk_estimate_matches_collocation_measure() {
        let dom =
            StandardDomain::new(Moduli::new(vec![0.5], vec![0.6], vec![2.1])).unwrap();
        let fns = build_domain_functions(&dom, 1e-8, 16).unwrap();
        let z = Complex64::new(0.1, 0.2);
        let est = brownian_harmonic_measure(&dom, z, 40_000, 1234);
        let reference = fns.harmonic_measure(z, 0).unwrap();
        let dev = (est.frequency(0) - reference).abs();
        let budget = 3.0 * est.std_err(0) + 2e-3;
        assert!(
            dev <= budget,
            "walks {} vs collocation {} (dev {dev:.4}, budget {budget:.4})",
            est.frequency(0),
            reference
        );
        assert_eq!(est.lost, 0);
    }

    #[test]
    fn seeding_is_deterministic() {
        let dom =
            StandardDomain::new(Moduli::new(vec![0.4], vec![1.0], vec![1.9])).unwrap();
        let z = Complex64::new(-0.2, 0.1);
        let a = brownian_harmonic_measure(&dom, z, 3000, 99);
        let b = brownian_harmonic_measure(&dom, z, 3000, 99);
        assert_eq!(a.slit_hits, b.slit_hits);
        assert_eq!(a.circle_hits, b.circle_hits);
        let c = brownian_harmonic_measure(&dom, z, 3000, 100);
        assert_ne!(a.slit_hits, c.slit_hits);
    }

    #[test]
    fn two_slit_measures_split_sensibly() {
        // Two symmetric slits: measures at the origin must be equal within
        // Monte Carlo error, and each well below circle measure.
        let dom = StandardDomain::new(Moduli::new(
            vec![0.5, 0.5],
            vec![0.3, PI + 0.3],
            vec![1.3, PI + 1.3],
        ))
        .unwrap();
        let est =
            brownian_harmonic_measure(&dom, Complex64::new(0.0, 0.0), 20_000, 5);
        let f0 = est.frequency(0);
        let f1 = est.frequency(1);
        assert!((f0 - f1).abs() < 4.0 * (est.std_err(0) + est.std_err(1)) + 1e-3);
        assert!(f0 > 0.05 && f0 < 0.5);
    }
}
