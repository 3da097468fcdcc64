//! Standard circular slit disks, their moduli, and hulls.
//!
//! A standard domain of connectivity `n` is the unit disk minus `n - 1`
//! concentric circular arc slits
//!
//! ```text
//!     A_j = { m_j e^{iφ} : θ_j ≤ φ ≤ θ'_j },      j = 1, …, n - 1,
//! ```
//!
//! described by the moduli vector `(m, θ, θ')` of dimension `3(n - 1)`.
//! The admissible region requires `0 < m_j < 1`, `θ_j < θ'_j < θ_j + 2π`,
//! and pairwise disjoint closed arcs.  The origin and the boundary point
//! `1` are marked; both lie in the closure of every admissible domain
//! because the slits are interior arcs.
//!
//! [`Hull`] describes a compact set attached to the outer circle that is to
//! be removed by a canonical map.  Hulls are stored as polylines; the solver
//! currently supports radial segments with one endpoint on the unit circle,
//! which is the class exercised by all experiments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{KlError, Result};

/// Moduli vector of a standard circular slit disk.
///
/// Serialization uses the explicit field names so that domain files are
/// self-describing:
///
/// ```json
/// { "n": 3, "m": [0.5, 0.7], "theta": [0.2, 2.0], "theta_prime": [1.0, 2.9] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moduli {
    /// Connectivity of the domain; the number of slits is `n - 1`.
    pub n: usize,
    /// Slit radii, one per slit.
    pub m: Vec<f64>,
    /// Lower angular endpoints of the slits.
    pub theta: Vec<f64>,
    /// Upper angular endpoints of the slits.
    #[serde(rename = "theta_prime")]
    pub theta_prime: Vec<f64>,
}

impl Moduli {
    /// Moduli of the unit disk (no slits).
    pub fn disk() -> Self {
        Moduli {
            n: 1,
            m: Vec::new(),
            theta: Vec::new(),
            theta_prime: Vec::new(),
        }
    }

    /// Convenience constructor; `n` is inferred from the slit count.
    pub fn new(m: Vec<f64>, theta: Vec<f64>, theta_prime: Vec<f64>) -> Self {
        Moduli {
            n: m.len() + 1,
            m,
            theta,
            theta_prime,
        }
    }

    /// Number of slits `n - 1`.
    pub fn num_slits(&self) -> usize {
        self.m.len()
    }
}

/// Checks the standard-domain invariants and returns a list of violations;
/// an empty list means the moduli are admissible.
///
/// The checks are, in order: consistent vector lengths, radii strictly
/// inside `(0, 1)`, angular intervals satisfying `θ_j < θ'_j < θ_j + 2π`,
/// and pairwise disjoint closed arcs (two slits can only collide when they
/// sit on the same radius).
pub fn validate_moduli(moduli: &Moduli) -> Vec<String> {
    let mut violations = Vec::new();
    let k = moduli.m.len();
    if moduli.n != k + 1 {
        violations.push(format!(
            "connectivity n = {} inconsistent with {} slit radii",
            moduli.n, k
        ));
    }
    if moduli.theta.len() != k || moduli.theta_prime.len() != k {
        violations.push(format!(
            "length mismatch: m has {}, theta has {}, theta_prime has {}",
            k,
            moduli.theta.len(),
            moduli.theta_prime.len()
        ));
        // Further checks index all three vectors in lockstep.
        return violations;
    }
    for j in 0..k {
        if !(moduli.m[j] > 0.0 && moduli.m[j] < 1.0) || !moduli.m[j].is_finite() {
            violations.push(format!("slit {}: radius m = {} outside (0, 1)", j, moduli.m[j]));
        }
        let (a, b) = (moduli.theta[j], moduli.theta_prime[j]);
        if !(a.is_finite() && b.is_finite()) || !(a < b && b < a + 2.0 * std::f64::consts::PI) {
            violations.push(format!(
                "slit {}: angles (θ, θ') = ({}, {}) violate θ < θ' < θ + 2π",
                j, a, b
            ));
        }
    }
    for j in 0..k {
        for l in (j + 1)..k {
            if moduli.m[j] == moduli.m[l]
                && arcs_overlap(
                    moduli.theta[j],
                    moduli.theta_prime[j],
                    moduli.theta[l],
                    moduli.theta_prime[l],
                )
            {
                violations.push(format!("slits {} and {} intersect", j, l));
            }
        }
    }
    violations
}

/// Wraps an angle into `(-π, π]`.
pub fn canonical_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// Angular distance between two angles, in `[0, π]`.
pub fn arc_distance(a: f64, b: f64) -> f64 {
    canonical_angle(a - b).abs()
}

/// True when the closed angular intervals `[a, a']` and `[b, b']` intersect
/// modulo `2π`.
fn arcs_overlap(a: f64, a_prime: f64, b: f64, b_prime: f64) -> bool {
    // An interval of length < 2π contains angle x iff the forward distance
    // from the left endpoint to x (taken in [0, 2π)) is at most the length.
    let contains = |lo: f64, len: f64, x: f64| (x - lo).rem_euclid(2.0 * std::f64::consts::PI) <= len;
    let la = a_prime - a;
    let lb = b_prime - b;
    contains(a, la, b) || contains(a, la, b_prime) || contains(b, lb, a) || contains(b, lb, a_prime)
}

/// True when angle `x` lies in the closed interval `[lo, hi]` modulo `2π`
/// (the interval length `hi - lo` must be in `[0, 2π)`).
pub fn angle_in_arc(x: f64, lo: f64, hi: f64) -> bool {
    (x - lo).rem_euclid(2.0 * std::f64::consts::PI) <= hi - lo
}

/// Euclidean distance from point `p` to the arc of radius `m` over the
/// closed angular interval `[lo, hi]`.
pub fn point_arc_distance(p: Complex64, m: f64, lo: f64, hi: f64) -> f64 {
    let r = p.norm();
    if r > 0.0 && angle_in_arc(p.arg(), lo, hi) {
        (r - m).abs()
    } else {
        let e0 = m * Complex64::from_polar(1.0, lo);
        let e1 = m * Complex64::from_polar(1.0, hi);
        (p - e0).norm().min((p - e1).norm())
    }
}

/// Euclidean distance between two concentric arcs.
fn arc_arc_distance(m1: f64, lo1: f64, hi1: f64, m2: f64, lo2: f64, hi2: f64) -> f64 {
    if arcs_overlap(lo1, hi1, lo2, hi2) {
        (m1 - m2).abs()
    } else {
        let mut d = f64::INFINITY;
        for &phi in &[lo1, hi1] {
            let e = m1 * Complex64::from_polar(1.0, phi);
            d = d.min(point_arc_distance(e, m2, lo2, hi2));
        }
        for &phi in &[lo2, hi2] {
            let e = m2 * Complex64::from_polar(1.0, phi);
            d = d.min(point_arc_distance(e, m1, lo1, hi1));
        }
        d
    }
}

/// Smallest Euclidean separation in the configuration `(moduli, x)`: the
/// minimum over all slit pairs and over every slit's distance to the
/// driving point `e^{ix}` on the circle.  Returns `+∞` for the disk.
///
/// This is the quantity that controls the conditioning of the collocation
/// solves and the step-size constraints of the evolution.
pub fn min_slit_gap(moduli: &Moduli, x: f64) -> f64 {
    let xi = Complex64::from_polar(1.0, x);
    let k = moduli.m.len();
    let mut gap = f64::INFINITY;
    for j in 0..k {
        gap = gap.min(point_arc_distance(
            xi,
            moduli.m[j],
            moduli.theta[j],
            moduli.theta_prime[j],
        ));
        for l in (j + 1)..k {
            gap = gap.min(arc_arc_distance(
                moduli.m[j],
                moduli.theta[j],
                moduli.theta_prime[j],
                moduli.m[l],
                moduli.theta[l],
                moduli.theta_prime[l],
            ));
        }
    }
    gap
}

/// A validated standard circular slit disk.
#[derive(Debug, Clone)]
pub struct StandardDomain {
    moduli: Moduli,
}

impl StandardDomain {
    /// Validates the moduli and wraps them; returns the violation list on
    /// failure.
    pub fn new(moduli: Moduli) -> Result<Self> {
        let violations = validate_moduli(&moduli);
        if violations.is_empty() {
            Ok(StandardDomain { moduli })
        } else {
            Err(KlError::InvalidModuli(violations))
        }
    }

    /// The underlying moduli.
    pub fn moduli(&self) -> &Moduli {
        &self.moduli
    }

    /// Connectivity `n`.
    pub fn connectivity(&self) -> usize {
        self.moduli.n
    }

    /// Number of slits `n - 1`.
    pub fn num_slits(&self) -> usize {
        self.moduli.num_slits()
    }

    /// True if `z` lies in the open domain, with a safety margin `eps`
    /// around the slits and the circle.
    pub fn contains(&self, z: Complex64, eps: f64) -> bool {
        if z.norm() >= 1.0 - eps {
            return false;
        }
        for j in 0..self.num_slits() {
            if point_arc_distance(z, self.moduli.m[j], self.moduli.theta[j], self.moduli.theta_prime[j])
                <= eps
            {
                return false;
            }
        }
        true
    }

    /// Distance from `z` to the slit system (`+∞` for the disk).
    pub fn slit_distance(&self, z: Complex64) -> f64 {
        let mut d = f64::INFINITY;
        for j in 0..self.num_slits() {
            d = d.min(point_arc_distance(
                z,
                self.moduli.m[j],
                self.moduli.theta[j],
                self.moduli.theta_prime[j],
            ));
        }
        d
    }
}

/// A compact hull attached to the unit circle, stored as a polyline.
///
/// Serialization:
///
/// ```json
/// { "points": [[1.0, 0.0], [0.7, 0.0]] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hull {
    /// Polyline vertices `[x, y]`, outer attachment first.
    pub points: Vec<[f64; 2]>,
}

/// Geometric classification of a hull polyline.
#[derive(Debug, Clone, PartialEq)]
pub enum HullShape {
    /// A straight radial segment `{ r e^{iα} : a ≤ r ≤ 1 }` attached to the
    /// circle at `e^{iα}`.
    RadialSpoke {
        /// Attachment angle `α`.
        angle: f64,
        /// Inner endpoint radius `a < 1`.
        inner_radius: f64,
    },
    /// Any other polyline.
    General,
}

impl Hull {
    /// A radial segment from the circle point `e^{iα}` down to radius `a`.
    pub fn radial_spoke(angle: f64, inner_radius: f64) -> Self {
        let outer = [angle.cos(), angle.sin()];
        let inner = [inner_radius * angle.cos(), inner_radius * angle.sin()];
        Hull {
            points: vec![outer, inner],
        }
    }

    /// Vertices as complex numbers.
    pub fn vertices(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| Complex64::new(p[0], p[1])).collect()
    }

    /// Validates the polyline: at least two vertices, finite coordinates,
    /// no self-intersections, and one endpoint on the unit circle.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let v = self.vertices();
        if v.len() < 2 {
            violations.push("hull polyline needs at least two vertices".into());
            return violations;
        }
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            violations.push("hull polyline has non-finite coordinates".into());
        }
        let tol = 1e-9;
        let on_circle = |z: Complex64| (z.norm() - 1.0).abs() <= tol;
        if !on_circle(v[0]) && !on_circle(*v.last().unwrap()) {
            violations.push("hull polyline is not attached to the unit circle".into());
        }
        for z in &v {
            if z.norm() > 1.0 + tol {
                violations.push("hull polyline leaves the closed unit disk".into());
                break;
            }
        }
        // Non-adjacent segment pairs must not cross.
        for i in 0..v.len().saturating_sub(1) {
            for j in (i + 2)..v.len().saturating_sub(1) {
                if segments_intersect(v[i], v[i + 1], v[j], v[j + 1]) {
                    violations.push(format!("hull segments {} and {} intersect", i, j));
                }
            }
        }
        violations
    }

    /// Classifies the polyline, detecting radial spokes up to tolerance.
    pub fn shape(&self) -> HullShape {
        let v = self.vertices();
        if v.len() < 2 {
            return HullShape::General;
        }
        let tol = 1e-9;
        // Normalize so that the first vertex is the circle attachment.
        let (outer, rest): (Complex64, Vec<Complex64>) =
            if (v[0].norm() - 1.0).abs() <= tol {
                (v[0], v[1..].to_vec())
            } else if (v.last().unwrap().norm() - 1.0).abs() <= tol {
                let mut r = v[..v.len() - 1].to_vec();
                r.reverse();
                (*v.last().unwrap(), r)
            } else {
                return HullShape::General;
            };
        let angle = outer.arg();
        let dir = Complex64::from_polar(1.0, angle);
        let mut inner_radius = 1.0f64;
        for z in &rest {
            // Component transverse to the ray must vanish and the radial
            // component must stay in (0, 1).
            let s = (z * dir.conj()).re;
            let t = (z * dir.conj()).im;
            if t.abs() > 1e-9 || s <= 0.0 || s >= 1.0 + tol {
                return HullShape::General;
            }
            inner_radius = inner_radius.min(s);
        }
        if inner_radius >= 1.0 {
            return HullShape::General;
        }
        HullShape::RadialSpoke {
            angle,
            inner_radius,
        }
    }
}

/// Proper intersection test for closed segments `p0p1` and `q0q1`.
fn segments_intersect(p0: Complex64, p1: Complex64, q0: Complex64, q1: Complex64) -> bool {
    let cross = |a: Complex64, b: Complex64| a.re * b.im - a.im * b.re;
    let d1 = cross(p1 - p0, q0 - p0);
    let d2 = cross(p1 - p0, q1 - p0);
    let d3 = cross(q1 - q0, p0 - q0);
    let d4 = cross(q1 - q0, p1 - q0);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disk_moduli_are_valid() {
        assert!(validate_moduli(&Moduli::disk()).is_empty());
    }

    #[test]
    fn admissible_two_slit_moduli_are_valid() {
        let m = Moduli::new(vec![0.5, 0.7], vec![0.2, 2.0], vec![1.0, 2.9]);
        assert!(validate_moduli(&m).is_empty());
        assert!(StandardDomain::new(m).is_ok());
    }

    #[test]
    fn invalid_radius_is_reported() {
        let m = Moduli::new(vec![1.2], vec![0.0], vec![1.0]);
        let v = validate_moduli(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("radius"));
    }

    #[test]
    fn reversed_angles_are_reported() {
        let m = Moduli::new(vec![0.5], vec![1.0], vec![0.5]);
        assert!(!validate_moduli(&m).is_empty());
    }

    #[test]
    fn full_circle_slit_is_reported() {
        let m = Moduli::new(vec![0.5], vec![0.0], vec![2.0 * PI]);
        assert!(!validate_moduli(&m).is_empty());
    }

    #[test]
    fn same_radius_overlapping_slits_are_reported() {
        let m = Moduli::new(vec![0.5, 0.5], vec![0.0, 0.5], vec![1.0, 1.5]);
        let v = validate_moduli(&m);
        assert!(v.iter().any(|s| s.contains("intersect")));
        // Different radii with the same angles are fine.
        let m = Moduli::new(vec![0.5, 0.6], vec![0.0, 0.5], vec![1.0, 1.5]);
        assert!(validate_moduli(&m).is_empty());
    }

    #[test]
    fn inconsistent_connectivity_is_reported() {
        let m = Moduli {
            n: 3,
            m: vec![0.5],
            theta: vec![0.0],
            theta_prime: vec![1.0],
        };
        assert!(!validate_moduli(&m).is_empty());
    }

    #[test]
    fn gap_for_slit_facing_driving_point() {
        let m = Moduli::new(vec![0.5], vec![0.0], vec![PI / 2.0]);
        let g = min_slit_gap(&m, 0.0);
        assert!((g - 0.5).abs() < 1e-12, "gap = {g}");
    }

    #[test]
    fn gap_for_slit_offset_from_driving_point() {
        let m = Moduli::new(vec![0.5], vec![PI / 2.0], vec![PI]);
        let g = min_slit_gap(&m, 0.0);
        assert!((g - 1.25_f64.sqrt()).abs() < 1e-12, "gap = {g}");
    }

    #[test]
    fn gap_is_infinite_for_disk() {
        assert_eq!(min_slit_gap(&Moduli::disk(), 0.3), f64::INFINITY);
    }

    #[test]
    fn slit_pair_gap_uses_radial_distance_on_overlap() {
        let m = Moduli::new(vec![0.4, 0.6], vec![0.0, 0.2], vec![1.0, 1.2]);
        // Angular intervals overlap, so the pair distance is 0.2; the
        // driving point at angle π is far away.
        let g = min_slit_gap(&m, PI);
        assert!((g - 0.2).abs() < 1e-12, "gap = {g}");
    }

    #[test]
    fn moduli_json_roundtrip() {
        let m = Moduli::new(vec![0.5, 0.7], vec![0.2, 2.0], vec![1.0, 2.9]);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"theta_prime\""));
        let back: Moduli = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn moduli_json_field_names() {
        let s = r#"{ "n": 2, "m": [0.5], "theta": [0.1], "theta_prime": [0.9] }"#;
        let m: Moduli = serde_json::from_str(s).unwrap();
        assert_eq!(m.n, 2);
        assert!(validate_moduli(&m).is_empty());
    }

    #[test]
    fn angle_helpers() {
        assert!((canonical_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((arc_distance(0.1, 2.0 * PI - 0.1) - 0.2).abs() < 1e-12);
        assert!(angle_in_arc(0.5, 0.0, 1.0));
        assert!(angle_in_arc(0.1 - 2.0 * PI, 0.0, 1.0));
        assert!(!angle_in_arc(1.5, 0.0, 1.0));
    }

    #[test]
    fn radial_spoke_detection() {
        let h = Hull::radial_spoke(PI, 0.7);
        assert!(h.validate().is_empty());
        match h.shape() {
            HullShape::RadialSpoke {
                angle,
                inner_radius,
            } => {
                assert!((canonical_angle(angle - PI)).abs() < 1e-12);
                assert!((inner_radius - 0.7).abs() < 1e-12);
            }
            other => panic!("expected radial spoke, got {other:?}"),
        }
    }

    #[test]
    fn bent_polyline_is_general() {
        let h = Hull {
            points: vec![[1.0, 0.0], [0.8, 0.1], [0.7, 0.0]],
        };
        assert!(h.validate().is_empty());
        assert_eq!(h.shape(), HullShape::General);
    }

    #[test]
    fn detached_polyline_is_invalid() {
        let h = Hull {
            points: vec![[0.5, 0.0], [0.3, 0.0]],
        };
        assert!(!h.validate().is_empty());
    }

    #[test]
    fn self_intersecting_polyline_is_invalid() {
        let h = Hull {
            points: vec![[1.0, 0.0], [0.5, 0.1], [0.9, 0.1], [0.7, -0.1]],
        };
        assert!(h
            .validate()
            .iter()
            .any(|s| s.contains("intersect")));
    }

    #[test]
    fn hull_json_roundtrip() {
        let h = Hull::radial_spoke(0.0, 0.7);
        let s = serde_json::to_string(&h).unwrap();
        let back: Hull = serde_json::from_str(&s).unwrap();
        assert_eq!(h, back);
    }
}
