//! Conformal opening map for a single concentric circular arc slit.
//!
//! For a slit `A = { m e^{iφ} : θ ≤ φ ≤ θ' }` the map `φ_A` sends the
//! complement of the slit on the Riemann sphere onto the exterior of the
//! unit circle, `φ_A : ℂ̂ \ A → { |λ| > 1 }`, with the two sides of the
//! slit corresponding to the two halves of the unit circle `λ = e^{is}`.
//! It is assembled from three elementary steps:
//!
//! ```text
//!     w = z e^{-iθ_c} / m          (rotate and scale; the slit becomes
//!                                   the unit arc |ψ| ≤ δ, θ_c = (θ+θ')/2,
//!                                   δ = (θ'-θ)/2)
//!     u = S(w) / (iτ),   S(w) = (w-1)/(w+1),   τ = tan(δ/2)
//!                                  (Cayley; the arc becomes [-1, 1])
//!     λ = Λ(u) = u + √(u-1)·√(u+1) (exterior inverse Joukowski)
//! ```
//!
//! The principal branches make `Λ` the branch with `|Λ| ≥ 1`.  The map has
//! a simple pole at the antipodal point `w₀ = -m e^{iθ_c}` (where `w = -1`),
//! and a finite value `φ_A(∞)` with `|φ_A(∞)| > 1`, so reflected
//! evaluations at `1/z̄` are unproblematic.
//!
//! Numerically everything is expressed through `1/φ_A` (bounded by one in
//! modulus) and the logarithmic derivative `φ_A'/φ_A`, which avoids
//! overflow near the pole.  On the slit itself the boundary parametrization
//! [`SlitMap::boundary_point`] realizes the two sides as `s ∈ (0, π)` and
//! `s ∈ (π, 2π)` with `φ_A = e^{is}` exactly; `s = 0` corresponds to the
//! endpoint at `θ'` and `s = π` to the endpoint at `θ`.

use num_complex::Complex64;

/// Opening map of one circular arc slit (see the module docs).
#[derive(Debug, Clone)]
pub struct SlitMap {
    /// Slit radius `m ∈ (0, 1)`.
    pub m: f64,
    /// Lower angular endpoint `θ`.
    pub theta: f64,
    /// Upper angular endpoint `θ'`.
    pub theta_prime: f64,
    /// Center angle `θ_c = (θ + θ') / 2`.
    pub theta_c: f64,
    /// Half-opening parameter `τ = tan((θ' - θ)/4)`.
    pub tau: f64,
    /// Location of the pole of `φ_A`, the antipodal point `-m e^{iθ_c}`.
    pub w0: Complex64,
    /// `1 / φ_A(∞)`.
    pub inv_phi_inf: Complex64,
    /// `1 / φ_A(0)`.
    pub inv_phi_zero: Complex64,
    /// Cached rotation `e^{-iθ_c}`.
    rot: Complex64,
}

/// Exterior inverse Joukowski branch `Λ(u) = u + √(u-1)·√(u+1)`, `|Λ| ≥ 1`.
fn lambda(u: Complex64) -> Complex64 {
    u + (u - 1.0).sqrt() * (u + 1.0).sqrt()
}

impl SlitMap {
    /// Builds the opening map of the slit `{ m e^{iφ} : θ ≤ φ ≤ θ' }`.
    pub fn new(m: f64, theta: f64, theta_prime: f64) -> Self {
        let theta_c = 0.5 * (theta + theta_prime);
        let delta = 0.5 * (theta_prime - theta);
        let tau = (0.5 * delta).tan();
        let rot = Complex64::from_polar(1.0, -theta_c);
        let w0 = -m * Complex64::from_polar(1.0, theta_c);
        let i = Complex64::new(0.0, 1.0);
        let inv_phi_inf = lambda(-i / tau).finv();
        let inv_phi_zero = lambda(i / tau).finv();
        SlitMap {
            m,
            theta,
            theta_prime,
            theta_c,
            tau,
            w0,
            inv_phi_inf,
            inv_phi_zero,
            rot,
        }
    }

    /// Normalized coordinate `w = z e^{-iθ_c} / m`.
    #[inline]
    fn w_coord(&self, z: Complex64) -> Complex64 {
        z * self.rot / self.m
    }

    /// `1 / φ_A(z)`; bounded by one in modulus, zero at the pole `w₀`.
    pub fn inv_phi(&self, z: Complex64) -> Complex64 {
        let w = self.w_coord(z);
        let wp1 = w + 1.0;
        if wp1.norm_sqr() < 1e-200 {
            return Complex64::new(0.0, 0.0);
        }
        let u = (w - 1.0) / wp1 / (Complex64::new(0.0, 1.0) * self.tau);
        if u.norm_sqr() > 1e200 {
            // Λ(u) ≈ 2u beyond the precision horizon.
            return (2.0 * u).finv();
        }
        lambda(u).finv()
    }

    /// `1 / φ_A(z)` together with the logarithmic derivative `φ_A'/φ_A(z)`.
    ///
    /// Using `Λ' = Λ / (√(u-1)·√(u+1))` the logarithmic derivative reduces
    /// to `u'(z) / (√(u-1)·√(u+1))`, again free of the pole of `φ_A`
    /// itself (it has the expected simple pole `-1/(z - w₀)` at `w₀`).
    pub fn inv_phi_and_ratio(&self, z: Complex64) -> (Complex64, Complex64) {
        let w = self.w_coord(z);
        let wp1 = w + 1.0;
        let itau = Complex64::new(0.0, self.tau);
        if wp1.norm_sqr() < 1e-200 {
            // At the pole: 1/φ = 0 and φ'/φ = -1/(z - w₀) diverges; report
            // the leading behaviour with the exact pole location.
            let dz = z - self.w0;
            return (Complex64::new(0.0, 0.0), -dz.finv());
        }
        let u = (w - 1.0) / wp1 / itau;
        // u'(z) = 2/(w+1)² · e^{-iθ_c} / (m·iτ)
        let du = 2.0 / (wp1 * wp1) * self.rot / (self.m * itau);
        let s = (u - 1.0).sqrt() * (u + 1.0).sqrt();
        let inv = if u.norm_sqr() > 1e200 {
            (2.0 * u).finv()
        } else {
            lambda(u).finv()
        };
        (inv, du / s)
    }

    /// Two-sided boundary parametrization: for `s ∈ (0, 2π)` the point
    ///
    /// ```text
    ///     z(s) = m e^{iθ_c} (1 + iτ cos s) / (1 - iτ cos s)
    /// ```
    ///
    /// runs over the slit with `φ_A(z(s)) = e^{is}` as a boundary value;
    /// `s` and `2π - s` give the same point approached from the two sides.
    pub fn boundary_point(&self, s: f64) -> Complex64 {
        let c = Complex64::new(0.0, self.tau * s.cos());
        self.m * Complex64::from_polar(1.0, self.theta_c) * (1.0 + c) / (1.0 - c)
    }

    /// Endpoints of the slit: (`m e^{iθ}`, `m e^{iθ'}`).
    pub fn endpoints(&self) -> (Complex64, Complex64) {
        (
            self.m * Complex64::from_polar(1.0, self.theta),
            self.m * Complex64::from_polar(1.0, self.theta_prime),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample_map() -> SlitMap {
        SlitMap::new(0.5, 0.7, 2.1)
    }

    #[test]
    fn boundary_parametrization_endpoints() {
        let sm = sample_map();
        let (e_lo, e_hi) = sm.endpoints();
        // s = 0 is the θ' endpoint, s = π the θ endpoint.
        assert!((sm.boundary_point(0.0) - e_hi).norm() < 1e-14);
        assert!((sm.boundary_point(PI) - e_lo).norm() < 1e-14);
        // The parametrization stays on the circle of radius m.
        for i in 1..20 {
            let s = 2.0 * PI * (i as f64) / 20.0;
            assert!((sm.boundary_point(s).norm() - sm.m).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_values_lie_on_unit_circle() {
        let sm = sample_map();
        // The analytic formula, evaluated at the slit point, must produce a
        // unimodular value matching e^{is} for one of the two sides.  The
        // offset keeps the samples away from s ∈ {0, π}, the tip branch
        // points where the square root loses half its digits.
        for i in 0..17 {
            let s = 2.0 * PI * (i as f64 + 0.3) / 17.0;
            let z = sm.boundary_point(s);
            let inv = sm.inv_phi(z);
            assert!(
                (inv.norm() - 1.0).abs() < 1e-10,
                "s = {s}: |1/φ| = {}",
                inv.norm()
            );
            let lam = inv.finv();
            let matches_side = (lam - Complex64::from_polar(1.0, s)).norm() < 1e-8
                || (lam - Complex64::from_polar(1.0, -s)).norm() < 1e-8;
            assert!(matches_side, "s = {s}: λ = {lam}");
        }
    }

    #[test]
    fn map_is_exterior_off_the_slit() {
        let sm = sample_map();
        for &z in &[
            Complex64::new(0.1, 0.0),
            Complex64::new(-0.3, 0.4),
            Complex64::new(0.9, 0.1),
            Complex64::new(0.0, -0.8),
            Complex64::new(3.0, 2.0),
        ] {
            let inv = sm.inv_phi(z);
            assert!(inv.norm() < 1.0, "z = {z}: |1/φ| = {}", inv.norm());
        }
        assert!(sm.inv_phi_inf.norm() < 1.0);
        assert!(sm.inv_phi_zero.norm() < 1.0);
    }

    #[test]
    fn special_values_match_direct_evaluation() {
        let sm = sample_map();
        // 1/φ at a large argument approaches the stored value at infinity.
        let big = Complex64::new(3.0e7, -4.0e7);
        assert!((sm.inv_phi(big) - sm.inv_phi_inf).norm() < 1e-6);
        assert!((sm.inv_phi(Complex64::new(0.0, 0.0)) - sm.inv_phi_zero).norm() < 1e-14);
        // |φ(0)| = |φ(∞)|: both Cayley images are reflections of each other.
        assert!((sm.inv_phi_zero.norm() - sm.inv_phi_inf.norm()).abs() < 1e-14);
    }

    #[test]
    fn pole_is_at_antipodal_point() {
        let sm = sample_map();
        assert!(sm.inv_phi(sm.w0).norm() == 0.0);
        let near = sm.w0 + Complex64::new(1e-8, 0.0);
        assert!(sm.inv_phi(near).norm() < 1e-7);
    }

    #[test]
    fn log_derivative_matches_finite_differences() {
        let sm = sample_map();
        let h = 1e-6;
        for &z in &[
            Complex64::new(0.2, 0.3),
            Complex64::new(-0.6, -0.1),
            Complex64::new(1.4, 0.9),
        ] {
            let (_, ratio) = sm.inv_phi_and_ratio(z);
            // d/dz log φ = -d/dz log (1/φ) by finite differences.
            let f = |p: Complex64| sm.inv_phi(p).ln();
            let fd = -(f(z + h) - f(z - h)) / (2.0 * h);
            assert!(
                (ratio - fd).norm() < 1e-5,
                "z = {z}: ratio {ratio} vs fd {fd}"
            );
        }
    }

    #[test]
    fn log_derivative_near_pole_has_simple_pole() {
        let sm = sample_map();
        let dz = Complex64::new(1e-5, 2e-5);
        let (_, ratio) = sm.inv_phi_and_ratio(sm.w0 + dz);
        let expected = -dz.finv();
        assert!(
            (ratio - expected).norm() / expected.norm() < 1e-3,
            "ratio {ratio} vs -1/dz {expected}"
        );
    }
}
