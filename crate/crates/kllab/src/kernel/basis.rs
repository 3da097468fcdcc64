//! Analytic collocation basis on a circular slit disk.
//!
//! Boundary value problems in the slit disk are solved with expansions in
//! functions that are analytic in the domain and have an *identically*
//! vanishing real part on the unit circle, so that only the slit boundary
//! conditions need collocation rows.  Two families are used, built from the
//! per-slit opening maps `φ_l` of [`super::slitmap`]:
//!
//! * **Reflected powers.**  With `b_{l,k}(z) = φ_l(z)^{-k}` and the
//!   reflection `b*_{l,k}(z) = conj(φ_l(1/z̄)^{-k})`,
//!
//!   ```text
//!       f⁻_{l,k} = b_{l,k} - b*_{l,k},      f⁺_{l,k} = i (b_{l,k} + b*_{l,k})
//!   ```
//!
//!   are analytic in the slit disk and satisfy `Re f± = 0` on `|z| = 1`
//!   exactly, because there the reflection point coincides with `z`.
//!
//! * **Compensated logarithms.**  `log φ_l` alone has a logarithmic pole at
//!   the interior point `w₀_l` where `φ_l` has its simple pole.  The
//!   combination
//!
//!   ```text
//!       L_l(z) = log φ_l(z) - conj(log φ_l(1/z̄))
//!                + log(z - w₀_l) - log(1 - conj(w₀_l) z)
//!   ```
//!
//!   cancels that pole against a Blaschke factor, keeps `Re L_l = 0` on the
//!   circle, and carries the period `+2π` of `Im L_l` around the slit
//!   `A_l` only.  Its real part is single-valued; only real parts and
//!   derivatives of `L_l` are ever evaluated, so no branch bookkeeping is
//!   required.
//!
//! Real-linear combinations of `Re f±` and `Re L` represent harmonic
//! functions vanishing on the circle; the coefficients of `L_l` encode the
//! conjugate periods and hence the period matrix.
//!
//! On its own slit the boundary value of `φ_l` is known in closed form,
//! `φ_l(z(s)) = e^{is}` along the two-sided parametrization, and matrix
//! rows use that exact value; all foreign-slit terms are smooth across a
//! given slit and are evaluated directly.

use num_complex::Complex64;

use super::slitmap::SlitMap;

/// Collocation basis of reflected powers and compensated logarithms for a
/// fixed slit system and expansion order `K`.
#[derive(Debug)]
pub struct SlitBasis {
    /// Opening maps, one per slit.
    pub maps: Vec<SlitMap>,
    /// Number of reflected-power modes per slit and family.
    pub k_order: usize,
}

/// Cauchy kernel `(ξ + z)/(ξ - z)` of the disk; the singular part of the
/// half-plane field.
#[inline]
pub fn pole_term(xi: Complex64, z: Complex64) -> Complex64 {
    (xi + z) / (xi - z)
}

/// Derivative of [`pole_term`] in `z`: `2ξ/(ξ - z)²`.
#[inline]
pub fn pole_term_deriv(xi: Complex64, z: Complex64) -> Complex64 {
    let d = xi - z;
    2.0 * xi / (d * d)
}

impl SlitBasis {
    /// Builds the basis for the given slit system.
    pub fn new(maps: Vec<SlitMap>, k_order: usize) -> Self {
        SlitBasis { maps, k_order }
    }

    /// Number of slits.
    pub fn num_slits(&self) -> usize {
        self.maps.len()
    }

    /// Number of reflected-power columns (`2K` per slit).
    pub fn fpm_cols(&self) -> usize {
        2 * self.k_order * self.maps.len()
    }

    /// Column index of `f⁻_{l,k}` (`k` is 1-based).
    #[inline]
    pub fn col_fminus(&self, l: usize, k: usize) -> usize {
        l * 2 * self.k_order + (k - 1)
    }

    /// Column index of `f⁺_{l,k}` (`k` is 1-based).
    #[inline]
    pub fn col_fplus(&self, l: usize, k: usize) -> usize {
        l * 2 * self.k_order + self.k_order + (k - 1)
    }

    /// Complex values of all `f±` terms at `z` (evaluation point away from
    /// the slits; boundary rows use [`SlitBasis::slit_row`] instead).
    pub fn eval_fpm(&self, z: Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.fpm_cols()];
        for (l, sm) in self.maps.iter().enumerate() {
            let pr = sm.inv_phi(z);
            let ps = self.reflected_inv_phi(sm, z);
            let mut pk = Complex64::new(1.0, 0.0);
            let mut sk = Complex64::new(1.0, 0.0);
            for k in 1..=self.k_order {
                pk *= pr;
                sk *= ps;
                out[self.col_fminus(l, k)] = pk - sk;
                out[self.col_fplus(l, k)] = Complex64::new(0.0, 1.0) * (pk + sk);
            }
        }
        out
    }

    /// Complex derivatives of all `f±` terms at `z ≠ 0`.
    pub fn eval_fpm_deriv(&self, z: Complex64) -> Vec<Complex64> {
        debug_assert!(z.norm_sqr() > 0.0, "derivative evaluation at the origin");
        let mut out = vec![Complex64::new(0.0, 0.0); self.fpm_cols()];
        let zr = z.conj().finv();
        for (l, sm) in self.maps.iter().enumerate() {
            let (pr, rr) = sm.inv_phi_and_ratio(z);
            let (pi_raw, ri_raw) = sm.inv_phi_and_ratio(zr);
            let ps = pi_raw.conj();
            let rs = ri_raw.conj() / (z * z);
            let mut pk = Complex64::new(1.0, 0.0);
            let mut sk = Complex64::new(1.0, 0.0);
            for k in 1..=self.k_order {
                pk *= pr;
                sk *= ps;
                let kf = k as f64;
                // b' = -k b (φ'/φ) and (b*)' = +k b* conj(φ'/φ at 1/z̄)/z².
                out[self.col_fminus(l, k)] = -kf * (pk * rr + sk * rs);
                out[self.col_fplus(l, k)] =
                    Complex64::new(0.0, kf) * (sk * rs - pk * rr);
            }
        }
        out
    }

    /// Real parts of the compensated logarithms `L_l` at `z`.
    pub fn eval_log_re(&self, z: Complex64) -> Vec<f64> {
        self.maps
            .iter()
            .map(|sm| {
                let pr = sm.inv_phi(z);
                let ps = self.reflected_inv_phi(sm, z);
                // Re L = -ln|1/φ(z)| + ln|1/φ(1/z̄)| + ln|z-w₀| - ln|1-conj(w₀)z|
                -pr.norm().ln() + ps.norm().ln() + (z - sm.w0).norm().ln()
                    - (1.0 - sm.w0.conj() * z).norm().ln()
            })
            .collect()
    }

    /// Complex derivatives of the compensated logarithms at `z ≠ 0`.
    pub fn eval_log_deriv(&self, z: Complex64) -> Vec<Complex64> {
        debug_assert!(z.norm_sqr() > 0.0, "derivative evaluation at the origin");
        let zr = z.conj().finv();
        self.maps
            .iter()
            .map(|sm| {
                let (_, rr) = sm.inv_phi_and_ratio(z);
                let (_, ri_raw) = sm.inv_phi_and_ratio(zr);
                let rs = ri_raw.conj() / (z * z);
                rr + rs + (z - sm.w0).finv() + sm.w0.conj() / (1.0 - sm.w0.conj() * z)
            })
            .collect()
    }

    /// `conj(1/φ_l(1/z̄))` with the correct finite value at `z = 0`.
    #[inline]
    fn reflected_inv_phi(&self, sm: &SlitMap, z: Complex64) -> Complex64 {
        if z.norm_sqr() < 1e-280 {
            sm.inv_phi_inf.conj()
        } else {
            sm.inv_phi(z.conj().finv()).conj()
        }
    }

    /// Collocation row at the boundary node `s` of slit `j`: real parts of
    /// all `f±` terms and all `L` terms, plus the node location.
    ///
    /// The own-slit unreflected factor uses the exact boundary value
    /// `φ_j = e^{is}`; everything else is evaluated directly.
    pub fn slit_row(&self, j: usize, s: f64) -> (Vec<f64>, Vec<f64>, Complex64) {
        let z = self.maps[j].boundary_point(s);
        let mut fpm = vec![0.0; self.fpm_cols()];
        let mut logs = vec![0.0; self.num_slits()];
        for (l, sm) in self.maps.iter().enumerate() {
            let ps = self.reflected_inv_phi(sm, z);
            if l == j {
                // Exact side-resolved boundary values of the own slit.
                let mut sk = Complex64::new(1.0, 0.0);
                for k in 1..=self.k_order {
                    sk *= ps;
                    let (cks, sks) = ((k as f64 * s).cos(), (k as f64 * s).sin());
                    // b = e^{-iks}: Re f⁻ = cos ks - Re b*ᵏ,
                    //              Re f⁺ = -Im(b + b*) = sin ks - Im b*ᵏ.
                    fpm[self.col_fminus(l, k)] = cks - sk.re;
                    fpm[self.col_fplus(l, k)] = sks - sk.im;
                }
                // ln|φ_j| = 0 on the own slit.
                logs[l] = ps.norm().ln() + (z - sm.w0).norm().ln()
                    - (1.0 - sm.w0.conj() * z).norm().ln();
            } else {
                let pr = sm.inv_phi(z);
                let mut pk = Complex64::new(1.0, 0.0);
                let mut sk = Complex64::new(1.0, 0.0);
                for k in 1..=self.k_order {
                    pk *= pr;
                    sk *= ps;
                    fpm[self.col_fminus(l, k)] = pk.re - sk.re;
                    fpm[self.col_fplus(l, k)] = -pk.im - sk.im;
                }
                logs[l] = -pr.norm().ln() + ps.norm().ln() + (z - sm.w0).norm().ln()
                    - (1.0 - sm.w0.conj() * z).norm().ln();
            }
        }
        (fpm, logs, z)
    }

    /// Complex values of all `f±` terms at a slit endpoint, using the exact
    /// boundary value `φ_j = λ = ±1` for the own slit (`λ = -1` at the `θ`
    /// endpoint, `λ = +1` at `θ'`).
    pub fn eval_fpm_at_endpoint(&self, j: usize, lam: f64, z: Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.fpm_cols()];
        for (l, sm) in self.maps.iter().enumerate() {
            let ps = self.reflected_inv_phi(sm, z);
            let pr = if l == j {
                Complex64::new(lam, 0.0)
            } else {
                sm.inv_phi(z)
            };
            let mut pk = Complex64::new(1.0, 0.0);
            let mut sk = Complex64::new(1.0, 0.0);
            for k in 1..=self.k_order {
                pk *= pr;
                sk *= ps;
                out[self.col_fminus(l, k)] = pk - sk;
                out[self.col_fplus(l, k)] = Complex64::new(0.0, 1.0) * (pk + sk);
            }
        }
        out
    }
}
