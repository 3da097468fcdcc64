//! Conformal machinery of a circular slit disk.
//!
//! [`DomainFunctionSet`] bundles everything the evolution and the
//! experiments need from a fixed standard domain `D`:
//!
//! * the **half-plane field** `Ψ(·, ξ)`: the unique analytic map of `D`
//!   onto the right half plane slit by `n - 1` vertical segments with a
//!   simple pole at the boundary point `ξ`, normalized by `Ψ(0, ξ) = 1`;
//!   its slit constants `c_j = Re Ψ|_{A_j}` are strictly positive;
//! * **harmonic measures** `ω_j` of the slits, the **Green function**
//!   `G(z, w)`, and the **period matrix** `P` of conjugate periods, read
//!   off the coefficients of the compensated logarithms;
//! * the **conformal radius** `r_D(w)` and **domain constant** `d_D(w)`,
//!   defined through the boundary expansions of the circular slit disk
//!   potential `γ` and of `G`; standard domains have `r_D(0) = 0` exactly;
//! * the **drift coefficient** `b(x, M)`: the regular part of
//!   `Ψ(·, e^{ix})` at its pole, rotated onto the real axis.
//!
//! All boundary conditions on the unit circle hold identically by
//! reflection symmetry of the basis, so the least-squares systems only
//! collocate the slit conditions.  Two matrices are factored per domain:
//! one for problems with free constants on the slits (`Ψ`, `γ`) and one
//! for problems with prescribed slit data and free conjugate periods
//! (`ω_j`, `G`-corrections).  Both are reused for arbitrarily many right
//! hand sides, which makes ξ-sweeps and Green evaluations cheap.
//!
//! Every solve checks its boundary error on held-out collocation nodes
//! and fails with a convergence error when the requested tolerance is not
//! met; [`build_domain_functions`] retries with increased expansion order
//! before giving up.

pub mod basis;
pub mod canonical;
mod lsq;
pub mod slitmap;

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::domain::{min_slit_gap, Moduli, StandardDomain};
use crate::{KlError, Result};
use basis::{pole_term, SlitBasis};
use lsq::LsqSolver;
use slitmap::SlitMap;

/// Default boundary tolerance of the collocation solves.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default number of reflected-power modes per slit.
pub const DEFAULT_K: usize = 24;
/// Largest expansion order tried by [`build_domain_functions`].
pub const MAX_K: usize = 48;
/// Guard distance for kernel singularities (pole of `G`, driving point
/// against the slits).
pub const POLE_GUARD: f64 = 1e-6;

/// Build parameters for a [`DomainFunctionSet`].
#[derive(Debug, Clone, Copy)]
pub struct BuildParams {
    /// Boundary sup-norm tolerance checked on held-out nodes.
    pub tol: f64,
    /// Reflected-power modes per slit.
    pub k_order: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            tol: DEFAULT_TOL,
            k_order: DEFAULT_K,
        }
    }
}

/// Green function of the unit disk, `ln|1 - w̄z| - ln|z - w|`.
pub fn disk_green(z: Complex64, w: Complex64) -> f64 {
    (1.0 - w.conj() * z).norm().ln() - (z - w).norm().ln()
}

/// Derivative of the analytic completion of [`disk_green`] in `z`.
pub fn disk_green_completion_deriv(z: Complex64, w: Complex64) -> Complex64 {
    -w.conj() / (1.0 - w.conj() * z) - (z - w).finv()
}

/// A harmonic function on the slit disk, vanishing on the unit circle,
/// represented in the collocation basis.
#[derive(Debug, Clone)]
pub struct HarmonicSolution {
    basis: Arc<SlitBasis>,
    log_coeffs: Vec<f64>,
    fpm_coeffs: Vec<f64>,
    /// Boundary error on held-out nodes.
    pub residual: f64,
}

impl HarmonicSolution {
    /// Value of the harmonic function at `z`.
    pub fn value(&self, z: Complex64) -> f64 {
        let logs = self.basis.eval_log_re(z);
        let fpm = self.basis.eval_fpm(z);
        let mut v = 0.0;
        for (l, &nu) in self.log_coeffs.iter().enumerate() {
            v += nu * logs[l];
        }
        for (c, &a) in self.fpm_coeffs.iter().enumerate() {
            v += a * fpm[c].re;
        }
        v
    }

    /// Derivative of the analytic completion at `z ≠ 0` (the completion is
    /// only locally defined, its derivative is single-valued).
    pub fn completion_deriv(&self, z: Complex64) -> Complex64 {
        let dlogs = self.basis.eval_log_deriv(z);
        let dfpm = self.basis.eval_fpm_deriv(z);
        let mut v = Complex64::new(0.0, 0.0);
        for (l, &nu) in self.log_coeffs.iter().enumerate() {
            v += nu * dlogs[l];
        }
        for (c, &a) in self.fpm_coeffs.iter().enumerate() {
            v += a * dfpm[c];
        }
        v
    }

    /// Coefficients of the compensated logarithms (conjugate periods over
    /// `-2π`).
    pub fn log_coeffs(&self) -> &[f64] {
        &self.log_coeffs
    }
}

/// The half-plane field `Ψ(·, ξ)` of a fixed domain and driving point.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    basis: Arc<SlitBasis>,
    /// Driving angle `x`.
    pub x: f64,
    /// Driving point `ξ = e^{ix}`.
    pub xi: Complex64,
    fpm_coeffs: Vec<f64>,
    /// Imaginary normalization constant (makes `Ψ(0, ξ)` real).
    pub mu: f64,
    /// Slit constants `c_j = Re Ψ` on slit `j`; positive for admissible
    /// configurations.
    pub c: Vec<f64>,
    /// Boundary error on held-out nodes.
    pub residual: f64,
    /// Drift coefficient: imaginary part of the regular part at `ξ`.
    pub drift: f64,
    /// `Ψ(0, ξ)`; equals one up to the solve error.
    pub psi_origin: Complex64,
    /// `Im Ψ` at the lower endpoints `m_j e^{iθ_j}`.
    pub endpoint_lo_im: Vec<f64>,
    /// `Im Ψ` at the upper endpoints `m_j e^{iθ'_j}`.
    pub endpoint_hi_im: Vec<f64>,
}

impl PsiEvaluator {
    /// Regular part `Ψ - (ξ+z)/(ξ-z)` at `z`.
    pub fn regular(&self, z: Complex64) -> Complex64 {
        let mut v = Complex64::new(0.0, self.mu);
        if !self.fpm_coeffs.is_empty() {
            let fpm = self.basis.eval_fpm(z);
            for (c, &a) in self.fpm_coeffs.iter().enumerate() {
                v += a * fpm[c];
            }
        }
        v
    }

    /// Full field value at `z`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        pole_term(self.xi, z) + self.regular(z)
    }
}

/// Lazily computed harmonic-measure family with the period matrix.
#[derive(Debug)]
struct FieldSolve {
    lsq: LsqSolver,
    held: DMatrix<f64>,
    held_slit: Vec<usize>,
    omega: Vec<HarmonicSolution>,
    p: DMatrix<f64>,
    p_asym: f64,
}

/// Conformal machinery of one standard domain at fixed expansion order.
pub struct DomainFunctionSet {
    domain: StandardDomain,
    basis: Arc<SlitBasis>,
    tol: f64,
    // Collocation rows: slit index, basis row blocks, node location.
    row_slit: Vec<usize>,
    rows_fpm: Vec<Vec<f64>>,
    rows_log: Vec<Vec<f64>>,
    row_z: Vec<Complex64>,
    // Held-out rows for residual checks.
    held_slit: Vec<usize>,
    held_fpm: Vec<Vec<f64>>,
    held_log: Vec<Vec<f64>>,
    held_z: Vec<Complex64>,
    // Factorization for problems with free slit constants (Ψ, γ).
    psi_lsq: Option<LsqSolver>,
    psi_held: Option<DMatrix<f64>>,
    field: OnceLock<FieldSolve>,
}

impl DomainFunctionSet {
    /// Assembles the collocation system for the domain at fixed order.
    pub fn build(domain: StandardDomain, params: BuildParams) -> Result<Self> {
        let moduli = domain.moduli();
        let maps: Vec<SlitMap> = (0..moduli.num_slits())
            .map(|j| SlitMap::new(moduli.m[j], moduli.theta[j], moduli.theta_prime[j]))
            .collect();
        let k = params.k_order;
        let basis = Arc::new(SlitBasis::new(maps, k));
        let nsl = basis.num_slits();

        let mut set = DomainFunctionSet {
            domain,
            basis: basis.clone(),
            tol: params.tol,
            row_slit: Vec::new(),
            rows_fpm: Vec::new(),
            rows_log: Vec::new(),
            row_z: Vec::new(),
            held_slit: Vec::new(),
            held_fpm: Vec::new(),
            held_log: Vec::new(),
            held_z: Vec::new(),
            psi_lsq: None,
            psi_held: None,
            field: OnceLock::new(),
        };
        if nsl == 0 {
            return Ok(set);
        }

        let n_t = 2 * (k + 8);
        for j in 0..nsl {
            for i in 0..n_t {
                let s = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / (n_t as f64);
                let (fpm, logs, z) = basis.slit_row(j, s);
                set.row_slit.push(j);
                set.rows_fpm.push(fpm);
                set.rows_log.push(logs);
                set.row_z.push(z);
            }
            for i in 1..n_t {
                if i == n_t / 2 {
                    continue; // exact endpoint
                }
                let s = 2.0 * std::f64::consts::PI * (i as f64) / (n_t as f64);
                let (fpm, logs, z) = basis.slit_row(j, s);
                set.held_slit.push(j);
                set.held_fpm.push(fpm);
                set.held_log.push(logs);
                set.held_z.push(z);
            }
        }

        // Matrix for free-constant problems: [Re f± | -1 on own slit].
        let nrows = set.row_slit.len();
        let ncols = basis.fpm_cols() + nsl;
        let mut a = DMatrix::zeros(nrows, ncols);
        for r in 0..nrows {
            for (cidx, &v) in set.rows_fpm[r].iter().enumerate() {
                a[(r, cidx)] = v;
            }
            a[(r, basis.fpm_cols() + set.row_slit[r])] = -1.0;
        }
        let mut h = DMatrix::zeros(set.held_slit.len(), ncols);
        for r in 0..set.held_slit.len() {
            for (cidx, &v) in set.held_fpm[r].iter().enumerate() {
                h[(r, cidx)] = v;
            }
            h[(r, basis.fpm_cols() + set.held_slit[r])] = -1.0;
        }
        set.psi_lsq = Some(LsqSolver::new(a, 1e-12));
        set.psi_held = Some(h);
        Ok(set)
    }

    /// The underlying domain.
    pub fn domain(&self) -> &StandardDomain {
        &self.domain
    }

    /// Moduli of the underlying domain.
    pub fn moduli(&self) -> &Moduli {
        self.domain.moduli()
    }

    /// Number of slits.
    pub fn num_slits(&self) -> usize {
        self.basis.num_slits()
    }

    /// Expansion order in use.
    pub fn k_order(&self) -> usize {
        self.basis.k_order
    }

    /// Boundary tolerance in use.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Shared basis handle.
    pub fn basis(&self) -> &Arc<SlitBasis> {
        &self.basis
    }

    // ----- half-plane field -------------------------------------------------

    /// Solves for the half-plane field `Ψ(·, e^{ix})`.
    pub fn psi_field(&self, x: f64) -> Result<PsiEvaluator> {
        let xi = Complex64::from_polar(1.0, x);
        let nsl = self.num_slits();
        if nsl == 0 {
            return Ok(PsiEvaluator {
                basis: self.basis.clone(),
                x,
                xi,
                fpm_coeffs: Vec::new(),
                mu: 0.0,
                c: Vec::new(),
                residual: 0.0,
                drift: 0.0,
                psi_origin: Complex64::new(1.0, 0.0),
                endpoint_lo_im: Vec::new(),
                endpoint_hi_im: Vec::new(),
            });
        }
        let gap = min_slit_gap(self.domain.moduli(), x);
        if gap < POLE_GUARD {
            return Err(KlError::PoleProximity {
                dist: gap,
                guard: POLE_GUARD,
            });
        }
        let lsq = self.psi_lsq.as_ref().unwrap();
        let rhs = DVector::from_iterator(
            self.row_z.len(),
            self.row_z.iter().map(|&z| -pole_term(xi, z).re),
        );
        let sol = lsq.solve(&rhs);
        let held = self.psi_held.as_ref().unwrap();
        let mut residual = 0.0_f64;
        let pred = held * &sol;
        for (r, &z) in self.held_z.iter().enumerate() {
            residual = residual.max((pred[r] + pole_term(xi, z).re).abs());
        }
        if residual > self.tol {
            return Err(KlError::ConvergenceFailure {
                residual,
                tol: self.tol,
                context: format!("half-plane field at x = {x:.6}, K = {}", self.k_order()),
            });
        }
        let fpm_coeffs: Vec<f64> = sol.as_slice()[..self.basis.fpm_cols()].to_vec();
        let c: Vec<f64> = sol.as_slice()[self.basis.fpm_cols()..].to_vec();

        // Normalize Im Ψ(0) = 0 via the free imaginary constant.
        let f0 = self.basis.eval_fpm(Complex64::new(0.0, 0.0));
        let mut s0 = Complex64::new(0.0, 0.0);
        for (cidx, &a) in fpm_coeffs.iter().enumerate() {
            s0 += a * f0[cidx];
        }
        let mu = -s0.im;
        let psi_origin = Complex64::new(1.0 + s0.re, 0.0);

        // Endpoint values and the drift.
        let mut endpoint_lo_im = Vec::with_capacity(nsl);
        let mut endpoint_hi_im = Vec::with_capacity(nsl);
        for j in 0..nsl {
            let (z_lo, z_hi) = self.basis.maps[j].endpoints();
            for (lam, z, store) in [
                (-1.0, z_lo, &mut endpoint_lo_im),
                (1.0, z_hi, &mut endpoint_hi_im),
            ] {
                let vals = self.basis.eval_fpm_at_endpoint(j, lam, z);
                let mut v = pole_term(xi, z) + Complex64::new(0.0, mu);
                for (cidx, &a) in fpm_coeffs.iter().enumerate() {
                    v += a * vals[cidx];
                }
                store.push(v.im);
            }
        }
        let freg = self.basis.eval_fpm(xi);
        let mut sxi = Complex64::new(0.0, mu);
        for (cidx, &a) in fpm_coeffs.iter().enumerate() {
            sxi += a * freg[cidx];
        }
        let drift = sxi.im;

        Ok(PsiEvaluator {
            basis: self.basis.clone(),
            x,
            xi,
            fpm_coeffs,
            mu,
            c,
            residual,
            drift,
            psi_origin,
            endpoint_lo_im,
            endpoint_hi_im,
        })
    }

    /// Drift coefficient `b(x)` of the stochastic driving ansatz: the
    /// regular part of `Ψ(·, e^{ix})` at the pole, rotated to the real
    /// axis.  Vanishes for the disk and for mirror-symmetric
    /// configurations.
    pub fn drift_coefficient(&self, x: f64) -> Result<f64> {
        Ok(self.psi_field(x)?.drift)
    }

    // ----- harmonic measures, Green function, periods -----------------------

    fn field(&self) -> Result<&FieldSolve> {
        if let Some(f) = self.field.get() {
            return Ok(f);
        }
        let f = self.compute_field()?;
        Ok(self.field.get_or_init(|| f))
    }

    fn compute_field(&self) -> Result<FieldSolve> {
        let nsl = self.num_slits();
        let nrows = self.row_slit.len();
        let ncols = nsl + self.basis.fpm_cols();
        let mut a = DMatrix::zeros(nrows, ncols);
        for r in 0..nrows {
            for l in 0..nsl {
                a[(r, l)] = self.rows_log[r][l];
            }
            for (cidx, &v) in self.rows_fpm[r].iter().enumerate() {
                a[(r, nsl + cidx)] = v;
            }
        }
        let mut held = DMatrix::zeros(self.held_slit.len(), ncols);
        for r in 0..self.held_slit.len() {
            for l in 0..nsl {
                held[(r, l)] = self.held_log[r][l];
            }
            for (cidx, &v) in self.held_fpm[r].iter().enumerate() {
                held[(r, nsl + cidx)] = v;
            }
        }
        let lsq = LsqSolver::new(a, 1e-12);

        // Harmonic measures of the slits.
        let mut omega = Vec::with_capacity(nsl);
        for j in 0..nsl {
            let rhs = DVector::from_iterator(
                nrows,
                self.row_slit.iter().map(|&s| if s == j { 1.0 } else { 0.0 }),
            );
            let sol = lsq.solve(&rhs);
            let pred = &held * &sol;
            let mut residual = 0.0_f64;
            for (r, &sl) in self.held_slit.iter().enumerate() {
                let data = if sl == j { 1.0 } else { 0.0 };
                residual = residual.max((pred[r] - data).abs());
            }
            if residual > self.tol {
                return Err(KlError::ConvergenceFailure {
                    residual,
                    tol: self.tol,
                    context: format!("harmonic measure {j}, K = {}", self.k_order()),
                });
            }
            omega.push(HarmonicSolution {
                basis: self.basis.clone(),
                log_coeffs: sol.as_slice()[..nsl].to_vec(),
                fpm_coeffs: sol.as_slice()[nsl..].to_vec(),
                residual,
            });
        }

        // Period matrix from the conjugate periods: P_kj = -ν_k of ω_j.
        let mut p = DMatrix::zeros(nsl, nsl);
        for j in 0..nsl {
            for kk in 0..nsl {
                p[(kk, j)] = -omega[j].log_coeffs[kk];
            }
        }
        let mut p_asym = 0.0_f64;
        for j in 0..nsl {
            for kk in 0..nsl {
                p_asym = p_asym.max((p[(kk, j)] - p[(j, kk)]).abs());
            }
        }
        let p_sym = 0.5 * (&p + p.transpose());

        Ok(FieldSolve {
            lsq,
            held,
            held_slit: self.held_slit.clone(),
            omega,
            p: p_sym,
            p_asym,
        })
    }

    /// Harmonic measures `(ω_1, …, ω_{n-1})` at `z`.
    pub fn harmonic_measures(&self, z: Complex64) -> Result<Vec<f64>> {
        if self.num_slits() == 0 {
            return Ok(Vec::new());
        }
        let f = self.field()?;
        Ok(f.omega.iter().map(|s| s.value(z)).collect())
    }

    /// Harmonic measure of slit `j` at `z`.
    pub fn harmonic_measure(&self, z: Complex64, j: usize) -> Result<f64> {
        let f = self.field()?;
        Ok(f.omega[j].value(z))
    }

    /// Period matrix (symmetrized) and the raw asymmetry defect.
    pub fn period_matrix(&self) -> Result<(DMatrix<f64>, f64)> {
        if self.num_slits() == 0 {
            return Ok((DMatrix::zeros(0, 0), 0.0));
        }
        let f = self.field()?;
        Ok((f.p.clone(), f.p_asym))
    }

    /// Outward normal derivatives `∂ω_j/∂n` at the circle point `e^{ix}`.
    pub fn omega_normal_at_circle(&self, x: f64) -> Result<Vec<f64>> {
        if self.num_slits() == 0 {
            return Ok(Vec::new());
        }
        let f = self.field()?;
        let xi = Complex64::from_polar(1.0, x);
        Ok(f.omega
            .iter()
            .map(|s| (xi * s.completion_deriv(xi)).re)
            .collect())
    }

    /// One-step-finer rebuild of the same domain, or `None` at the order
    /// cap.  Per-pole boundary data `-ln|z - w|` sharpens as the pole
    /// approaches a slit, so a single pole can demand more modes than the
    /// harmonic-measure family needed at build time.
    fn escalated(&self) -> Result<Option<DomainFunctionSet>> {
        if self.k_order() >= MAX_K {
            return Ok(None);
        }
        let k = (self.k_order() + 12).min(MAX_K);
        DomainFunctionSet::build(
            self.domain.clone(),
            BuildParams { tol: self.tol, k_order: k },
        )
        .map(Some)
    }

    /// Solves the Green correction for pole `w`, escalating the expansion
    /// order when the pole sits close enough to a slit that the fixed
    /// order cannot meet the tolerance.
    fn green_correction(&self, w: Complex64) -> Result<HarmonicSolution> {
        match self.green_correction_at_order(w) {
            Err(e @ KlError::ConvergenceFailure { .. }) => match self.escalated()? {
                Some(finer) => finer.green_correction(w),
                None => Err(e),
            },
            other => other,
        }
    }

    /// Green correction for pole `w` at this set's fixed order; the
    /// solution `u_w` satisfies `G(z, w) = G_disk(z, w) + u_w(z)`.
    fn green_correction_at_order(&self, w: Complex64) -> Result<HarmonicSolution> {
        let guard = self.domain.slit_distance(w).min(1.0 - w.norm());
        if guard < POLE_GUARD {
            return Err(KlError::PoleProximity {
                dist: guard,
                guard: POLE_GUARD,
            });
        }
        let f = self.field()?;
        let nsl = self.num_slits();
        let rhs = DVector::from_iterator(
            self.row_z.len(),
            self.row_z.iter().map(|&z| -disk_green(z, w)),
        );
        let sol = f.lsq.solve(&rhs);
        let pred = &f.held * &sol;
        let mut residual = 0.0_f64;
        for (r, &z) in self.held_z.iter().enumerate() {
            residual = residual.max((pred[r] + disk_green(z, w)).abs());
        }
        let _ = &f.held_slit;
        if residual > self.tol {
            return Err(KlError::ConvergenceFailure {
                residual,
                tol: self.tol,
                context: format!("Green correction at w = {w}, K = {}", self.k_order()),
            });
        }
        Ok(HarmonicSolution {
            basis: self.basis.clone(),
            log_coeffs: sol.as_slice()[..nsl].to_vec(),
            fpm_coeffs: sol.as_slice()[nsl..].to_vec(),
            residual,
        })
    }

    /// Green function `G(z, w)` of the slit disk.
    pub fn green(&self, z: Complex64, w: Complex64) -> Result<f64> {
        let d = (z - w).norm();
        if d < POLE_GUARD {
            return Err(KlError::PoleProximity {
                dist: d,
                guard: POLE_GUARD,
            });
        }
        if self.num_slits() == 0 {
            return Ok(disk_green(z, w));
        }
        let u = self.green_correction(w)?;
        Ok(disk_green(z, w) + u.value(z))
    }

    /// Batch evaluator for `G(·, w)` at fixed pole.
    pub fn green_fn(&self, w: Complex64) -> Result<GreenEvaluator> {
        let correction = if self.num_slits() == 0 {
            None
        } else {
            Some(self.green_correction(w)?)
        };
        Ok(GreenEvaluator { w, correction })
    }

    /// Outward normal derivative `∂G(·, w)/∂n` at the circle point `e^{ix}`.
    pub fn green_normal_at_circle(&self, x: f64, w: Complex64) -> Result<f64> {
        let xi = Complex64::from_polar(1.0, x);
        let mut deriv = disk_green_completion_deriv(xi, w);
        if self.num_slits() > 0 {
            deriv += self.green_correction(w)?.completion_deriv(xi);
        }
        Ok((xi * deriv).re)
    }

    /// Domain constant `d_D(w) = -lim_{z→w} (G(z, w) + ln|z - w|)`.
    pub fn domain_constant(&self, w: Complex64) -> Result<f64> {
        let base = -(1.0 - w.norm_sqr()).ln();
        if self.num_slits() == 0 {
            return Ok(base);
        }
        let u = self.green_correction(w)?;
        Ok(base - u.value(w))
    }

    /// Conformal radius functional
    /// `r_D(w) = -lim_{z→w} (γ(z, w) + ln|z - w|)`, where `γ(·, w)` is the
    /// circular slit disk potential: zero on the circle, constant on each
    /// slit, single-valued conjugate.  Standard domains satisfy
    /// `r_D(0) = 0` identically.
    pub fn conformal_radius(&self, w: Complex64) -> Result<f64> {
        match self.conformal_radius_at_order(w) {
            Err(e @ KlError::ConvergenceFailure { .. }) => match self.escalated()? {
                Some(finer) => finer.conformal_radius(w),
                None => Err(e),
            },
            other => other,
        }
    }

    /// Conformal radius at this set's fixed order.
    fn conformal_radius_at_order(&self, w: Complex64) -> Result<f64> {
        let base = -(1.0 - w.norm_sqr()).ln();
        if self.num_slits() == 0 {
            return Ok(base);
        }
        let guard = self.domain.slit_distance(w).min(1.0 - w.norm());
        if guard < POLE_GUARD {
            return Err(KlError::PoleProximity {
                dist: guard,
                guard: POLE_GUARD,
            });
        }
        let lsq = self.psi_lsq.as_ref().unwrap();
        let rhs = DVector::from_iterator(
            self.row_z.len(),
            self.row_z.iter().map(|&z| -disk_green(z, w)),
        );
        let sol = lsq.solve(&rhs);
        let held = self.psi_held.as_ref().unwrap();
        let pred = held * &sol;
        let mut residual = 0.0_f64;
        for (r, &z) in self.held_z.iter().enumerate() {
            residual = residual.max((pred[r] + disk_green(z, w)).abs());
        }
        if residual > self.tol {
            return Err(KlError::ConvergenceFailure {
                residual,
                tol: self.tol,
                context: format!("slit potential at w = {w}, K = {}", self.k_order()),
            });
        }
        let fpm = self.basis.eval_fpm(w);
        let mut v = 0.0;
        for (cidx, &a) in sol.as_slice()[..self.basis.fpm_cols()].iter().enumerate() {
            v += a * fpm[cidx].re;
        }
        Ok(base - v)
    }
}

/// Batch evaluator for the Green function at a fixed pole.
pub struct GreenEvaluator {
    w: Complex64,
    correction: Option<HarmonicSolution>,
}

impl GreenEvaluator {
    /// `G(z, w)`.
    pub fn value(&self, z: Complex64) -> f64 {
        let mut g = disk_green(z, self.w);
        if let Some(u) = &self.correction {
            g += u.value(z);
        }
        g
    }

    /// Outward normal derivative `∂G(·, w)/∂n` at the circle point
    /// `e^{ix}`, reusing the stored correction.
    pub fn normal_at_circle(&self, x: f64) -> f64 {
        let xi = Complex64::from_polar(1.0, x);
        let mut deriv = disk_green_completion_deriv(xi, self.w);
        if let Some(u) = &self.correction {
            deriv += u.completion_deriv(xi);
        }
        (xi * deriv).re
    }

    /// Residual of the underlying correction solve (zero for the disk).
    pub fn residual(&self) -> f64 {
        self.correction.as_ref().map_or(0.0, |u| u.residual)
    }
}

/// Builds the machinery for a domain, raising the expansion order until
/// the harmonic-measure family meets the tolerance.
pub fn build_domain_functions(
    domain: &StandardDomain,
    tol: f64,
    k_start: usize,
) -> Result<DomainFunctionSet> {
    let mut k = k_start.max(4);
    let mut last: Option<KlError> = None;
    while k <= MAX_K {
        let set = DomainFunctionSet::build(
            domain.clone(),
            BuildParams { tol, k_order: k },
        )?;
        if set.num_slits() == 0 {
            return Ok(set);
        }
        match set.field() {
            Ok(_) => return Ok(set),
            Err(KlError::ConvergenceFailure {
                residual,
                tol: t,
                context,
            }) => {
                last = Some(KlError::ConvergenceFailure {
                    residual,
                    tol: t,
                    context,
                });
                k += 12;
            }
            Err(e) => return Err(e),
        }
        // The failed set is dropped; a fresh one is built at higher order.
    }
    Err(last.unwrap_or(KlError::ConvergenceFailure {
        residual: f64::NAN,
        tol,
        context: "expansion ladder exhausted".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn one_slit_domain() -> StandardDomain {
        StandardDomain::new(Moduli::new(vec![0.5], vec![2.0], vec![3.1])).unwrap()
    }

    fn two_slit_domain() -> StandardDomain {
        StandardDomain::new(Moduli::new(
            vec![0.45, 0.7],
            vec![1.1, 3.6],
            vec![2.2, 4.8],
        ))
        .unwrap()
    }

    fn build(dom: StandardDomain) -> DomainFunctionSet {
        DomainFunctionSet::build(dom, BuildParams::default()).unwrap()
    }

    #[test]
    fn disk_green_values() {
        let set = build(StandardDomain::new(Moduli::disk()).unwrap());
        let g = set
            .green(Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.0))
            .unwrap();
        assert!((g - 2.0_f64.ln()).abs() < 1e-14);
        let g = set
            .green(Complex64::new(0.0, 0.5), Complex64::new(0.5, 0.0))
            .unwrap();
        assert!((g - 0.5 * 2.125_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn disk_psi_is_cayley_kernel() {
        let set = build(StandardDomain::new(Moduli::disk()).unwrap());
        let psi = set.psi_field(0.0).unwrap();
        let i = Complex64::new(0.0, 1.0);
        assert!((psi.eval(i) - i).norm() < 1e-14);
        assert!((psi.eval(Complex64::new(-1.0, 0.0))).norm() < 1e-14);
        assert!((psi.psi_origin - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert_eq!(psi.drift, 0.0);
    }

    #[test]
    fn disk_variational_quantities() {
        let set = build(StandardDomain::new(Moduli::disk()).unwrap());
        let w = Complex64::new(0.5, 0.0);
        let d = set.domain_constant(w).unwrap();
        assert!((d - (4.0_f64 / 3.0).ln()).abs() < 1e-14);
        let r = set.conformal_radius(w).unwrap();
        assert!((d - r).abs() < 1e-14);
        assert!(set.conformal_radius(Complex64::new(0.0, 0.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn pole_guard_fires() {
        let set = build(StandardDomain::new(Moduli::disk()).unwrap());
        let z = Complex64::new(0.3, 0.0);
        match set.green(z, z + Complex64::new(1e-8, 0.0)) {
            Err(KlError::PoleProximity { .. }) => {}
            other => panic!("expected pole proximity, got {other:?}"),
        }
    }

    #[test]
    fn slit_psi_solves_boundary_conditions() {
        let set = build(one_slit_domain());
        let psi = set.psi_field(0.0).unwrap();
        assert!(psi.residual <= 1e-8, "residual {}", psi.residual);
        // Normalization at the origin is emergent, not imposed.
        assert!(
            (psi.psi_origin.re - 1.0).abs() < 1e-8,
            "Ψ(0) = {}",
            psi.psi_origin
        );
        // Re Ψ vanishes on the circle away from the pole.
        for &a in &[1.0, 2.0, 3.0, -2.0, -1.0] {
            let z = Complex64::from_polar(1.0, a);
            assert!(psi.eval(z).re.abs() < 1e-8, "Re Ψ = {} at angle {a}", psi.eval(z).re);
        }
        // The slit constant is positive (right half-plane image).
        assert!(psi.c[0] > 0.0);
        // Re Ψ equals the constant on the slit (checked at a generic node).
        let (_, _, z) = set.basis.slit_row(0, 0.77);
        assert!((psi.eval(z).re - psi.c[0]).abs() < 1e-7);
    }

    #[test]
    fn slit_harmonic_measure_boundary_values() {
        let set = build(one_slit_domain());
        let z_slit = set.basis.maps[0].boundary_point(1.3);
        let on_slit = set.harmonic_measure(z_slit, 0).unwrap();
        assert!((on_slit - 1.0).abs() < 1e-7, "ω = {on_slit} on slit");
        let z_circle = Complex64::from_polar(1.0, 0.4);
        assert!(set.harmonic_measure(z_circle, 0).unwrap().abs() < 1e-8);
        let z_mid = Complex64::new(0.2, -0.1);
        let w = set.harmonic_measure(z_mid, 0).unwrap();
        assert!(w > 0.0 && w < 1.0);
    }

    #[test]
    fn green_symmetry_and_boundary() {
        let set = build(two_slit_domain());
        let z1 = Complex64::new(0.25, 0.15);
        let z2 = Complex64::new(-0.3, 0.45);
        let g12 = set.green(z1, z2).unwrap();
        let g21 = set.green(z2, z1).unwrap();
        assert!((g12 - g21).abs() < 1e-8, "G(z1,z2) = {g12}, G(z2,z1) = {g21}");
        assert!(g12 > 0.0);
        // Zero boundary values on circle and slits.
        let zc = Complex64::from_polar(1.0, 0.1);
        assert!(set.green(zc, z2).unwrap().abs() < 1e-8);
        let zs = set.basis.maps[1].boundary_point(2.4);
        assert!(set.green(zs, z2).unwrap().abs() < 1e-7);
    }

    #[test]
    fn period_matrix_is_spd_and_consistent() {
        let set = build(two_slit_domain());
        let (p, asym) = set.period_matrix().unwrap();
        assert!(asym < 1e-8, "asymmetry {asym}");
        let eig = p.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));
        // Slit constants of Ψ agree with -P⁻¹ ∂ω/∂n at the driving point.
        let x = 0.2;
        let psi = set.psi_field(x).unwrap();
        let dn = set.omega_normal_at_circle(x).unwrap();
        let rhs = DVector::from_vec(dn);
        let c_from_field = -(p.clone().lu().solve(&rhs).unwrap());
        for j in 0..2 {
            assert!(
                (psi.c[j] - c_from_field[j]).abs() < 1e-6,
                "c[{j}] = {} vs {}",
                psi.c[j],
                c_from_field[j]
            );
        }
    }

    #[test]
    fn green_origin_identity() {
        // G(z, 0) = -ln|z| - ω(0)ᵀ P⁻¹ ω(z).
        let set = build(two_slit_domain());
        let (p, _) = set.period_matrix().unwrap();
        let w0 = DVector::from_vec(set.harmonic_measures(Complex64::new(0.0, 0.0)).unwrap());
        let pinv_w0 = p.clone().lu().solve(&w0).unwrap();
        for &z in &[
            Complex64::new(0.3, 0.2),
            Complex64::new(-0.1, -0.55),
            Complex64::new(0.6, 0.1),
        ] {
            let g = set.green(z, Complex64::new(0.0, 0.0)).unwrap();
            let wz = DVector::from_vec(set.harmonic_measures(z).unwrap());
            let expect = -z.norm().ln() - pinv_w0.dot(&wz);
            assert!((g - expect).abs() < 1e-6, "G = {g}, identity gives {expect}");
        }
    }

    #[test]
    fn domain_constant_identity_at_origin() {
        // d(0) = r(0) + ω(0)ᵀ P⁻¹ ω(0) with r(0) = 0.
        for dom in [one_slit_domain(), two_slit_domain()] {
            let set = build(dom);
            let origin = Complex64::new(0.0, 0.0);
            let d = set.domain_constant(origin).unwrap();
            let r = set.conformal_radius(origin).unwrap();
            assert!(r.abs() < 1e-10, "r(0) = {r}");
            let (p, _) = set.period_matrix().unwrap();
            let w0 = DVector::from_vec(set.harmonic_measures(origin).unwrap());
            let quad = p.lu().solve(&w0).unwrap().dot(&w0);
            assert!((d - quad).abs() < 1e-6, "d = {d}, ωᵀP⁻¹ω = {quad}");
        }
    }

    #[test]
    fn symmetric_configuration_has_zero_drift() {
        // Slit mirror-symmetric about the real axis, driving point at 1.
        let dom = StandardDomain::new(Moduli::new(vec![0.5], vec![PI - 0.6], vec![PI + 0.6]))
            .unwrap();
        let set = build(dom);
        let psi = set.psi_field(0.0).unwrap();
        assert!(psi.drift.abs() < 1e-7, "drift = {}", psi.drift);
        // Mirror symmetry also pairs the endpoint velocities.
        assert!(
            (psi.endpoint_lo_im[0] + psi.endpoint_hi_im[0]).abs() < 1e-7,
            "endpoint velocities {} vs {}",
            psi.endpoint_lo_im[0],
            psi.endpoint_hi_im[0]
        );
        // And the slit expands: c > 0.
        assert!(psi.c[0] > 0.0);
    }

    #[test]
    fn nearly_touching_slits_fail_to_converge() {
        let dom = StandardDomain::new(Moduli::new(
            vec![0.5, 0.500001],
            vec![1.0, 1.2],
            vec![2.0, 2.2],
        ))
        .unwrap();
        match build_domain_functions(&dom, 1e-8, DEFAULT_K) {
            Err(KlError::ConvergenceFailure { .. }) => {}
            Ok(_) => panic!("expected convergence failure for 1e-6 gap"),
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn refinement_ladder_improves_hard_configurations() {
        // Moderately close slits: default order fails or succeeds, but the
        // ladder must end with a residual within tolerance.
        let dom = StandardDomain::new(Moduli::new(
            vec![0.5, 0.62],
            vec![1.0, 1.1],
            vec![2.0, 1.9],
        ))
        .unwrap();
        let set = build_domain_functions(&dom, 1e-8, 12).unwrap();
        let psi = set.psi_field(0.0).unwrap();
        assert!(psi.residual <= 1e-8);
    }
}
