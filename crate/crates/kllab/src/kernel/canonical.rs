//! Canonical maps of slit disks with hulls removed.
//!
//! Removing a compact hull `A` attached to the unit circle from a standard
//! domain `E` leaves a multiply connected domain `E \ A`.  The canonical
//! map `Φ_A` sends it back onto a standard domain `E* = Φ_A(E \ A)` with
//! `Φ_A(0) = 0` and `Φ_A'(0) > 0`; the slits move to new radii and angular
//! intervals, and the hull is absorbed into the outer circle.
//!
//! Two backends are provided:
//!
//! * **Closed form** for a radial spoke in the disk.  The spoke
//!   `{ r e^{iα} : a ≤ r ≤ 1 }` is exactly the hull grown by the radial
//!   Loewner equation with constant driving at `e^{iα}`, so `Φ_A` is the
//!   time-`T` uniformizing map given implicitly (for `α = π`) by
//!
//!   ```text
//!       g/(1-g)² = e^T z/(1-z)²,       e^T = (2-ℓ)²/(4(1-ℓ)),
//!   ```
//!
//!   with slit length `ℓ = 1-a`.  Solving the quadratic with the branch
//!   continuous at the origin gives machine-precision forward and inverse
//!   maps.
//!
//! * **Least-squares collocation** for radial spokes in slit disks.  The
//!   single-valued function `p(z) = log(Φ_A(z)/z)` is harmonic-solved from
//!   its boundary behaviour: `Re p = -ln|z|` on the circle and on the hull
//!   sides, and `Re p` constant (the unknown radius changes) on each slit.
//!   The basis opens every boundary piece analytically: powers of the slit
//!   opening maps, powers of the opened hull coordinate `ζ = √(T(z))`
//!   (where `T` is the Möbius transform straightening the spoke to `[0,1]`
//!   and the square root is cut along the positive axis), and a polynomial
//!   tail.  Corners where the hull meets the circle are analytic in `ζ`,
//!   so convergence is geometric without corner refinement.
//!
//! The same collocation machinery doubles as a general Dirichlet solver on
//! slit disks with several spokes removed; the variational experiments use
//! it for Green functions of hull-carrying domains.

use std::f64::consts::PI;

use num_complex::Complex64;

use nalgebra::{DMatrix, DVector};

use crate::domain::{angle_in_arc, canonical_angle, Hull, HullShape, Moduli, StandardDomain};
use crate::kernel::lsq::LsqSolver;
use crate::kernel::slitmap::SlitMap;
use crate::{KlError, Result};

// ---------------------------------------------------------------------------
// Closed-form radial spoke in the disk
// ---------------------------------------------------------------------------

/// Capacity of the radial spoke of length `ℓ ∈ (0, 1)` attached to the
/// circle: `T = ln((2-ℓ)²/(4(1-ℓ)))`.
pub fn spoke_capacity(len: f64) -> f64 {
    ((2.0 - len) * (2.0 - len) / (4.0 * (1.0 - len))).ln()
}

/// Inner tip radius `a(t) = 2eᵗ - 1 - 2√(e²ᵗ - eᵗ)` of the spoke grown up
/// to capacity `t` (slit `[-1, -a(t)]` for driving at `-1`).
pub fn spoke_tip_radius(t: f64) -> f64 {
    let e = t.exp();
    2.0 * e - 1.0 - 2.0 * (e * e - e).sqrt()
}

/// Solves `g/(1-g)² = eˢ z/(1-z)²` for `g` on the branch continuous at the
/// origin (`g ≈ eˢ z` for small `z`).  Circle points carry negative real
/// discriminant with a conjugate pair of unit-modulus roots; the side is
/// fixed by continuity from the interior (upper arc to upper arc).  Fails
/// with a branch error when `z` lies on the slit itself, where the map is
/// genuinely two-valued.
pub fn spoke_relation(s: f64, z: Complex64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let q = s.exp() * z / ((one - z) * (one - z));
    // Branch cut of √(4q+1): 4q+1 ∈ (-∞, 0].
    let disc = 4.0 * q + 1.0;
    if disc.re <= 0.0 && disc.im.abs() < 1e-14 * (1.0 + disc.re.abs()) {
        if (z.norm() - 1.0).abs() <= 1e-9 && z.im.abs() > 1e-14 {
            let root = Complex64::new(0.0, (-disc.re).sqrt() * z.im.signum());
            return Ok((2.0 * q + 1.0 - root) / (2.0 * q));
        }
        return Err(KlError::BranchFailure(format!(
            "evaluation point maps onto the slit (discriminant {disc})"
        )));
    }
    if q.norm() < 1e-4 {
        // Series avoids the cancellation (2q+1) - √(4q+1) ≈ O(q²).
        return Ok(q * (1.0 - 2.0 * q + 5.0 * q * q));
    }
    let g = (2.0 * q + 1.0 - disc.sqrt()) / (2.0 * q);
    if g.norm() > 1.0 + 1e-9 {
        return Err(KlError::BranchFailure(format!(
            "solution left the closed disk: |g| = {}",
            g.norm()
        )));
    }
    Ok(g)
}

/// Derivative `dg/dz` of [`spoke_relation`] by implicit differentiation:
/// `g' = eˢ (1+z)/(1-z)³ · (1-g)³/(1+g)`.
pub fn spoke_relation_deriv(s: f64, z: Complex64, g: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let num = s.exp() * (one + z) / ((one - z) * (one - z) * (one - z));
    num * ((one - g) * (one - g) * (one - g)) / (one + g)
}

/// Uniformizing map of the disk minus the radial spoke grown to capacity
/// `t` at angle `alpha`; `z` is rotated so the driving point sits at `-1`,
/// mapped, and rotated back.  The boundary point opposite the spoke is a
/// fixed point where the relation degenerates; it is special-cased.
pub fn spoke_map_at_angle(t: f64, alpha: f64, z: Complex64) -> Result<Complex64> {
    let rot = Complex64::from_polar(1.0, PI - alpha);
    let zr = z * rot;
    if (zr - 1.0).norm() < 1e-12 {
        return Ok(Complex64::new(1.0, 0.0) / rot);
    }
    Ok(spoke_relation(t, zr)? / rot)
}

/// Inverse of [`spoke_map_at_angle`]: the same relation read backwards.
pub fn spoke_inverse_at_angle(t: f64, alpha: f64, w: Complex64) -> Result<Complex64> {
    let rot = Complex64::from_polar(1.0, PI - alpha);
    let wr = w * rot;
    if (wr - 1.0).norm() < 1e-12 {
        return Ok(Complex64::new(1.0, 0.0) / rot);
    }
    Ok(spoke_relation(-t, wr)? / rot)
}

/// Derivative of [`spoke_map_at_angle`] in `z`.  At the fixed point
/// opposite the spoke the implicit relation gives `g'= e^{-t/2}` exactly.
pub fn spoke_map_deriv_at_angle(t: f64, alpha: f64, z: Complex64) -> Result<Complex64> {
    let rot = Complex64::from_polar(1.0, PI - alpha);
    let zr = z * rot;
    if (zr - 1.0).norm() < 1e-9 {
        return Ok(Complex64::new((-0.5 * t).exp(), 0.0));
    }
    let g = spoke_relation(t, zr)?;
    Ok(spoke_relation_deriv(t, zr, g))
}

// ---------------------------------------------------------------------------
// Spoke geometry helpers
// ---------------------------------------------------------------------------

/// Validated radial spoke with its opened coordinate.
#[derive(Debug, Clone)]
pub struct Spoke {
    /// Attachment angle on the circle.
    pub alpha: f64,
    /// Inner tip radius.
    pub a: f64,
    rot: Complex64,
}

impl Spoke {
    fn new(alpha: f64, a: f64) -> Self {
        Spoke {
            alpha,
            a,
            rot: Complex64::from_polar(1.0, -alpha),
        }
    }

    /// Möbius coordinate `T(z)` sending the spoke to `[0, 1]` (tip to 0,
    /// attachment to 1) and the circle to itself.
    #[inline]
    fn t_coord(&self, z: Complex64) -> Complex64 {
        let zp = z * self.rot;
        (zp - self.a) / (1.0 - self.a * zp)
    }

    /// Derivative of `T`.
    #[inline]
    fn t_deriv(&self, z: Complex64) -> Complex64 {
        let zp = z * self.rot;
        let d = 1.0 - self.a * zp;
        self.rot * (1.0 - self.a * self.a) / (d * d)
    }

    /// Opened coordinate `ζ = √T` with the cut along `[0, ∞)`; maps the
    /// spoke complement (inside the disk) onto the upper half disk, the
    /// two spoke sides onto `[-1, 1]`.
    #[inline]
    pub fn zeta(&self, z: Complex64) -> Complex64 {
        sqrt_poscut(self.t_coord(z))
    }

    /// Derivative of the opened coordinate, `ζ' = T'/(2ζ)`; singular at
    /// the tip.
    #[inline]
    fn zeta_deriv(&self, z: Complex64, zeta: Complex64) -> Complex64 {
        self.t_deriv(z) / (2.0 * zeta)
    }

    /// Boundary point on the spoke for real `ζ ∈ (-1, 1)`: `T = ζ²`.
    fn boundary_z(&self, zeta: f64) -> Complex64 {
        let t = zeta * zeta;
        let r = (t + self.a) / (1.0 + self.a * t);
        Complex64::from_polar(r, self.alpha)
    }

    /// Euclidean distance from `z` to the spoke.
    pub fn distance(&self, z: Complex64) -> f64 {
        let zp = z * self.rot;
        if zp.re >= self.a && zp.re <= 1.0 && zp.im.abs() <= 1.0 {
            // Projection onto the segment [a, 1] on the real axis.
            let proj = zp.re.clamp(self.a, 1.0);
            (zp - proj).norm()
        } else {
            let d1 = (zp - self.a).norm();
            let d2 = (zp - 1.0).norm();
            d1.min(d2)
        }
    }
}

/// Square root with branch cut along the positive real axis; the image has
/// a non-negative imaginary part.
fn sqrt_poscut(t: Complex64) -> Complex64 {
    if t.im >= 0.0 {
        t.sqrt()
    } else {
        -t.sqrt()
    }
}

/// Converts hulls to validated spokes, rejecting unsupported geometry and
/// collisions with the slits.
pub fn hulls_to_spokes(domain: &StandardDomain, hulls: &[Hull]) -> Result<Vec<Spoke>> {
    let mut spokes = Vec::with_capacity(hulls.len());
    for h in hulls {
        let violations = h.validate();
        if !violations.is_empty() {
            return Err(KlError::UnsupportedHull(violations.join("; ")));
        }
        match h.shape() {
            HullShape::RadialSpoke {
                angle,
                inner_radius,
            } => {
                let m = domain.moduli();
                for l in 0..m.num_slits() {
                    if angle_in_arc(angle, m.theta[l], m.theta_prime[l])
                        && m.m[l] >= inner_radius - 1e-12
                    {
                        return Err(KlError::UnsupportedHull(format!(
                            "hull at angle {angle:.4} intersects slit {l}"
                        )));
                    }
                }
                spokes.push(Spoke::new(angle, inner_radius));
            }
            HullShape::General => {
                return Err(KlError::UnsupportedHull(
                    "only radial segments attached to the unit circle are supported".into(),
                ))
            }
        }
    }
    for i in 0..spokes.len() {
        for j in (i + 1)..spokes.len() {
            if canonical_angle(spokes[i].alpha - spokes[j].alpha).abs() < 1e-9 {
                return Err(KlError::UnsupportedHull(
                    "hulls share an attachment angle".into(),
                ));
            }
        }
    }
    Ok(spokes)
}

// ---------------------------------------------------------------------------
// Collocation solver on a slit disk with spokes removed
// ---------------------------------------------------------------------------

/// Where a collocation node lives.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryPoint {
    /// On the unit circle.
    Circle { z: Complex64 },
    /// On a spoke side; `zeta ∈ (-1, 1)` resolves the side.
    HullSide { hull: usize, zeta: f64, z: Complex64 },
    /// On a slit; `s` is the two-sided parametrization.
    Slit { slit: usize, s: f64, z: Complex64 },
}

impl BoundaryPoint {
    /// Geometric location of the node.
    pub fn z(&self) -> Complex64 {
        match *self {
            BoundaryPoint::Circle { z } => z,
            BoundaryPoint::HullSide { z, .. } => z,
            BoundaryPoint::Slit { z, .. } => z,
        }
    }
}

/// Solver orders.
#[derive(Debug, Clone, Copy)]
pub struct HullSolverParams {
    /// Boundary tolerance on held-out nodes.
    pub tol: f64,
    /// Polynomial degree of the entire tail.
    pub poly_degree: usize,
    /// Modes per slit.
    pub slit_modes: usize,
    /// Modes per hull in the opened coordinate.
    pub hull_modes: usize,
    /// Circle collocation nodes.
    pub circle_nodes: usize,
}

impl Default for HullSolverParams {
    fn default() -> Self {
        HullSolverParams {
            tol: 1e-8,
            poly_degree: 24,
            slit_modes: 20,
            hull_modes: 36,
            circle_nodes: 240,
        }
    }
}

/// Dirichlet solver on `E \ (spokes)` for a slit disk `E`.
pub struct HullDomainSolver {
    spokes: Vec<Spoke>,
    maps: Vec<SlitMap>,
    params: HullSolverParams,
    nodes: Vec<BoundaryPoint>,
    held: Vec<BoundaryPoint>,
    // Column scales applied before factorization.
    scale_free: Vec<f64>,
    scale_fixed: Vec<f64>,
    // Factored systems with and without free slit constants.
    lsq_free: LsqSolver,
    lsq_fixed: LsqSolver,
}

/// Which problem class a [`HullDomainSolver`] solve addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlitCondition {
    /// Slit boundary values are part of the data closure.
    Prescribed,
    /// Slit boundary values are unknown constants (canonical map class);
    /// no logarithmic columns, single-valued conjugate.
    FreeConstants,
}

/// A solved boundary value problem from [`HullDomainSolver`].
pub struct HullSolution {
    domain_slits: usize,
    spokes: Vec<Spoke>,
    maps: Vec<SlitMap>,
    poly_degree: usize,
    slit_modes: usize,
    hull_modes: usize,
    coeffs: DVector<f64>,
    has_log_cols: bool,
    /// Unknown slit constants (empty for prescribed slit data).
    pub slit_constants: Vec<f64>,
    /// Boundary error on held-out nodes.
    pub residual: f64,
    /// Imaginary normalization: subtracted so `Im` vanishes at the origin.
    pub im_shift: f64,
}

impl HullDomainSolver {
    /// Builds the collocation system for the domain with the given hulls.
    pub fn new(
        domain: &StandardDomain,
        hulls: &[Hull],
        params: HullSolverParams,
    ) -> Result<Self> {
        let spokes = hulls_to_spokes(domain, hulls)?;
        let m = domain.moduli();
        let maps: Vec<SlitMap> = (0..m.num_slits())
            .map(|j| SlitMap::new(m.m[j], m.theta[j], m.theta_prime[j]))
            .collect();

        // --- node sets --------------------------------------------------
        let mut nodes = Vec::new();
        let mut held = Vec::new();
        let nc = params.circle_nodes;
        let near_attachment = |ang: f64| {
            spokes
                .iter()
                .any(|sp| canonical_angle(ang - sp.alpha).abs() < 0.25 * 2.0 * PI / nc as f64)
        };
        for i in 0..nc {
            let ang = 2.0 * PI * (i as f64 + 0.31) / nc as f64;
            if near_attachment(ang) {
                continue;
            }
            nodes.push(BoundaryPoint::Circle {
                z: Complex64::from_polar(1.0, ang),
            });
            let ang_h = 2.0 * PI * (i as f64 + 0.81) / nc as f64;
            if !near_attachment(ang_h) {
                held.push(BoundaryPoint::Circle {
                    z: Complex64::from_polar(1.0, ang_h),
                });
            }
        }
        // Circle nodes graded toward each attachment point, uniform in the
        // angle of the spoke's Möbius coordinate `T`.  The spoke basis
        // modes are Fourier modes in that angle, and its rate against arc
        // length is compressed by `(1+a)/(1-a)` at the attachment, so
        // uniform physical spacing aliases the high modes there; sampling
        // in the modes' own coordinate resolves every mode with the same
        // margin.
        for sp in &spokes {
            let nphi = (4 * params.hull_modes).max(24);
            let rot_back = Complex64::from_polar(1.0, sp.alpha);
            let mob = |offs: f64, i: usize| {
                let phi = 2.0 * PI * (i as f64 + offs) / nphi as f64;
                let w = Complex64::from_polar(1.0, phi);
                let zp = (w + sp.a) / (1.0 + sp.a * w);
                BoundaryPoint::Circle { z: zp * rot_back }
            };
            for i in 0..nphi {
                nodes.push(mob(0.5, i));
                held.push(mob(0.17, i));
            }
        }
        for (h, sp) in spokes.iter().enumerate() {
            let nh = (2 * params.hull_modes + params.hull_modes / 2).max(24);
            for i in 0..nh {
                let zeta = (PI * (i as f64 + 0.5) / nh as f64).cos();
                nodes.push(BoundaryPoint::HullSide {
                    hull: h,
                    zeta,
                    z: sp.boundary_z(zeta),
                });
                let zeta_h = (PI * (i as f64 + 0.17) / nh as f64).cos();
                held.push(BoundaryPoint::HullSide {
                    hull: h,
                    zeta: zeta_h,
                    z: sp.boundary_z(zeta_h),
                });
            }
        }
        for (j, sm) in maps.iter().enumerate() {
            let nt = 2 * (params.slit_modes + 8);
            for i in 0..nt {
                let s = 2.0 * PI * (i as f64 + 0.5) / nt as f64;
                nodes.push(BoundaryPoint::Slit {
                    slit: j,
                    s,
                    z: sm.boundary_point(s),
                });
                let s_h = 2.0 * PI * (i as f64 + 0.11) / nt as f64;
                held.push(BoundaryPoint::Slit {
                    slit: j,
                    s: s_h,
                    z: sm.boundary_point(s_h),
                });
            }
        }

        Self::assemble(spokes, maps, params, nodes, held)
    }

    fn assemble(
        spokes: Vec<Spoke>,
        maps: Vec<SlitMap>,
        params: HullSolverParams,
        nodes: Vec<BoundaryPoint>,
        held: Vec<BoundaryPoint>,
    ) -> Result<Self> {
        let nsl = maps.len();
        let layout = ColumnLayout {
            nsl,
            nhull: spokes.len(),
            poly_degree: params.poly_degree,
            slit_modes: params.slit_modes,
            hull_modes: params.hull_modes,
        };
        let base_cols = layout.base_cols();

        let eval_row = |bp: &BoundaryPoint, row: &mut [f64]| {
            let vals = complex_columns(&spokes, &maps, &layout, bp);
            for (c, v) in vals.iter().enumerate() {
                row[c] = v.re;
            }
        };

        let nrows = nodes.len();
        // Free-constant system: [analytic terms | slit-constant terms].
        let mut a_free = DMatrix::zeros(nrows, base_cols + nsl);
        // Fixed-data system: [analytic terms | logarithmic terms].
        let mut a_fixed = DMatrix::zeros(nrows, base_cols + nsl);
        let mut slice = vec![0.0; base_cols];
        for (r, bp) in nodes.iter().enumerate() {
            eval_row(bp, &mut slice);
            for c in 0..base_cols {
                a_free[(r, c)] = slice[c];
                a_fixed[(r, c)] = slice[c];
            }
            for l in 0..nsl {
                a_fixed[(r, base_cols + l)] = log_column_re(&maps[l], bp);
            }
            if let BoundaryPoint::Slit { slit, .. } = bp {
                a_free[(r, base_cols + slit)] = -1.0;
            }
        }

        // Unit-norm columns keep the truncated-SVD cutoff meaningful when
        // columns of very different scales (powers, corner tails,
        // logarithms) share one system.
        let normalize = |a: &mut DMatrix<f64>| -> Vec<f64> {
            let mut scales = Vec::with_capacity(a.ncols());
            for c in 0..a.ncols() {
                let n = a.column(c).norm();
                let s = if n > 1e-300 { n } else { 1.0 };
                for r in 0..a.nrows() {
                    a[(r, c)] /= s;
                }
                scales.push(s);
            }
            scales
        };
        let scale_free = normalize(&mut a_free);
        let scale_fixed = normalize(&mut a_fixed);

        Ok(HullDomainSolver {
            spokes,
            maps,
            params,
            nodes,
            held,
            scale_free,
            scale_fixed,
            lsq_free: LsqSolver::new(a_free, 1e-12),
            lsq_fixed: LsqSolver::new(a_fixed, 1e-12),
        })
    }

    /// The spokes in force.
    pub fn spokes(&self) -> &[Spoke] {
        &self.spokes
    }

    /// Solves a Dirichlet problem with boundary data given by the closure.
    /// For [`SlitCondition::FreeConstants`] the closure is not called on
    /// slit nodes.
    pub fn solve(
        &self,
        data: &dyn Fn(&BoundaryPoint) -> f64,
        cond: SlitCondition,
    ) -> Result<HullSolution> {
        let layout = self.layout();
        let base_cols = layout.base_cols();
        let nsl = self.maps.len();
        let rhs = DVector::from_iterator(
            self.nodes.len(),
            self.nodes.iter().map(|bp| match (cond, bp) {
                (SlitCondition::FreeConstants, BoundaryPoint::Slit { .. }) => 0.0,
                _ => data(bp),
            }),
        );
        let (coeffs, has_log, slit_constants) = match cond {
            SlitCondition::FreeConstants => {
                let mut sol = self.lsq_free.solve(&rhs);
                for (c, s) in self.scale_free.iter().enumerate() {
                    sol[c] /= s;
                }
                let consts = sol.as_slice()[base_cols..].to_vec();
                (
                    DVector::from(sol.as_slice()[..base_cols].to_vec()),
                    false,
                    consts,
                )
            }
            SlitCondition::Prescribed => {
                let mut sol = self.lsq_fixed.solve(&rhs);
                for (c, s) in self.scale_fixed.iter().enumerate() {
                    sol[c] /= s;
                }
                (sol, true, Vec::new())
            }
        };

        // Held-out residual.
        let mut residual = 0.0_f64;
        for bp in &self.held {
            let v = self.eval_re_with(&coeffs, has_log, bp);
            let target = match (cond, bp) {
                (SlitCondition::FreeConstants, BoundaryPoint::Slit { slit, .. }) => {
                    slit_constants[*slit]
                }
                _ => data(bp),
            };
            residual = residual.max((v - target).abs());
        }
        if residual > self.params.tol {
            return Err(KlError::ConvergenceFailure {
                residual,
                tol: self.params.tol,
                context: format!(
                    "hull-domain solve with {} spokes, {} slits",
                    self.spokes.len(),
                    nsl
                ),
            });
        }

        let mut sol = HullSolution {
            domain_slits: nsl,
            spokes: self.spokes.clone(),
            maps: self.maps.clone(),
            poly_degree: self.params.poly_degree,
            slit_modes: self.params.slit_modes,
            hull_modes: self.params.hull_modes,
            coeffs,
            has_log_cols: has_log,
            slit_constants,
            residual,
            im_shift: 0.0,
        };
        sol.im_shift = sol.complex_value(Complex64::new(0.0, 0.0)).im;
        Ok(sol)
    }

    fn layout(&self) -> ColumnLayout {
        ColumnLayout {
            nsl: self.maps.len(),
            nhull: self.spokes.len(),
            poly_degree: self.params.poly_degree,
            slit_modes: self.params.slit_modes,
            hull_modes: self.params.hull_modes,
        }
    }

    fn eval_re_with(&self, coeffs: &DVector<f64>, has_log: bool, bp: &BoundaryPoint) -> f64 {
        let layout = self.layout();
        let vals = complex_columns(&self.spokes, &self.maps, &layout, bp);
        let mut v = 0.0;
        for (c, cv) in vals.iter().enumerate() {
            v += coeffs[c] * cv.re;
        }
        if has_log {
            for l in 0..self.maps.len() {
                v += coeffs[layout.base_cols() + l] * log_column_re(&self.maps[l], bp);
            }
        }
        v
    }
}

/// Column bookkeeping for the hull solver basis.
#[derive(Debug, Clone, Copy)]
struct ColumnLayout {
    nsl: usize,
    nhull: usize,
    poly_degree: usize,
    slit_modes: usize,
    hull_modes: usize,
}

impl ColumnLayout {
    /// Analytic (non-logarithmic) columns: constant, polynomial tail,
    /// slit powers, hull powers plus two corner terms per hull; two real
    /// columns per complex term.
    fn base_cols(&self) -> usize {
        1 + 2 * self.poly_degree
            + self.nsl * 2 * self.slit_modes
            + self.nhull * (2 * self.hull_modes + 4)
    }
}

/// Taylor coefficients about `ζ = 0` of the attachment-corner function
/// `(ζ - c)² ln(ζ - c)` for `c = ±1`, up to degree `m`.
///
/// Boundary data of canonical-map problems is analytic along the spoke
/// but only meets the circle data to first order at the attachment
/// point; the quadratic mismatch resonates with the eigenexponent of the
/// quarter-plane corner and produces an `r² ln r` term there that no
/// finite power series in `ζ` resolves.  The corner columns supply that
/// term; subtracting their own Taylor series up to the power-block
/// degree leaves them supported near the corner, so they stay
/// independent of the plain powers.
fn corner_taylor(c: f64, m: usize) -> Vec<Complex64> {
    // ln(ζ - 1) = iπ - Σ_{k≥1} ζᵏ/k;  ln(ζ + 1) = Σ_{k≥1} (-1)^{k+1} ζᵏ/k.
    let mut l = vec![Complex64::new(0.0, 0.0); m + 1];
    if c > 0.0 {
        l[0] = Complex64::new(0.0, PI);
        for (k, lk) in l.iter_mut().enumerate().skip(1) {
            *lk = Complex64::new(-1.0 / k as f64, 0.0);
        }
    } else {
        for (k, lk) in l.iter_mut().enumerate().skip(1) {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            *lk = Complex64::new(sign / k as f64, 0.0);
        }
    }
    // Multiply by (ζ - c)² = ζ² - 2cζ + 1.
    let mut f = vec![Complex64::new(0.0, 0.0); m + 1];
    for k in 0..=m {
        let mut v = l[k];
        if k >= 1 {
            v -= 2.0 * c * l[k - 1];
        }
        if k >= 2 {
            v += l[k - 2];
        }
        f[k] = v;
    }
    f
}

/// Corner column value `(ζ - c)² ln(ζ - c) - Σ_k f_k ζᵏ` with the
/// principal logarithm (continuous on the closed upper half disk minus
/// the corner itself).
fn corner_tail(zeta: Complex64, c: f64, coeffs: &[Complex64]) -> Complex64 {
    let d = zeta - c;
    let mut p = Complex64::new(0.0, 0.0);
    let mut zk = Complex64::new(1.0, 0.0);
    for &a in coeffs {
        p += a * zk;
        zk *= zeta;
    }
    d * d * d.ln() - p
}

/// `d/dζ` of [`corner_tail`].
fn corner_tail_deriv(zeta: Complex64, c: f64, coeffs: &[Complex64]) -> Complex64 {
    let d = zeta - c;
    let mut p = Complex64::new(0.0, 0.0);
    let mut zk = Complex64::new(1.0, 0.0);
    for (k, &a) in coeffs.iter().enumerate().skip(1) {
        p += (k as f64) * a * zk;
        zk *= zeta;
    }
    2.0 * d * d.ln() + d - p
}

/// Complex values of all analytic basis terms at the node.  Every complex
/// term `T` contributes the pair `(T, iT)`; real coefficients on the pair
/// span complex coefficients on `T`.
fn complex_columns(
    spokes: &[Spoke],
    maps: &[SlitMap],
    layout: &ColumnLayout,
    bp: &BoundaryPoint,
) -> Vec<Complex64> {
    let z = bp.z();
    let i = Complex64::new(0.0, 1.0);
    let mut out = Vec::with_capacity(layout.base_cols());
    out.push(Complex64::new(1.0, 0.0));
    let mut zp = Complex64::new(1.0, 0.0);
    for _ in 1..=layout.poly_degree {
        zp *= z;
        out.push(zp);
        out.push(i * zp);
    }
    for (j, sm) in maps.iter().enumerate() {
        let pr = match bp {
            BoundaryPoint::Slit { slit, s, .. } if *slit == j => {
                Complex64::from_polar(1.0, -*s) // exact boundary value of 1/φ
            }
            _ => sm.inv_phi(z),
        };
        let mut pk = Complex64::new(1.0, 0.0);
        for _ in 1..=layout.slit_modes {
            pk *= pr;
            out.push(pk);
            out.push(i * pk);
        }
    }
    for (h, sp) in spokes.iter().enumerate() {
        let zeta = match bp {
            BoundaryPoint::HullSide { hull, zeta, .. } if *hull == h => {
                Complex64::new(*zeta, 0.0)
            }
            _ => sp.zeta(z),
        };
        let mut zk = Complex64::new(1.0, 0.0);
        for _ in 1..=layout.hull_modes {
            zk *= zeta;
            out.push(zk);
            out.push(i * zk);
        }
        for c in [1.0, -1.0] {
            let f = corner_tail(zeta, c, &corner_taylor(c, layout.hull_modes));
            out.push(f);
            out.push(i * f);
        }
    }
    out
}

/// Real part of the compensated logarithm `log φ_l + log(z - w₀_l)` at the
/// node (exact own-slit value `ln|z - w₀_l|` on slit `l`).
fn log_column_re(sm: &SlitMap, bp: &BoundaryPoint) -> f64 {
    let z = bp.z();
    let blaschke = (z - sm.w0).norm().ln();
    match bp {
        BoundaryPoint::Slit { s: _, slit: _, .. } => {
            // On any slit node of the own map ln|φ| = 0; foreign slits are
            // handled below through the generic branch.
            let pr = sm.inv_phi(z);
            let lnphi = if (pr.norm() - 1.0).abs() < 1e-9 {
                0.0
            } else {
                -pr.norm().ln()
            };
            lnphi + blaschke
        }
        _ => -sm.inv_phi(z).norm().ln() + blaschke,
    }
}

impl HullSolution {
    /// Complex value of the analytic completion at `z`, normalized so the
    /// imaginary part vanishes at the origin.  Only meaningful pointwise
    /// when logarithmic columns are absent or their coefficients vanish;
    /// the real part is always single-valued.
    pub fn complex_value(&self, z: Complex64) -> Complex64 {
        let layout = ColumnLayout {
            nsl: self.domain_slits,
            nhull: self.spokes.len(),
            poly_degree: self.poly_degree,
            slit_modes: self.slit_modes,
            hull_modes: self.hull_modes,
        };
        let bp = BoundaryPoint::Circle { z }; // generic evaluation path
        let vals = complex_columns(&self.spokes, &self.maps, &layout, &bp);
        let mut v = Complex64::new(0.0, 0.0);
        for (c, cv) in vals.iter().enumerate() {
            v += self.coeffs[c] * cv;
        }
        if self.has_log_cols {
            for l in 0..self.domain_slits {
                let sm = &self.maps[l];
                let lphi = -(sm.inv_phi(z).ln());
                let lbl = (z - sm.w0).ln();
                v += self.coeffs[layout.base_cols() + l] * (lphi + lbl);
            }
        }
        v - Complex64::new(0.0, self.im_shift)
    }

    /// Real part (the solved harmonic function) at `z`.
    pub fn value(&self, z: Complex64) -> f64 {
        let layout = ColumnLayout {
            nsl: self.domain_slits,
            nhull: self.spokes.len(),
            poly_degree: self.poly_degree,
            slit_modes: self.slit_modes,
            hull_modes: self.hull_modes,
        };
        let bp = BoundaryPoint::Circle { z };
        let vals = complex_columns(&self.spokes, &self.maps, &layout, &bp);
        let mut v = 0.0;
        for (c, cv) in vals.iter().enumerate() {
            v += self.coeffs[c] * cv.re;
        }
        if self.has_log_cols {
            for l in 0..self.domain_slits {
                let sm = &self.maps[l];
                v += self.coeffs[layout.base_cols() + l]
                    * (-sm.inv_phi(z).norm().ln() + (z - sm.w0).norm().ln());
            }
        }
        v
    }

    /// Derivative of the analytic completion at `z` (away from hull tips).
    pub fn complex_deriv(&self, z: Complex64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let mut v = Complex64::new(0.0, 0.0);
        let mut c = 1; // skip the constant column
        let mut zp = Complex64::new(1.0, 0.0);
        for p in 1..=self.poly_degree {
            let d = (p as f64) * zp;
            v += self.coeffs[c] * d + self.coeffs[c + 1] * (i * d);
            zp *= z;
            c += 2;
        }
        for sm in &self.maps {
            let (pr, ratio) = sm.inv_phi_and_ratio(z);
            let mut pk = Complex64::new(1.0, 0.0);
            for k in 1..=self.slit_modes {
                pk *= pr;
                let d = -(k as f64) * pk * ratio;
                v += self.coeffs[c] * d + self.coeffs[c + 1] * (i * d);
                c += 2;
            }
        }
        for sp in &self.spokes {
            let zeta = sp.zeta(z);
            let dz = sp.zeta_deriv(z, zeta);
            let mut zk = Complex64::new(1.0, 0.0);
            for p in 1..=self.hull_modes {
                let d = (p as f64) * zk * dz;
                v += self.coeffs[c] * d + self.coeffs[c + 1] * (i * d);
                zk *= zeta;
                c += 2;
            }
            for corner in [1.0, -1.0] {
                let tail = corner_taylor(corner, self.hull_modes);
                let d = corner_tail_deriv(zeta, corner, &tail) * dz;
                v += self.coeffs[c] * d + self.coeffs[c + 1] * (i * d);
                c += 2;
            }
        }
        if self.has_log_cols {
            for l in 0..self.domain_slits {
                let sm = &self.maps[l];
                let (_, ratio) = sm.inv_phi_and_ratio(z);
                v += self.coeffs[c] * (ratio + (z - sm.w0).finv());
                c += 1;
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Canonical map
// ---------------------------------------------------------------------------

/// Canonical map `Φ_A` of a slit disk minus hulls onto a standard domain.
pub struct CanonicalMap {
    backend: Backend,
    image: Moduli,
    /// `Φ_A'(0) > 0`.
    pub origin_deriv: f64,
    /// Boundary residual of the underlying solve (zero for closed form).
    pub residual: f64,
}

enum Backend {
    /// Disk with one radial spoke: exact Loewner relation.
    ClosedForm { t0: f64, alpha: f64 },
    /// Collocation solution `p = log(Φ/z)`.
    Numeric { p: HullSolution },
}

impl CanonicalMap {
    /// Builds the canonical map removing the hulls from the domain.
    pub fn build(domain: &StandardDomain, hulls: &[Hull], tol: f64) -> Result<Self> {
        let spokes = hulls_to_spokes(domain, hulls)?;
        if domain.num_slits() == 0 && spokes.len() == 1 {
            let sp = &spokes[0];
            let t0 = spoke_capacity(1.0 - sp.a);
            return Ok(CanonicalMap {
                backend: Backend::ClosedForm {
                    t0,
                    alpha: sp.alpha,
                },
                image: Moduli::disk(),
                origin_deriv: t0.exp(),
                residual: 0.0,
            });
        }
        let params = HullSolverParams {
            tol,
            ..HullSolverParams::default()
        };
        let solver = HullDomainSolver::new(domain, hulls, params)?;
        let p = solver.solve(
            &|bp| match bp {
                BoundaryPoint::Circle { .. } => 0.0,
                BoundaryPoint::HullSide { z, .. } => -z.norm().ln(),
                BoundaryPoint::Slit { .. } => unreachable!("free slit constants"),
            },
            SlitCondition::FreeConstants,
        )?;

        // Image moduli: radii shift by the slit constants, angles from the
        // extrema of arg Φ along each slit.
        let m = domain.moduli();
        let mut image_m = Vec::new();
        let mut image_th = Vec::new();
        let mut image_thp = Vec::new();
        for (j, sm) in solver.maps.iter().enumerate() {
            image_m.push(m.m[j] * p.slit_constants[j].exp());
            let lift = |s: f64| {
                let z = sm.boundary_point(s);
                // arg Φ = arg z + Im p, continuously lifted below.
                z.arg() + p.complex_value(z).im
            };
            let align = |raw: f64, anchor: f64| {
                let mut v = raw;
                while v - anchor > PI {
                    v -= 2.0 * PI;
                }
                while v - anchor < -PI {
                    v += 2.0 * PI;
                }
                v
            };
            let nscan = 160;
            let mut best_min = (f64::INFINITY, 0.0);
            let mut best_max = (f64::NEG_INFINITY, 0.0);
            let mut prev = lift(1e-3);
            for i in 0..=nscan {
                let s = 1e-3 + (2.0 * PI - 2e-3) * (i as f64) / (nscan as f64);
                // Continuous lift of the image angle along the slit.
                let val = align(lift(s), prev);
                prev = val;
                if val < best_min.0 {
                    best_min = (val, s);
                }
                if val > best_max.0 {
                    best_max = (val, s);
                }
            }
            // Parabolic refinement of the extrema; realign every raw value
            // to the lifted branch of the scan.
            let refine = |s0: f64, v0: f64, sign: f64| {
                let h = (2.0 * PI) / (nscan as f64);
                let mut s = s0;
                let mut best = v0;
                for _ in 0..2 {
                    let f_0 = align(lift(s), best);
                    let f_m = align(lift(s - h), f_0);
                    let f_p = align(lift(s + h), f_0);
                    let denom = f_m - 2.0 * f_0 + f_p;
                    if sign * denom >= 0.0 || denom.abs() < 1e-14 {
                        break;
                    }
                    let ds = 0.5 * (f_m - f_p) / denom * h;
                    if ds.abs() < h {
                        s += ds;
                    }
                    best = align(lift(s), f_0);
                }
                best
            };
            let lo = refine(best_min.1, best_min.0, -1.0);
            let hi = refine(best_max.1, best_max.0, 1.0);
            image_th.push(lo);
            image_thp.push(hi);
        }
        let image = Moduli::new(image_m, image_th, image_thp);
        let p0 = p.complex_value(Complex64::new(0.0, 0.0));
        Ok(CanonicalMap {
            origin_deriv: p0.re.exp(),
            residual: p.residual,
            backend: Backend::Numeric { p },
            image,
        })
    }

    /// Moduli of the image standard domain `E*`.
    pub fn image_moduli(&self) -> &Moduli {
        &self.image
    }

    /// `Φ_A(z)`.
    pub fn phi(&self, z: Complex64) -> Result<Complex64> {
        match &self.backend {
            Backend::ClosedForm { t0, alpha } => spoke_map_at_angle(*t0, *alpha, z),
            Backend::Numeric { p } => Ok(z * p.complex_value(z).exp()),
        }
    }

    /// `Φ_A'(z)`.
    pub fn dphi(&self, z: Complex64) -> Result<Complex64> {
        match &self.backend {
            Backend::ClosedForm { t0, alpha } => spoke_map_deriv_at_angle(*t0, *alpha, z),
            Backend::Numeric { p } => {
                let pv = p.complex_value(z);
                let dp = p.complex_deriv(z);
                Ok((1.0 + z * dp) * pv.exp())
            }
        }
    }

    /// `Φ_A⁻¹(w)`; `seed` starts the Newton iteration for the numeric
    /// backend (ignored in closed form).
    pub fn invert(&self, w: Complex64, seed: Complex64) -> Result<Complex64> {
        match &self.backend {
            Backend::ClosedForm { t0, alpha } => spoke_inverse_at_angle(*t0, *alpha, w),
            Backend::Numeric { .. } => {
                let mut z = seed;
                for _ in 0..40 {
                    let f = self.phi(z)? - w;
                    if f.norm() < 1e-13 * (1.0 + w.norm()) {
                        return Ok(z);
                    }
                    let d = self.dphi(z)?;
                    if d.norm() < 1e-14 {
                        break;
                    }
                    let mut step = f / d;
                    // Damp overly long steps to stay inside the domain.
                    if step.norm() > 0.2 {
                        step *= 0.2 / step.norm();
                    }
                    z -= step;
                    if z.norm() > 1.0 + 1e-6 {
                        z /= z.norm() + 1e-12;
                    }
                }
                let f = self.phi(z)? - w;
                if f.norm() < 1e-9 * (1.0 + w.norm()) {
                    Ok(z)
                } else {
                    Err(KlError::BranchFailure(format!(
                        "canonical map inversion stalled at defect {:.3e}",
                        f.norm()
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Hull;

    #[test]
    fn capacity_and_tip_are_inverse() {
        for &len in &[0.1, 0.3, 0.45, 0.7] {
            let t = spoke_capacity(len);
            assert!(t > 0.0);
            let a = spoke_tip_radius(t);
            assert!((a - (1.0 - len)).abs() < 1e-12, "len {len}: a = {a}");
        }
    }

    #[test]
    fn spoke_relation_roundtrip() {
        let t = 0.4;
        for &z in &[
            Complex64::new(0.3, 0.2),
            Complex64::new(-0.2, 0.6),
            Complex64::new(0.1, -0.7),
        ] {
            let g = spoke_relation(t, z).unwrap();
            assert!(g.norm() < 1.0);
            let back = spoke_relation(-t, g).unwrap();
            assert!((back - z).norm() < 1e-12, "roundtrip {back} vs {z}");
        }
    }

    #[test]
    fn spoke_relation_derivative_matches_fd() {
        let t = 0.3;
        let z = Complex64::new(0.25, 0.4);
        let g = spoke_relation(t, z).unwrap();
        let d = spoke_relation_deriv(t, z, g);
        let h = 1e-7;
        let fd = (spoke_relation(t, z + h).unwrap() - spoke_relation(t, z - h).unwrap())
            / (2.0 * h);
        assert!((d - fd).norm() < 1e-6, "{d} vs {fd}");
    }

    #[test]
    fn spoke_map_normalization() {
        let t = 0.25;
        // g(0) = 0, g'(0) = eᵗ.
        let g0 = spoke_relation(t, Complex64::new(0.0, 0.0)).unwrap();
        assert!(g0.norm() < 1e-15);
        let h = 1e-8;
        let g = spoke_relation(t, Complex64::new(h, 0.0)).unwrap();
        assert!((g.re / h - t.exp()).abs() < 1e-6);
    }

    #[test]
    fn spoke_map_on_slit_fails_branch() {
        let t = spoke_capacity(0.3);
        // A point on the grown slit [-1, -0.7] at angle π.
        match spoke_relation(t, Complex64::new(-0.85, 0.0)) {
            Err(KlError::BranchFailure(_)) => {}
            other => panic!("expected branch failure, got {other:?}"),
        }
    }

    #[test]
    fn closed_form_canonical_map_for_disk_spoke() {
        let dom = StandardDomain::new(Moduli::disk()).unwrap();
        let hull = Hull::radial_spoke(PI, 0.7);
        let cm = CanonicalMap::build(&dom, &[hull], 1e-8).unwrap();
        assert_eq!(cm.image_moduli().num_slits(), 0);
        // Φ(0) = 0, Φ'(0) = e^{T₀} with the spoke capacity.
        let t0 = spoke_capacity(0.3);
        assert!((cm.origin_deriv - t0.exp()).abs() < 1e-12);
        // Boundary point far from the hull stays on the circle.
        let z = Complex64::from_polar(1.0, 0.3);
        let w = cm.phi(z).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-10);
        // Inverse undoes the map.
        let z2 = cm.invert(w, z).unwrap();
        assert!((z2 - z).norm() < 1e-10);
    }

    #[test]
    fn numeric_canonical_map_matches_closed_form() {
        // Force the numeric backend on the pure-disk configuration by
        // solving through the collocation path directly.
        let dom = StandardDomain::new(Moduli::disk()).unwrap();
        let hull = Hull::radial_spoke(PI, 0.7);
        let solver = HullDomainSolver::new(&dom, &[hull.clone()], HullSolverParams::default())
            .unwrap();
        let p = solver
            .solve(
                &|bp| match bp {
                    BoundaryPoint::Slit { .. } => unreachable!(),
                    BoundaryPoint::Circle { .. } => 0.0,
                    BoundaryPoint::HullSide { z, .. } => -z.norm().ln(),
                },
                SlitCondition::FreeConstants,
            )
            .unwrap();
        assert!(p.residual < 1e-8, "residual {}", p.residual);
        let t0 = spoke_capacity(0.3);
        for &z in &[
            Complex64::new(0.4, 0.1),
            Complex64::new(-0.2, 0.5),
            Complex64::new(0.0, -0.6),
            Complex64::new(0.55, 0.55),
        ] {
            let phi_num = z * p.complex_value(z).exp();
            let phi_cf = spoke_map_at_angle(t0, PI, z).unwrap();
            assert!(
                (phi_num - phi_cf).norm() < 1e-7,
                "z = {z}: {phi_num} vs {phi_cf}"
            );
        }
        // Derivative at a sample point.
        let z = Complex64::new(0.3, -0.2);
        let dp = p.complex_deriv(z);
        let pv = p.complex_value(z);
        let dphi_num = (1.0 + z * dp) * pv.exp();
        let dphi_cf = spoke_map_deriv_at_angle(t0, PI, z).unwrap();
        assert!((dphi_num - dphi_cf).norm() < 1e-6);
    }

    #[test]
    fn canonical_map_with_slit_produces_valid_image() {
        let dom = StandardDomain::new(Moduli::new(vec![0.5], vec![1.0], vec![2.0])).unwrap();
        let hull = Hull::radial_spoke(PI, 0.7);
        let cm = CanonicalMap::build(&dom, &[hull], 1e-8).unwrap();
        let im = cm.image_moduli();
        assert_eq!(im.num_slits(), 1);
        assert!(crate::domain::validate_moduli(im).is_empty(), "{im:?}");
        // The slit moves outward: removing a hull increases the radius in
        // the image normalization (the domain shrinks, capacity grows).
        assert!(im.m[0] > 0.5, "image radius {}", im.m[0]);
        assert!(cm.origin_deriv > 1.0);
        // Circle points away from the hull map to circle points.
        let z = Complex64::from_polar(1.0, 0.2);
        let w = cm.phi(z).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-8);
        // Slit boundary points map to the image radius.
        let sm = SlitMap::new(0.5, 1.0, 2.0);
        let zs = sm.boundary_point(1.1);
        let ws = cm.phi(zs).unwrap();
        assert!(
            (ws.norm() - im.m[0]).abs() < 1e-7,
            "image slit radius {} vs {}",
            ws.norm(),
            im.m[0]
        );
        // Inverse works from a nearby seed.
        let z0 = Complex64::new(0.3, 0.3);
        let w0 = cm.phi(z0).unwrap();
        let back = cm.invert(w0, z0 * 0.9).unwrap();
        assert!((back - z0).norm() < 1e-9);
    }

    #[test]
    fn bent_hull_is_rejected() {
        let dom = StandardDomain::new(Moduli::disk()).unwrap();
        let hull = Hull {
            points: vec![[1.0, 0.0], [0.8, 0.1], [0.7, 0.0]],
        };
        match CanonicalMap::build(&dom, &[hull], 1e-8) {
            Err(KlError::UnsupportedHull(_)) => {}
            other => panic!("expected unsupported hull, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn hull_crossing_slit_is_rejected() {
        let dom = StandardDomain::new(Moduli::new(vec![0.5], vec![2.8], vec![3.5])).unwrap();
        let hull = Hull::radial_spoke(PI, 0.3);
        match CanonicalMap::build(&dom, &[hull], 1e-8) {
            Err(KlError::UnsupportedHull(_)) => {}
            other => panic!("expected unsupported hull, got {:?}", other.map(|_| ())),
        }
    }
}
