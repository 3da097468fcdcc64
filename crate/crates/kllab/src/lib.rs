//! Numerical laboratory for radial Komatu-Loewner evolution in multiply
//! connected circular slit disks.
//!
//! A *standard domain* here is the open unit disk with `n - 1` concentric
//! circular arc slits removed,
//!
//! ```text
//!     D = { |z| < 1 }  \  ⋃_j { m_j e^{iφ} : θ_j ≤ φ ≤ θ'_j },
//! ```
//!
//! with the origin and the boundary point `1` marked.  The crate provides
//!
//! * the conformal machinery of such domains: Green function, harmonic
//!   measures of the slits, the period matrix, canonical maps back onto
//!   standard domains after a hull is removed, the right half-plane kernel
//!   that drives the evolution, conformal radius and the domain constant
//!   (module [`kernel`]);
//! * the coupled radial Komatu-Loewner equation for the uniformizing maps
//!   `g_t` together with the motion of the slit moduli, trace extraction by
//!   backward flow, and the capacity increment identity (module [`loewner`]);
//! * stochastic driving of the moduli system by Brownian motion on the
//!   boundary circle with a domain-dependent drift, yielding candidate
//!   radial SLE in the slit disk (module [`sle`]);
//! * independent verification machinery: a finite difference Laplace
//!   oracle, a walk-on-spheres sampler, Hadamard variational ratio and
//!   boundary expansion experiments, and a locality test at `κ = 6`
//!   (module [`verify`]).
//!
//! All boundary-value problems are solved by least-squares collocation with
//! analytic bases adapted to the slit geometry, so the typical accuracy for
//! well separated slits is near machine precision at modest expansion
//! orders.

pub mod domain;
pub mod kernel;
pub mod loewner;
pub mod sle;
pub mod verify;

use thiserror::Error;

/// Errors produced by the numerical kernels and experiments.
#[derive(Debug, Error)]
pub enum KlError {
    /// Moduli vector violates the standard-domain invariants.
    #[error("invalid moduli: {0:?}")]
    InvalidModuli(Vec<String>),

    /// A collocation solve did not reach the requested tolerance at the
    /// maximum admissible expansion order.
    #[error("convergence failure: residual {residual:.3e} exceeds tolerance {tol:.3e} ({context})")]
    ConvergenceFailure {
        residual: f64,
        tol: f64,
        context: String,
    },

    /// An evaluation point is too close to a kernel singularity.
    #[error("pole proximity: |z - w| = {dist:.3e} below guard {guard:.3e}")]
    PoleProximity { dist: f64, guard: f64 },

    /// An ODE step produced a state outside the admissible moduli region.
    #[error("step rejected at t = {t:.6}: {reason}")]
    StepRejected { t: f64, reason: String },

    /// A flow iterate left the closed unit disk by more than the
    /// integration tolerance allows.
    #[error("left domain: |g| = {modulus:.9} at t = {t:.6}")]
    LeftDomain { modulus: f64, t: f64 },

    /// Backward flow for a trace point failed its roundtrip residual check.
    #[error("trace unresolved at t = {t:.6}: residual {residual:.3e} exceeds {tol:.3e}")]
    TraceUnresolved { t: f64, residual: f64, tol: f64 },

    /// A stochastic path could not be continued.
    #[error("step collapse on path {path} at t = {t:.6}: {reason}")]
    StepCollapse { path: u64, t: f64, reason: String },

    /// A variational increment fell below the resolvable threshold.
    #[error("increment underflow: |delta| = {delta:.3e} below floor {floor:.3e}")]
    IncrementUnderflow { delta: f64, floor: f64 },

    /// A closed-form branch inversion left its admissible sheet.
    #[error("branch failure: {0}")]
    BranchFailure(String),

    /// Too few stochastic paths survived the filters of an experiment.
    #[error("insufficient surviving paths: {got} of {want} required")]
    InsufficientSurvivingPaths { got: usize, want: usize },

    /// Hull geometry outside the supported class.
    #[error("unsupported hull geometry: {0}")]
    UnsupportedHull(String),

    /// A discretized linear system is degenerate or under-resolved.
    #[error("singular system: {0}")]
    SingularSystem(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, KlError>;
