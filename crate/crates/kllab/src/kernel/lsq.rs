//! Thin least-squares wrapper around the SVD.
//!
//! Collocation systems here are small (a few hundred rows) and moderately
//! ill conditioned near degenerate geometries, so a truncated SVD solve is
//! both cheap and robust.  The factorization is computed once per matrix
//! and reused for many right-hand sides.

use nalgebra::{DMatrix, DVector, Dyn};

/// SVD-backed least-squares solver with relative truncation.
#[derive(Debug)]
pub struct LsqSolver {
    svd: nalgebra::linalg::SVD<f64, Dyn, Dyn>,
    eps: f64,
}

impl LsqSolver {
    /// Factors the matrix; singular values below `rel_eps · σ_max` are
    /// treated as zero when solving.
    pub fn new(a: DMatrix<f64>, rel_eps: f64) -> Self {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        LsqSolver {
            svd,
            eps: rel_eps * smax.max(f64::MIN_POSITIVE),
        }
    }

    /// Minimum-norm least-squares solution for the right-hand side `b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.svd
            .solve(b, self.eps)
            .expect("SVD factors requested at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_overdetermined_system() {
        // Fit y = 2x + 1 through exact samples.
        let xs = [0.0, 0.5, 1.0, 1.5, 2.0];
        let a = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { xs[i] } else { 1.0 });
        let b = DVector::from_iterator(xs.len(), xs.iter().map(|x| 2.0 * x + 1.0));
        let s = LsqSolver::new(a, 1e-12);
        let x = s.solve(&b);
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_system_returns_min_norm_solution() {
        // Duplicate columns: solution mass splits evenly.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        let s = LsqSolver::new(a, 1e-12);
        let x = s.solve(&b);
        assert!((x[0] - 1.0).abs() < 1e-10);
        assert!((x[1] - 1.0).abs() < 1e-10);
    }
}
