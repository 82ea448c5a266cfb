//! Dense small-scale numerics: vectors, matrices, factorizations,
//! nonnegative least squares, and seeded Gaussian sampling.
//!
//! Everything here targets desk-scale problems (dimension at most a few
//! dozen), so the implementations favor exact, auditable control over
//! pivoting thresholds and determinism rather than throughput.

mod linalg;
mod matrix;
mod nnls;
mod rng;
mod vector;

pub use linalg::{det_sign, det_sign_logabs, lstsq, solve_linear, sym_eigen};
pub use matrix::Matrix;
pub use nnls::nnls;
pub use rng::{seeded_gaussian, seeded_gaussian_vector, Seed};
pub use vector::Vector;

/// Sign-preserving real cube root: the unique real r with r^3 == s.
pub fn real_cbrt(s: f64) -> f64 {
    s.cbrt()
}

/// Central finite-difference Jacobian of `map` at `x` with step `h`.
///
/// This is the reference oracle every analytic Jacobian in the crate is
/// tested against; it is deliberately simple.
pub fn finite_difference_jacobian<F>(map: F, x: &Vector, h: f64) -> crate::Result<Matrix>
where
    F: Fn(&Vector) -> crate::Result<Vector>,
{
    let d = x.dim();
    let mut cols: Vec<Vector> = Vec::with_capacity(d);
    for j in 0..d {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += h;
        lo[j] -= h;
        let fp = map(&hi)?;
        let fm = map(&lo)?;
        cols.push((&fp - &fm).scaled(1.0 / (2.0 * h)));
    }
    let out_dim = cols[0].dim();
    Ok(Matrix::from_fn(out_dim, d, |i, j| cols[j][i]))
}
