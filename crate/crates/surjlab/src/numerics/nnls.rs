use crate::error::Error;
use crate::Result;

use super::{lstsq, Matrix, Vector};

/// Nonnegative least squares by the Lawson-Hanson active-set method:
/// minimizes ||A x - b|| subject to x >= 0 entrywise.
///
/// Returns the minimizer and the residual norm at it. The returned x is
/// exactly nonnegative (passive entries solve an unconstrained
/// subproblem with positive values; active entries are literal zeros),
/// and the KKT conditions hold to 1e-9 relative: every active column
/// has gradient w_j = (A^T (b - A x))_j <= kkt_tol.
///
/// The residual is the heart of the unreachability certificates built
/// on top, so no shortcut that could overstate it is taken.
///
/// Errors with [`Error::MaxIterations`] if the active set cycles past
/// `10 * (rows + cols)` outer iterations.
pub fn nnls(a: &Matrix, b: &Vector) -> Result<(Vector, f64)> {
    if b.dim() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.dim(),
            context: "nnls (rhs length)",
        });
    }
    let (m, n) = (a.rows(), a.cols());
    let kkt_tol = 1e-9 * (1.0 + a.tr_matvec(b).norm_inf());
    let max_outer = 10 * (m + n);

    let mut passive = vec![false; n];
    let mut x = Vector::zeros(n);
    let mut outer = 0;
    loop {
        let residual = b - &a.matvec(&x);
        let w = a.tr_matvec(&residual);
        // most violated KKT multiplier among the active (zero) entries
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > kkt_tol {
                if best.map_or(true, |(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((enter, _)) = best else {
            return Ok((x, residual.norm()));
        };
        outer += 1;
        if outer > max_outer {
            return Err(Error::MaxIterations { iters: outer });
        }
        passive[enter] = true;

        loop {
            // unconstrained least squares on the passive columns
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = Matrix::from_fn(m, cols.len(), |i, k| a[(i, cols[k])]);
            let z_sub = lstsq(&sub, b)?;
            let mut z = Vector::zeros(n);
            for (k, &j) in cols.iter().enumerate() {
                z[j] = z_sub[k];
            }
            let min_passive = cols.iter().map(|&j| z[j]).fold(f64::INFINITY, f64::min);
            if min_passive > 0.0 {
                x = z;
                break;
            }
            // step toward z until the first passive entry hits zero
            let mut alpha = f64::INFINITY;
            for &j in &cols {
                if z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                // z <= 0 with x already at 0 on those entries; demote them
                alpha = 0.0;
            }
            for j in 0..n {
                if passive[j] {
                    x[j] = x[j] + alpha * (z[j] - x[j]);
                }
            }
            for &j in &cols {
                if x[j] <= f64::EPSILON * 16.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                // everything got demoted; the entering choice was a dud
                return Ok((Vector::zeros(n), b.norm()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed};

    #[test]
    fn scalar_unreachable_target() {
        // A = [1], b = -1: best nonnegative x is 0, residual 1
        let a = Matrix::from_rows(vec![vec![1.0]]);
        let (x, res) = nnls(&a, &Vector::new(vec![-1.0])).unwrap();
        assert_eq!(x.as_slice(), &[0.0]);
        assert_eq!(res, 1.0);
    }

    #[test]
    fn reachable_target_is_hit_exactly() {
        let a = Matrix::identity(3);
        let b = Vector::new(vec![1.0, 2.0, 3.0]);
        let (x, res) = nnls(&a, &b).unwrap();
        assert!((&x - &b).norm() <= 1e-12);
        assert!(res <= 1e-12);
    }

    #[test]
    fn random_feasible_targets_reach_zero_residual() {
        for seed in 0..30u64 {
            let a = seeded_gaussian(3, 5, Seed(seed));
            // b = A x_true with x_true >= 0 => residual must vanish
            let raw = seeded_gaussian_vector(5, Seed(seed + 500));
            let x_true = Vector::from_fn(5, |i| raw[i].abs());
            let b = a.matvec(&x_true);
            let (x, res) = nnls(&a, &b).unwrap();
            assert!(res <= 1e-9 * (1.0 + b.norm()), "seed {seed}: residual {res}");
            assert!(x.iter().all(|&v| v >= 0.0), "seed {seed}: negative entry");
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        for seed in 0..30u64 {
            let a = seeded_gaussian(4, 6, Seed(seed + 77));
            let b = seeded_gaussian_vector(4, Seed(seed + 177));
            let (x, res) = nnls(&a, &b).unwrap();
            let r = &b - &a.matvec(&x);
            assert!((r.norm() - res).abs() <= 1e-12);
            let w = a.tr_matvec(&r);
            let tol = 1e-9 * (1.0 + a.tr_matvec(&b).norm_inf());
            for j in 0..6 {
                assert!(x[j] >= 0.0);
                if x[j] > 0.0 {
                    // gradient vanishes on the passive set
                    assert!(w[j].abs() <= tol * 10.0, "seed {seed}: w[{j}] = {}", w[j]);
                } else {
                    assert!(w[j] <= tol, "seed {seed}: w[{j}] = {}", w[j]);
                }
            }
        }
    }

    #[test]
    fn residual_lower_bounds_cone_distance() {
        // any nonnegative z gives ||A z - b|| >= nnls residual
        for seed in 0..10u64 {
            let a = seeded_gaussian(3, 4, Seed(seed + 303));
            let b = seeded_gaussian_vector(3, Seed(seed + 404));
            let (_, res) = nnls(&a, &b).unwrap();
            for t in 0..200u64 {
                let raw = seeded_gaussian_vector(4, Seed(seed * 1000 + t));
                let z = Vector::from_fn(4, |i| raw[i].abs());
                let dist = (&a.matvec(&z) - &b).norm();
                assert!(dist >= res - 1e-9, "seed {seed} trial {t}");
            }
        }
    }
}
