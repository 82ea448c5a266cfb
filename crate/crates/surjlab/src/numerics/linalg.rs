use crate::error::Error;
use crate::Result;

use super::{Matrix, Vector};

/// Relative pivot threshold below which a factorization is treated as
/// singular.
const PIVOT_REL_TOL: f64 = 1e-12;

struct LuFactors {
    /// Packed L (unit lower, below diagonal) and U (upper).
    lu: Matrix,
    perm: Vec<usize>,
    /// Parity of the row permutation: +1.0 or -1.0.
    perm_sign: f64,
}

fn lu_factor(a: &Matrix) -> LuFactors {
    assert!(a.is_square(), "LU factorization needs a square matrix");
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut perm_sign = 1.0;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            perm.swap(k, p);
            perm_sign = -perm_sign;
        }
        let pivot = lu[(k, k)];
        if pivot == 0.0 {
            continue; // exactly singular; downstream checks catch it
        }
        for i in k + 1..n {
            let m = lu[(i, k)] / pivot;
            lu[(i, k)] = m;
            for j in k + 1..n {
                lu[(i, j)] -= m * lu[(k, j)];
            }
        }
    }
    LuFactors { lu, perm, perm_sign }
}

impl LuFactors {
    fn smallest_pivot(&self) -> f64 {
        let n = self.lu.rows();
        (0..n).map(|k| self.lu[(k, k)].abs()).fold(f64::INFINITY, f64::min)
    }

    fn solve(&self, b: &Vector) -> Vector {
        let n = self.lu.rows();
        let mut y = Vector::zeros(n);
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        let mut x = Vector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

/// Solves A x = b by partially pivoted LU with two rounds of iterative
/// refinement, so the returned residual satisfies
/// `||Ax - b|| <= 1e-10 * (1 + ||b||)` on systems with condition number
/// up to about 1e6.
///
/// Returns [`Error::SingularMatrix`] when a pivot falls below
/// `1e-12 * ||A||_F`.
pub fn solve_linear(a: &Matrix, b: &Vector) -> Result<Vector> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
            context: "solve_linear (matrix must be square)",
        });
    }
    if b.dim() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.dim(),
            context: "solve_linear (rhs length)",
        });
    }
    let norm = a.frobenius_norm();
    let factors = lu_factor(a);
    if norm == 0.0 || factors.smallest_pivot() <= PIVOT_REL_TOL * norm {
        return Err(Error::SingularMatrix);
    }
    let mut x = factors.solve(b);
    // Refinement drives the residual to the backward-stable floor even
    // when conditioning eats most of the raw solve's accuracy.
    for _ in 0..2 {
        let r = b - &a.matvec(&x);
        let dx = factors.solve(&r);
        x = &x + &dx;
    }
    Ok(x)
}

/// Sign of det(A): -1, 0, or +1, with 0 meaning the magnitude of the
/// determinant falls below the degeneracy threshold `1e-12 * ||A||_F^d`.
pub fn det_sign(a: &Matrix) -> i32 {
    assert!(a.is_square(), "det_sign needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return 1; // det of the empty matrix is 1
    }
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return 0;
    }
    let factors = lu_factor(a);
    let mut sign = factors.perm_sign;
    let mut log_abs = 0.0;
    for k in 0..n {
        let p = factors.lu[(k, k)];
        if p == 0.0 {
            return 0;
        }
        sign *= p.signum();
        log_abs += p.abs().ln();
    }
    // compare |det| against 1e-12 * norm^d in log space to dodge overflow
    if log_abs <= (1e-12f64).ln() + n as f64 * norm.ln() {
        return 0;
    }
    sign as i32
}

/// Raw sign and `ln|det(A)|`, with no relative degeneracy threshold: the
/// sign is 0 only when a pivot is exactly zero (then the log is -inf).
/// Callers that know the natural scale of their problem apply their own
/// cutoff; [`det_sign`] bakes in a matrix-relative one instead.
pub fn det_sign_logabs(a: &Matrix) -> (i32, f64) {
    assert!(a.is_square(), "det_sign_logabs needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return (1, 0.0);
    }
    if a.frobenius_norm() == 0.0 {
        return (0, f64::NEG_INFINITY);
    }
    let factors = lu_factor(a);
    let mut sign = factors.perm_sign;
    let mut log_abs = 0.0;
    for k in 0..n {
        let p = factors.lu[(k, k)];
        if p == 0.0 {
            return (0, f64::NEG_INFINITY);
        }
        sign *= p.signum();
        log_abs += p.abs().ln();
    }
    (sign as i32, log_abs)
}

impl Matrix {
    /// Inverse via the same pivoted factorization as [`solve_linear`].
    pub fn inverse(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: self.cols(),
                context: "inverse (matrix must be square)",
            });
        }
        let n = self.rows();
        let norm = self.frobenius_norm();
        let factors = lu_factor(self);
        if norm == 0.0 || factors.smallest_pivot() <= PIVOT_REL_TOL * norm {
            return Err(Error::SingularMatrix);
        }
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let e = Vector::from_fn(n, |i| if i == j { 1.0 } else { 0.0 });
            let mut col = factors.solve(&e);
            for _ in 0..2 {
                let r = &e - &self.matvec(&col);
                col = &col + &factors.solve(&r);
            }
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }
}

/// Least squares min ||A x - b|| by Householder QR. Requires
/// `rows >= cols` and numerically full column rank.
pub fn lstsq(a: &Matrix, b: &Vector) -> Result<Vector> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m,
            context: "lstsq (needs rows >= cols)",
        });
    }
    if b.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.dim(),
            context: "lstsq (rhs length)",
        });
    }
    let norm = a.frobenius_norm();
    let mut r = a.clone();
    let mut rhs = b.clone();
    for k in 0..n {
        // Householder reflector for column k
        let mut alpha = 0.0;
        for i in k..m {
            alpha += r[(i, k)] * r[(i, k)];
        }
        alpha = alpha.sqrt();
        if alpha == 0.0 {
            return Err(Error::SingularMatrix);
        }
        if r[(k, k)] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; m - k];
        v[0] = r[(k, k)] - alpha;
        for i in k + 1..m {
            v[i - k] = r[(i, k)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            return Err(Error::SingularMatrix);
        }
        r[(k, k)] = alpha;
        for i in k + 1..m {
            r[(i, k)] = 0.0;
        }
        for j in k + 1..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * r[(i, j)];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in k..m {
                r[(i, j)] -= scale * v[i - k];
            }
        }
        let mut dot = 0.0;
        for i in k..m {
            dot += v[i - k] * rhs[i];
        }
        let scale = 2.0 * dot / vnorm2;
        for i in k..m {
            rhs[i] -= scale * v[i - k];
        }
    }
    // back substitution on the n x n upper block
    let mut x = Vector::zeros(n);
    for i in (0..n).rev() {
        let diag = r[(i, i)];
        if diag.abs() <= 1e-13 * norm.max(1e-300) {
            return Err(Error::SingularMatrix);
        }
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / diag;
    }
    Ok(x)
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues (ascending) and the matching
/// eigenvectors as columns. Intended for the small dimensions this crate
/// works at.
pub fn sym_eigen(a: &Matrix) -> Result<(Vector, Matrix)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
            context: "sym_eigen (matrix must be square)",
        });
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let tol = 1e-14 * a.frobenius_norm().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let vals = Vector::from_fn(n, |k| m[(order[k], order[k])]);
    let vecs = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok((vals, vecs))
}
