use crate::error::Error;
use crate::numerics::{solve_linear, Matrix, Vector};
use crate::Result;

use super::{InversionResult, Method};

/// Damped Newton on f(x) = y with a halving line search. Evaluation
/// errors at a trial point just shrink the step; a singular Jacobian at
/// the current iterate is structural and aborts.
///
/// Non-convergence within the budget is an Ok result with
/// `converged == false` and the best iterate seen.
pub fn newton_invert<F, J>(
    f: F,
    jac: J,
    y: &Vector,
    x0: &Vector,
    tol: f64,
    max_iters: usize,
) -> Result<InversionResult>
where
    F: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Matrix>,
{
    let target_tol = tol * (1.0 + y.norm());
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    let mut res = (&fx - y).norm();
    let mut best = (x.clone(), res);
    let mut iters = 0usize;
    while iters < max_iters && res > target_tol {
        iters += 1;
        let j = jac(&x)?;
        let r = &fx - y;
        let step = match solve_linear(&j, &r) {
            Ok(s) => s,
            Err(Error::SingularMatrix) => return Err(Error::SingularJacobian { iter: iters }),
            Err(e) => return Err(e),
        };
        let mut s = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &x - &step.scaled(s);
            if let Ok(fc) = f(&cand) {
                let rc = (&fc - y).norm();
                if rc < res {
                    x = cand;
                    fx = fc;
                    res = rc;
                    improved = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !improved {
            break; // no descent in this direction at any step size
        }
        if res < best.1 {
            best = (x.clone(), res);
        }
    }
    let converged = best.1 <= target_tol;
    Ok(InversionResult {
        x: best.0,
        residual: best.1,
        iters,
        method: Method::Newton,
        converged,
        ball_radius: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed};

    #[test]
    fn solves_a_linear_system_in_one_step() {
        let a = seeded_gaussian(4, 4, Seed(1));
        let xtrue = seeded_gaussian_vector(4, Seed(2));
        let y = a.matvec(&xtrue);
        let a2 = a.clone();
        let r = newton_invert(
            |x| Ok(a.matvec(x)),
            |_| Ok(a2.clone()),
            &y,
            &Vector::zeros(4),
            1e-12,
            10,
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.iters <= 2);
        assert!((&r.x - &xtrue).norm() < 1e-9);
    }

    #[test]
    fn cube_root_via_newton() {
        let f = |x: &Vector| Ok(Vector::new(vec![x[0] * x[0] * x[0]]));
        let j = |x: &Vector| Ok(Matrix::from_rows(vec![vec![3.0 * x[0] * x[0]]]));
        let y = Vector::new(vec![27.0]);
        let r = newton_invert(f, j, &y, &Vector::new(vec![1.0]), 1e-12, 100).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let f = |x: &Vector| Ok(Vector::new(vec![x[0] * x[0]]));
        let j = |_: &Vector| Ok(Matrix::zeros(1, 1));
        let y = Vector::new(vec![4.0]);
        let err = newton_invert(f, j, &y, &Vector::new(vec![1.0]), 1e-12, 10);
        assert!(matches!(err, Err(Error::SingularJacobian { iter: 1 })));
    }

    #[test]
    fn budget_exhaustion_is_not_an_error() {
        // x + x^3 = 1e9 from zero: Newton overshoots to 1e9 and then
        // shrinks by about a third per step, far too slow for 3 steps
        let f = |x: &Vector| Ok(Vector::new(vec![x[0] + x[0] * x[0] * x[0]]));
        let j = |x: &Vector| Ok(Matrix::from_rows(vec![vec![1.0 + 3.0 * x[0] * x[0]]]));
        let y = Vector::new(vec![1e9]);
        let r = newton_invert(f, j, &y, &Vector::new(vec![0.0]), 1e-14, 3).unwrap();
        assert!(!r.converged);
        assert!(r.residual.is_finite());
    }
}
