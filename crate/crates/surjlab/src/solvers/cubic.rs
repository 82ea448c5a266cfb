use crate::error::Error;
use crate::numerics::{
    real_cbrt, seeded_gaussian_vector, solve_linear, sym_eigen, Matrix, Seed, Vector,
};
use crate::Result;

use super::newton::newton_invert;
use super::{HomotopyConfig, InversionResult, Method};

/// The linear-plus-cubic map F(x) = M x + (x . N x) x.
pub fn cubic_forward(m: &Matrix, n: &Matrix, x: &Vector) -> Vector {
    let q = x.dot(&n.matvec(x));
    &m.matvec(x) + &x.scaled(q)
}

/// dF/dx = M + (x . N x) I + x ((N + N^T) x)^T.
pub fn cubic_jacobian(m: &Matrix, n: &Matrix, x: &Vector) -> Matrix {
    let d = x.dim();
    let q = x.dot(&n.matvec(x));
    let grad_q = &n.matvec(x) + &n.tr_matvec(x);
    &(m + &Matrix::identity(d).scaled(q)) + &Matrix::outer(x, &grad_q)
}

fn validate(m: &Matrix, n: &Matrix, v: &Vector) -> Result<usize> {
    let d = v.dim();
    for (mat, ctx) in [(m, "cubic solve (M)"), (n, "cubic solve (N)")] {
        if mat.rows() != d || mat.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mat.rows().max(mat.cols()),
                context: ctx,
            });
        }
    }
    Ok(d)
}

/// Solve M x + (x . N x) x = v, preferring the smallest pre-image.
///
/// The map usually has several pre-images, and which one comes back
/// matters: recurrence drivers feed the answer into a quadratic state
/// update, where any branch but the smallest inflates the state and
/// can push the remaining targets out of range. So the enumerating
/// routes all run and the smallest converged pre-image wins, with the
/// residual always recomputed on the true map:
///
/// 1. walk t M x + (x . N x) x from the closed-form pure-cubic start
///    x0 = (v . N v)^(-1/3) v, whose Jacobian is nonsingular by
///    construction (skipped when v is nearly N-isotropic, below the
///    delta cone threshold);
/// 2. walk M x + t (x . N x) x from the linear solve M^(-1) v, when M
///    is invertible;
/// 3. the scalar resolvent reduction, which enumerates one candidate
///    per root of a scalar equation (details at resolvent_starts).
///
/// Two rescue routes only run when all of that comes back empty,
/// first-hit-wins: route 1 aimed at v nudged out of the degenerate
/// cone toward the top eigenvector of sym(N), both signs, then Newton
/// back on the unperturbed system; and multi-start Newton on the full
/// system from seeded points.
///
/// Only when the whole ladder fails does the caller see an error:
/// ConeDegenerate when the start was the obstruction, otherwise the
/// first path failure.
pub fn cubic_map_solve(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    cfg: &HomotopyConfig,
) -> Result<InversionResult> {
    let d = validate(m, n, v)?;
    if v.norm() == 0.0 {
        return Ok(InversionResult {
            x: Vector::zeros(d),
            residual: 0.0,
            iters: 0,
            method: Method::Exact,
            converged: true,
            ball_radius: None,
        });
    }
    let mut total_iters = 0usize;
    let sweep = branch_sweep(m, n, v, cfg, &mut total_iters);
    let first_failure = sweep.first_failure;
    let mut best = sweep.near_miss;
    let keep_best = |cand: InversionResult, best: &mut Option<InversionResult>| {
        if cand.residual.is_finite()
            && best.as_ref().map_or(true, |b| cand.residual < b.residual)
        {
            *best = Some(cand);
        }
    };

    if let Some(w) =
        sweep.winners.into_iter().min_by(|a, b| a.x.norm().total_cmp(&b.x.norm()))
    {
        return Ok(w);
    }

    // rescue: nudge the target off the degenerate cone, walk, pull back
    let sym = (&n.transpose() + n).scaled(0.5);
    let (vals, vecs) = sym_eigen(&sym)?;
    let top = if vals[0].abs() > vals[d - 1].abs() { 0 } else { d - 1 };
    let u = vecs.column(top);
    let eps = 1e-6 * v.norm();
    for sgn in [1.0, -1.0] {
        let v_shift = v + &u.scaled(sgn * eps);
        let q_shift = v_shift.dot(&n.matvec(&v_shift));
        if q_shift.abs() < cfg.delta * v_shift.norm() * v_shift.norm() * n.frobenius_norm() {
            continue;
        }
        if let Ok(x_shift) = walk_cubic_start(m, n, &v_shift, cfg, &mut total_iters) {
            if let Ok(r) = polish(m, n, v, &x_shift, cfg) {
                total_iters += r.iters;
                let r = finish(m, n, v, r.x, total_iters, Method::Homotopy, cfg);
                if r.converged {
                    return Ok(r);
                }
                keep_best(r, &mut best);
            }
        }
    }

    // rescue: seeded Newton starts on the full system
    let x_scale = (v.norm() / (n.frobenius_norm() + 1e-300)).abs().powf(1.0 / 3.0);
    for k in 0..12u64 {
        let x0 = match k {
            0 => v.scaled(1.0 / (1.0 + v.norm())),
            _ => {
                let r = [0.3, 1.0, 3.0][(k % 3) as usize] * x_scale.max(1e-3);
                seeded_gaussian_vector(d, Seed(0xC0B1C + k)).scaled(r)
            }
        };
        if let Ok(r) = polish(m, n, v, &x0, cfg) {
            total_iters += r.iters;
            let r = finish(m, n, v, r.x, total_iters, Method::Newton, cfg);
            if r.converged {
                return Ok(r);
            }
            keep_best(r, &mut best);
        }
    }

    // a near-miss within 100x of tol is numerical flooring on a true
    // root; wilder leftovers stay errors so degenerate instances fail
    // loudly instead of smuggling garbage out as "best effort"
    if let Some(b) = best {
        if b.residual <= 100.0 * cfg.tol * (1.0 + v.norm()) {
            return Ok(b);
        }
    }
    match first_failure {
        Some(e) => Err(e),
        None => Err(Error::ConeDegenerate),
    }
}

struct BranchSweep {
    winners: Vec<InversionResult>,
    near_miss: Option<InversionResult>,
    first_failure: Option<Error>,
}

/// The enumerating routes: both continuations plus the scalar
/// resolvent reduction, collecting every converged pre-image found and
/// the best near-miss (heavy cancellation can floor the evaluable
/// residual above tol for a genuine root, and an honest unconverged
/// result beats an error there).
fn branch_sweep(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    cfg: &HomotopyConfig,
    total_iters: &mut usize,
) -> BranchSweep {
    let d = v.dim();
    let quad = v.dot(&n.matvec(v));
    let cone_ok = quad.abs() >= cfg.delta * v.norm() * v.norm() * n.frobenius_norm();
    let mut sweep = BranchSweep { winners: Vec::new(), near_miss: None, first_failure: None };
    let take = |r: InversionResult, sweep: &mut BranchSweep| {
        if r.converged {
            sweep.winners.push(r);
        } else if r.residual.is_finite()
            && sweep.near_miss.as_ref().map_or(true, |b| r.residual < b.residual)
        {
            sweep.near_miss = Some(r);
        }
    };

    // route 1: pure-cubic start
    if cone_ok {
        match walk_cubic_start(m, n, v, cfg, total_iters) {
            Ok(x) => {
                let r = finish(m, n, v, x, *total_iters, Method::Homotopy, cfg);
                take(r, &mut sweep);
            }
            Err(e) => sweep.first_failure = Some(e),
        }
    }

    // route 2: linear start, cubic term walked in
    if let Ok(x0) = solve_linear(m, v) {
        let fwd = |x: &Vector, t: f64| {
            let q = x.dot(&n.matvec(x));
            &m.matvec(x) + &x.scaled(t * q)
        };
        let jac = |x: &Vector, t: f64| {
            let q = x.dot(&n.matvec(x));
            let grad_q = &n.matvec(x) + &n.tr_matvec(x);
            &(m + &Matrix::identity(d).scaled(t * q)) + &Matrix::outer(x, &grad_q).scaled(t)
        };
        match continuation(x0, fwd, jac, v, cfg, total_iters) {
            Ok(x) => {
                let r = finish(m, n, v, x, *total_iters, Method::Homotopy, cfg);
                take(r, &mut sweep);
            }
            Err(e) => {
                sweep.first_failure.get_or_insert(e);
            }
        }
    }

    // route 3: the scalar resolvent reduction. Any solution obeys
    // (M + q I) x = v with the consistency q = x . N x, so the roots of
    // phi(q) = x(q) . N x(q) - q, x(q) = (M + q I)^(-1) v, enumerate
    // every pre-image away from the pole set. phi runs from +inf to
    // -inf and its poles are second-order (same sign on both sides), so
    // a sign-change bracket always exists; bisection cannot stop at a
    // pole and lands on a root, which Newton then verifies on the full
    // map. Handles singular and ill-conditioned M, where the
    // continuation paths above tend to fold.
    for x0 in resolvent_starts(m, n, v) {
        if let Ok(r) = polish(m, n, v, &x0, cfg) {
            *total_iters += r.iters;
            let r = finish(m, n, v, r.x, *total_iters, Method::Newton, cfg);
            take(r, &mut sweep);
        }
    }
    sweep
}

/// Every converged pre-image the enumerating routes can find, smallest
/// norm first. For callers that need to pick a branch themselves; can
/// come back empty when the target is out of range or every route
/// failed.
pub fn cubic_map_branches(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    cfg: &HomotopyConfig,
) -> Result<Vec<InversionResult>> {
    let d = validate(m, n, v)?;
    if v.norm() == 0.0 {
        return Ok(vec![InversionResult {
            x: Vector::zeros(d),
            residual: 0.0,
            iters: 0,
            method: Method::Exact,
            converged: true,
            ball_radius: None,
        }]);
    }
    let mut total_iters = 0usize;
    let mut sweep = branch_sweep(m, n, v, cfg, &mut total_iters);
    sweep.winners.sort_by(|a, b| a.x.norm().total_cmp(&b.x.norm()));
    Ok(sweep.winners)
}

const RESOLVENT_GRID_PER_SIDE: usize = 400;
const RESOLVENT_BISECTIONS: usize = 90;

fn resolvent_starts(m: &Matrix, n: &Matrix, v: &Vector) -> Vec<Vector> {
    let d = v.dim();
    let phi = |q: f64| -> Option<f64> {
        let shifted = m + &Matrix::identity(d).scaled(q);
        let x = solve_linear(&shifted, v).ok()?;
        Some(x.dot(&n.matvec(&x)) - q)
    };
    // every root satisfies |q| <= |N| |x(q)|^2, and |x(q)| <= 2|v|/|q|
    // once |q| clears the spectrum, so roots live inside this radius
    let q_max = 10.0
        * (2.0 * m.frobenius_norm())
            .max((4.0 * n.frobenius_norm() * v.norm() * v.norm()).cbrt())
            .max(1.0);
    let q_min = 1e-12 * q_max;
    let ratio = (q_max / q_min).powf(1.0 / (RESOLVENT_GRID_PER_SIDE - 1) as f64);
    let mut grid = Vec::with_capacity(2 * RESOLVENT_GRID_PER_SIDE + 1);
    for k in (0..RESOLVENT_GRID_PER_SIDE).rev() {
        grid.push(-q_min * ratio.powi(k as i32));
    }
    grid.push(0.0);
    for k in 0..RESOLVENT_GRID_PER_SIDE {
        grid.push(q_min * ratio.powi(k as i32));
    }

    let mut prev: Option<(f64, f64)> = None;
    let mut brackets = Vec::new();
    for &q in &grid {
        let Some(f) = phi(q) else {
            prev = None;
            continue;
        };
        if let Some((q0, f0)) = prev {
            if f0.signum() != f.signum() {
                brackets.push((q0, f0, q, f));
            }
        }
        prev = Some((q, f));
    }

    let mut starts = Vec::new();
    'bracket: for (mut lo, mut flo, mut hi, _) in brackets {
        for _ in 0..RESOLVENT_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            // an exactly singular midpoint sits on a pole; shade it
            let Some(fm) = phi(mid).or_else(|| phi(mid + (hi - lo) * 1e-3)) else {
                continue 'bracket;
            };
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let shifted = m + &Matrix::identity(d).scaled(q);
        if let Ok(x0) = solve_linear(&shifted, v) {
            starts.push(x0);
        }
    }
    starts
}

fn polish(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    x0: &Vector,
    cfg: &HomotopyConfig,
) -> Result<InversionResult> {
    newton_invert(
        |z| Ok(cubic_forward(m, n, z)),
        |z| Ok(cubic_jacobian(m, n, z)),
        v,
        x0,
        cfg.tol,
        4 * cfg.newton_iters_per_step,
    )
}

fn walk_cubic_start(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    cfg: &HomotopyConfig,
    total_iters: &mut usize,
) -> std::result::Result<Vector, Error> {
    let quad = v.dot(&n.matvec(v));
    let x0 = v.scaled(real_cbrt(1.0 / quad));
    let fwd = |x: &Vector, t: f64| {
        let q = x.dot(&n.matvec(x));
        &m.matvec(x).scaled(t) + &x.scaled(q)
    };
    let jac = |x: &Vector, t: f64| {
        let q = x.dot(&n.matvec(x));
        let grad_q = &n.matvec(x) + &n.tr_matvec(x);
        &(&m.scaled(t) + &Matrix::identity(v.dim()).scaled(q)) + &Matrix::outer(x, &grad_q)
    };
    continuation(x0, fwd, jac, v, cfg, total_iters)
}

/// Shared corrector loop: constant predictor, Newton corrector, step in
/// t halved on failure and regrown gently on success.
fn continuation<FF, JF>(
    x0: Vector,
    fwd: FF,
    jac: JF,
    v: &Vector,
    cfg: &HomotopyConfig,
    total_iters: &mut usize,
) -> std::result::Result<Vector, Error>
where
    FF: Fn(&Vector, f64) -> Vector,
    JF: Fn(&Vector, f64) -> Matrix,
{
    let mut x = x0;
    let mut t = 0.0f64;
    let mut dt = cfg.t_step_init;
    while t < 1.0 {
        let t_next = (t + dt).min(1.0);
        let corrected = newton_invert(
            |z| Ok(fwd(z, t_next)),
            |z| Ok(jac(z, t_next)),
            v,
            &x,
            cfg.tol,
            cfg.newton_iters_per_step,
        );
        match corrected {
            Ok(r) if r.converged => {
                *total_iters += r.iters;
                x = r.x;
                t = t_next;
                dt = (dt * 1.5).min(cfg.t_step_init);
            }
            other => {
                if let Ok(r) = other {
                    *total_iters += r.iters;
                }
                dt *= 0.5;
                if dt < cfg.t_step_min {
                    return Err(Error::PathFailure { t });
                }
            }
        }
    }
    Ok(x)
}

fn finish(
    m: &Matrix,
    n: &Matrix,
    v: &Vector,
    x: Vector,
    iters: usize,
    method: Method,
    cfg: &HomotopyConfig,
) -> InversionResult {
    let residual = (&cubic_forward(m, n, &x) - v).norm();
    InversionResult {
        x,
        residual,
        iters,
        method,
        converged: residual <= cfg.tol * (1.0 + v.norm()),
        ball_radius: None,
    }
}
