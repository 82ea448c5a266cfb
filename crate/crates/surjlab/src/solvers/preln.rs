use std::collections::VecDeque;

use crate::blocks::{DiffMap, LayerNormParams, LnThen};
use crate::error::Error;
use crate::numerics::{lstsq, seeded_gaussian_vector, Matrix, Seed, Vector};
use crate::Result;

use super::newton::newton_invert;
use super::{eval_nudged, InversionResult, Method, SolveConfig};

const BOUND_PROBES: usize = 1024;
const BOUND_SAFETY: f64 = 1.5;
const NEWTON_FALLBACK_ITERS: usize = 60;

/// Empirical sup-norm estimate for a bounded residual branch: the max
/// output norm over gaussian probes, padded by a half. For branches of
/// the form f(LN(x)) the probe pushforward covers the whole compact LN
/// image, so the pad makes this a reliable upper bound in practice.
pub fn estimate_perturbation_bound<G: DiffMap + ?Sized>(g: &G, probes: usize, seed: Seed) -> f64 {
    let mut m = 0.0f64;
    for i in 0..probes {
        let x = seeded_gaussian_vector(g.in_dim(), seed.stream(i as u64));
        if let Ok(v) = g.eval(&x) {
            m = m.max(v.norm());
        }
    }
    BOUND_SAFETY * m
}

fn clamp_to_ball(x: &mut Vector, radius: f64) {
    let n = x.norm();
    if n > radius {
        *x = x.scaled(radius / n);
    }
}

/// One accelerated step from the stored window of (iterate, update)
/// pairs; the window ends at the current pair. Returns None when the
/// window is too short or the small least-squares problem degenerates,
/// in which case the caller keeps the plain damped step.
fn anderson_step(hist: &VecDeque<(Vector, Vector)>, f_k: &Vector, beta: f64) -> Option<Vector> {
    let m = hist.len().checked_sub(1)?;
    let d = f_k.dim();
    if m == 0 || d < m {
        return None;
    }
    let df = Matrix::from_fn(d, m, |i, j| hist[j + 1].1[i] - hist[j].1[i]);
    let gamma = lstsq(&df, f_k).ok()?;
    let (xk, _) = &hist[m];
    let mut next = xk + &f_k.scaled(beta);
    for j in 0..m {
        let dx = &hist[j + 1].0 - &hist[j].0;
        let dfj = &hist[j + 1].1 - &hist[j].1;
        next = &next - &(&dx + &dfj.scaled(beta)).scaled(gamma[j]);
    }
    if next.is_finite() {
        Some(next)
    } else {
        None
    }
}

/// Solve g(x) + x = y for a bounded perturbation g with sup norm
/// roughly `m_hat`.
///
/// Any solution satisfies |x - y| = |g(x)| <= m_hat, so the search
/// never needs to leave the ball of radius m_hat + |y| + 1 around the
/// origin; iterates are clamped to it. Stages per attempt: damped
/// fixed-point iteration x <- x + beta (y - g(x) - x) with window
/// acceleration, then a Newton fallback from the best iterate once the
/// residual stalls. Attempt 0 starts at y itself, later attempts at
/// seeded points near y.
pub fn invert_perturbed_identity<G: DiffMap + ?Sized>(
    g: &G,
    y: &Vector,
    cfg: &SolveConfig,
    m_hat: f64,
) -> Result<InversionResult> {
    let d = y.dim();
    if g.in_dim() != d || g.out_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: g.in_dim(),
            got: d,
            context: "perturbed-identity inversion (square map required)",
        });
    }
    let target_tol = cfg.tol * (1.0 + y.norm());
    let ball = m_hat + y.norm() + 1.0;
    let depth_cap = cfg.anderson_depth.min(d);
    let mut nudges = 0u64;
    let mut total_iters = 0usize;
    let mut best: Option<(Vector, f64)> = None;

    for attempt in 0..=cfg.restarts {
        let mut x = if attempt == 0 {
            y.clone()
        } else {
            let scale = m_hat.max(1.0) * attempt as f64 / cfg.restarts.max(1) as f64;
            y + &seeded_gaussian_vector(d, cfg.seed.stream(91 + attempt as u64)).scaled(scale)
        };
        clamp_to_ball(&mut x, ball);

        let mut hist: VecDeque<(Vector, Vector)> = VecDeque::new();
        let mut used_anderson = false;
        let mut res_trail: Vec<f64> = Vec::new();
        let mut attempt_best: Option<(Vector, f64)> = None;

        for _ in 0..cfg.max_iters {
            total_iters += 1;
            let gx = match eval_nudged(g, &mut x, cfg.seed, &mut nudges) {
                Some(v) => v,
                None => break,
            };
            let f = &(y - &gx) - &x;
            let res = f.norm();
            if attempt_best.as_ref().map_or(true, |(_, r)| res < *r) {
                attempt_best = Some((x.clone(), res));
            }
            if res <= target_tol {
                let method = if used_anderson { Method::Anderson } else { Method::FixedPoint };
                return Ok(finish(g, x, y, total_iters, method, target_tol, ball));
            }
            res_trail.push(res);
            let n = res_trail.len();
            if res > 1e8 * (1.0 + y.norm()) {
                break; // diverged; the Newton fallback restarts from the best point
            }
            if n >= 30 && res > 0.5 * res_trail[n - 30] {
                break; // stalled
            }
            hist.push_back((x.clone(), f.clone()));
            if hist.len() > depth_cap + 1 {
                hist.pop_front();
            }
            let mut next = &x + &f.scaled(cfg.damping);
            if depth_cap > 0 && hist.len() >= 2 {
                if let Some(acc) = anderson_step(&hist, &f, cfg.damping) {
                    next = acc;
                    used_anderson = true;
                }
            }
            clamp_to_ball(&mut next, ball);
            x = next;
        }

        if let Some((bx, _)) = attempt_best.as_ref() {
            let polished = newton_invert(
                |v| Ok(&g.eval(v)? + v),
                |v| Ok(&g.jacobian(v)? + &Matrix::identity(d)),
                y,
                bx,
                cfg.tol,
                NEWTON_FALLBACK_ITERS,
            );
            if let Ok(r) = polished {
                total_iters += r.iters;
                if r.converged {
                    return Ok(finish(g, r.x, y, total_iters, Method::Newton, target_tol, ball));
                }
                if best.as_ref().map_or(true, |(_, br)| r.residual < *br) {
                    best = Some((r.x, r.residual));
                }
            }
        }
        if let Some((bx, br)) = attempt_best {
            if best.as_ref().map_or(true, |(_, b)| br < *b) {
                best = Some((bx, br));
            }
        }
    }

    match best {
        Some((bx, _)) => Ok(finish(g, bx, y, total_iters, Method::Newton, target_tol, ball)),
        // could not evaluate g anywhere, even with nudging
        None => Err(Error::DegenerateInput),
    }
}

/// Final honest accounting: recompute the residual from a fresh forward
/// pass and decide convergence from that number alone.
fn finish<G: DiffMap + ?Sized>(
    g: &G,
    x: Vector,
    y: &Vector,
    iters: usize,
    method: Method,
    target_tol: f64,
    ball: f64,
) -> InversionResult {
    let residual = match g.eval(&x) {
        Ok(gx) => (&(&gx + &x) - y).norm(),
        Err(_) => f64::INFINITY,
    };
    InversionResult {
        x,
        residual,
        iters,
        method,
        converged: residual <= target_tol,
        ball_radius: Some(ball),
    }
}

/// Invert the pre-norm residual wrap y = f(LN(x)) + x. The branch bound
/// is estimated on the spot; use `invert_perturbed_identity` directly
/// to supply one.
pub fn fixed_point_invert_preln<F: DiffMap>(
    f: F,
    ln: &LayerNormParams,
    y: &Vector,
    cfg: &SolveConfig,
) -> Result<InversionResult> {
    let g = LnThen { ln: ln.clone(), f };
    let m_hat = estimate_perturbation_bound(&g, BOUND_PROBES, cfg.seed.stream(0xB0));
    invert_perturbed_identity(&g, y, cfg, m_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{Activation, MlpParams};
    use crate::numerics::seeded_gaussian;

    fn preln_mlp(d: usize, hidden: usize, seed: u64) -> (MlpParams, LayerNormParams) {
        let mlp = MlpParams::two_layer(
            seeded_gaussian(hidden, d, Seed(seed)),
            seeded_gaussian_vector(hidden, Seed(seed + 1)),
            Activation::Gelu,
            seeded_gaussian(d, hidden, Seed(seed + 2)),
            seeded_gaussian_vector(d, Seed(seed + 3)),
        )
        .unwrap();
        (mlp, LayerNormParams::standard(d))
    }

    #[test]
    fn inverts_preln_mlp_round_trip() {
        for s in 0..5u64 {
            let (mlp, ln) = preln_mlp(4, 9, 2000 + 10 * s);
            let x_true = seeded_gaussian_vector(4, Seed(2100 + s)).scaled(2.0);
            let y = &mlp.forward(&ln.forward(&x_true).unwrap()) + &x_true;
            let cfg = SolveConfig { seed: Seed(5 + s), ..SolveConfig::default() };
            let r = fixed_point_invert_preln(&mlp, &ln, &y, &cfg).unwrap();
            assert!(r.converged, "seed {s}: residual {}", r.residual);
            assert!(r.residual <= 1e-8 * (1.0 + y.norm()));
            // pre-norm wraps may be non-injective; accept any pre-image
            let y_back = &mlp.forward(&ln.forward(&r.x).unwrap()) + &r.x;
            assert!((&y_back - &y).norm() <= 1e-7 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn ball_radius_bounds_the_answer() {
        let (mlp, ln) = preln_mlp(3, 6, 2200);
        let y = seeded_gaussian_vector(3, Seed(2210)).scaled(5.0);
        let cfg = SolveConfig::default();
        let r = fixed_point_invert_preln(&mlp, &ln, &y, &cfg).unwrap();
        assert!(r.converged);
        let ball = r.ball_radius.unwrap();
        assert!(r.x.norm() <= ball + 1e-9);
        assert!((&r.x - &y).norm() <= ball);
    }

    #[test]
    fn constant_target_needs_the_nudge() {
        // x0 = y is constant, which the norm layer rejects; the solver
        // must nudge its way off the degenerate line and still converge
        let (mlp, ln) = preln_mlp(4, 7, 2300);
        let y = Vector::new(vec![1.0, 1.0, 1.0, 1.0]);
        let cfg = SolveConfig::default();
        let r = fixed_point_invert_preln(&mlp, &ln, &y, &cfg).unwrap();
        assert!(r.converged, "residual {}", r.residual);
    }

    #[test]
    fn zero_perturbation_is_identity() {
        // f = 0 makes the wrap the identity; the answer is y itself
        let zero = crate::blocks::LinearMap(Matrix::zeros(3, 3));
        let ln = LayerNormParams::standard(3);
        let y = seeded_gaussian_vector(3, Seed(2400));
        let r = fixed_point_invert_preln(&zero, &ln, &y, &SolveConfig::default()).unwrap();
        assert!(r.converged);
        assert!((&r.x - &y).norm() < 1e-10);
        assert!(matches!(r.method, Method::FixedPoint));
    }

    #[test]
    fn bound_estimate_covers_the_branch() {
        let (mlp, ln) = preln_mlp(4, 8, 2500);
        let g = LnThen { ln: ln.clone(), f: &mlp };
        let m_hat = estimate_perturbation_bound(&g, 1024, Seed(7));
        // the branch is f on the compact LN image; check fresh samples
        // stay under the padded estimate
        for s in 0..200u64 {
            let x = seeded_gaussian_vector(4, Seed(2600 + s)).scaled(10.0);
            if let Ok(v) = g.eval(&x) {
                assert!(v.norm() <= m_hat, "sample {s} breaks the bound");
            }
        }
    }

    #[test]
    fn reported_residual_matches_a_fresh_forward_pass() {
        // starve the budget so the result is whatever the solver had in
        // hand; the reported residual must still be the recomputed one
        let (mlp, ln) = preln_mlp(4, 7, 2700);
        let y = seeded_gaussian_vector(4, Seed(2710)).scaled(3.0);
        let cfg = SolveConfig { max_iters: 1, restarts: 0, anderson_depth: 0, ..Default::default() };
        let r = fixed_point_invert_preln(&mlp, &ln, &y, &cfg).unwrap();
        let fresh = (&(&mlp.forward(&ln.forward(&r.x).unwrap()) + &r.x) - &y).norm();
        assert!((r.residual - fresh).abs() <= 1e-12 * (1.0 + fresh));
    }
}
