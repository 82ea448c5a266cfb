use crate::blocks::{Activation, BlockTail, DiffMap, MlpParams, PreLn};
use crate::numerics::Vector;
use crate::solvers::{fixed_point_invert_preln, InversionResult, SolveConfig};
use crate::Result;

/// Inner solves run two decades tighter than the requested tolerance so
/// that stacking two of them cannot push the replay residual above it.
const STAGE_TOL_SHRINK: f64 = 1e-2;

/// Invert a single pre-norm residual wrap y = f(LN(x)) + x.
pub fn invert_preln_wrap<F: DiffMap>(
    wrap: &PreLn<F>,
    y: &Vector,
    cfg: &SolveConfig,
) -> Result<InversionResult> {
    let mut r = fixed_point_invert_preln(wrap.f(), wrap.ln(), y, cfg)?;
    // replay through the wrap itself rather than trusting the solver
    let replay = (&wrap.eval(&r.x)? - y).norm();
    r.residual = replay;
    r.converged = replay <= cfg.tol * (1.0 + y.norm());
    Ok(r)
}

/// Invert a full transformer block at its last position, prefix frozen.
///
/// The block is two pre-norm wraps in a row,
///   c = attn(LN1 .)(x) + x,   y = mlp(LN2 c) + c,
/// so the pre-image comes from two chained fixed-point solves, feed-
/// forward stage first. The returned residual is the replay of the
/// whole block tail at the recovered x.
pub fn invert_preln_block(tail: &BlockTail, y: &Vector, cfg: &SolveConfig) -> Result<InversionResult> {
    let p = tail.params();
    let mlp = MlpParams::two_layer(
        p.w1.clone(),
        p.b1.clone(),
        Activation::Gelu,
        p.w2.clone(),
        p.b2.clone(),
    )?;
    let mut stage_cfg = cfg.clone();
    stage_cfg.tol = cfg.tol * STAGE_TOL_SHRINK;

    let ff = fixed_point_invert_preln(&mlp, &p.ln2, y, &stage_cfg)?;
    let attn = fixed_point_invert_preln(tail.attn_tail(), &p.ln1, &ff.x, &stage_cfg)?;

    let x = attn.x;
    let residual = (&tail.eval(&x)? - y).norm();
    Ok(InversionResult {
        converged: residual <= cfg.tol * (1.0 + y.norm()),
        residual,
        iters: ff.iters + attn.iters,
        method: attn.method,
        ball_radius: attn.ball_radius,
        x,
    })
}
