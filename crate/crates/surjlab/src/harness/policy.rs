use crate::blocks::{Sequence, StackParams};
use crate::error::Error;
use crate::numerics::Vector;
use crate::solvers::{GdConfig, InversionResult, SolveConfig};
use crate::Result;

use super::sequence::solve_token;

/// Recover the observations of an interleaved observation/action loop.
///
/// The model reads the sequence o_1, b_1, o_2, b_2, ... and emits action
/// b_t at the position of o_t. Given the actions, each observation is
/// solved against the stack tail with the interleaved prefix (recovered
/// observations and given actions) frozen, in order. Verification is
/// closed-loop: actions are regenerated autoregressively from the
/// recovered observations alone, and each regenerated action (not the
/// given one) is fed back before recovering the next, so drift cannot
/// hide. The reported residuals come from that replay.
pub fn invert_interleaved_policy(
    stack: &StackParams,
    actions: &Sequence,
    gd: &GdConfig,
    cfg: &SolveConfig,
) -> Result<(Sequence, Vec<InversionResult>)> {
    let d = stack.dim();
    if actions.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: actions.dim(),
            context: "policy actions",
        });
    }
    let mut interleaved: Vec<Vector> = Vec::with_capacity(2 * actions.len());
    let mut observations = Sequence::empty(d);
    let mut results = Vec::with_capacity(actions.len());
    for t in 0..actions.len() {
        let tail = stack.tail(&interleaved)?;
        let r = solve_token(&tail, actions.get(t), gd, cfg, 0x0B5 + t as u64)?;
        observations.push(r.x.clone());
        interleaved.push(r.x.clone());
        interleaved.push(actions.get(t).clone());
        results.push(r);
    }

    let mut loop_prefix: Vec<Vector> = Vec::with_capacity(2 * actions.len());
    for t in 0..actions.len() {
        loop_prefix.push(observations.get(t).clone());
        let out = stack.forward(&Sequence::new(loop_prefix.clone())?)?;
        let regenerated = out[loop_prefix.len() - 1].clone();
        let res = (&regenerated - actions.get(t)).norm();
        results[t].residual = res;
        results[t].converged = res <= cfg.tol * (1.0 + actions.get(t).norm());
        loop_prefix.push(regenerated);
    }
    Ok((observations, results))
}
