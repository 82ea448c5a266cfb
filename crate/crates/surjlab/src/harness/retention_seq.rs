use crate::blocks::{RetentionMode, RetentionParams, Sequence};
use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::solvers::{retention_token_invert, HomotopyConfig, InversionResult, Method};
use crate::Result;

/// Recover the input sequence of a retention layer token by token.
///
/// The state S_j entering token j is fully determined by the already
/// recovered tokens, so each step is a single-token cubic inversion
/// against the accumulated state. A failed token solve does not abort
/// the stream: the position gets a zero token, whose rank-one state
/// update vanishes, so the damage stays local and the later positions
/// still solve against a sane state. Residuals are replaced by a full
/// recurrent replay at the end, which marks such positions unconverged.
pub fn invert_retention_sequence(
    params: &RetentionParams,
    targets: &Sequence,
    cfg: &HomotopyConfig,
) -> Result<(Sequence, Vec<InversionResult>)> {
    let d = params.dim();
    if targets.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: targets.dim(),
            context: "retention sequence targets",
        });
    }
    let mut state = Matrix::zeros(d, d);
    let mut recovered = Sequence::empty(d);
    let mut results = Vec::with_capacity(targets.len());
    for i in 0..targets.len() {
        let r = match retention_token_invert(params, &state, targets.get(i), cfg) {
            Ok(r) => r,
            Err(Error::DimensionMismatch { expected, got, context }) => {
                return Err(Error::DimensionMismatch { expected, got, context })
            }
            Err(Error::InvalidInput(msg)) => return Err(Error::InvalidInput(msg)),
            Err(_) => InversionResult {
                x: Vector::zeros(d),
                residual: f64::INFINITY,
                iters: 0,
                method: Method::Homotopy,
                converged: false,
                ball_radius: None,
            },
        };
        let (_, next) = params.token_forward(&state, &r.x);
        state = next;
        recovered.push(r.x.clone());
        results.push(r);
    }
    let replay = params.forward(&recovered, RetentionMode::Recurrent)?;
    for i in 0..targets.len() {
        let res = (&replay[i] - targets.get(i)).norm();
        results[i].residual = res;
        results[i].converged = res <= cfg.tol * (1.0 + targets.get(i).norm());
    }
    Ok((recovered, results))
}
