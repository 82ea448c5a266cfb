use crate::blocks::{Gating, RetentionParams};
use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::Result;

use super::cubic::{cubic_map_branches, cubic_map_solve};
use super::newton::newton_invert;
use super::{HomotopyConfig, InversionResult, Method};

const GATE_FIXED_POINT_ITERS: usize = 40;
const GATE_FIXED_POINT_TOL: f64 = 1e-12;

/// Recover the token a behind one retention output, given the state
/// the recurrence held *before* that token.
///
/// Substituting a' = V a turns b = S Q a + (a . K^T Q a) V a into the
/// linear-plus-cubic normal form with M = S Q V^(-1) and
/// N = V^(-T) K^T Q V^(-1), which the continuation solver handles. The
/// scalar-gated variant pins the gate, solves that normal form, refits
/// the gate to the recovered token until it stops moving, then Newton
/// polishes on the exact gated map. The column-gated variant has no
/// inverse route here; it is forward-only.
pub fn retention_token_invert(
    params: &RetentionParams,
    state: &Matrix,
    b: &Vector,
    cfg: &HomotopyConfig,
) -> Result<InversionResult> {
    let d = params.dim();
    if b.dim() != d || state.rows() != d || state.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.dim().max(state.rows()),
            context: "retention token inversion",
        });
    }
    let v_inv = params.v.inverse()?;
    let kt_q = params.k.transpose().matmul(&params.q);
    let n_form = v_inv.transpose().matmul(&kt_q).matmul(&v_inv);
    let m_base = state.matmul(&params.q).matmul(&v_inv);

    match &params.gating {
        Gating::None => {
            let r = cubic_map_solve(&m_base, &n_form, b, cfg)?;
            let a = v_inv.matvec(&r.x);
            Ok(finish(params, state, a, b, r.iters, cfg))
        }
        Gating::Mamba2 { .. } => {
            // refit loops from different opening pins can flow to
            // different fixed points, i.e. different pre-images of the
            // gated map. Run them all and keep the smallest converged
            // token: sequence drivers feed it into a quadratic state
            // update, where only the small branch keeps later targets
            // reachable. A failed pinned solve ends its own refit loop,
            // not the whole inversion; the polish on the exact gated
            // map decides convergence even if the refit ran out of
            // patience, and a polish that dies keeps the unpolished
            // token, with its honest residual.
            let sq = state.matmul(&params.q);
            let gating = params.gating.clone();
            let mut iters = 0usize;
            let mut first_err: Option<Error> = None;
            let mut seeds: Vec<Vector> = Vec::new();
            for g0 in [1.0f64, 0.75, 0.5, 0.25] {
                let mut gate_hat = g0;
                for _ in 0..GATE_FIXED_POINT_ITERS {
                    let m_g = m_base.scaled(gate_hat);
                    match cubic_map_solve(&m_g, &n_form, b, cfg) {
                        Ok(r) => {
                            iters += r.iters + 1;
                            let gate_new = gating.scalar_gate(&v_inv.matvec(&r.x));
                            let done = (gate_new - gate_hat).abs() <= GATE_FIXED_POINT_TOL;
                            gate_hat = gate_new;
                            if done {
                                break;
                            }
                        }
                        Err(e) => {
                            first_err.get_or_insert(e);
                            break;
                        }
                    }
                }
                // the refit tracked one branch of the pinned map; the
                // others are pre-images too, so seed the polish with
                // every branch at the gate the refit settled on
                if let Ok(branches) = cubic_map_branches(&m_base.scaled(gate_hat), &n_form, b, cfg)
                {
                    for r in branches {
                        seeds.push(v_inv.matvec(&r.x));
                    }
                }
            }
            if seeds.is_empty() {
                return Err(first_err.unwrap_or(Error::ConeDegenerate));
            }
            // polish each seed on the exact gated map; smallest
            // converged token wins, with unpolished seeds as honest
            // fallbacks when every polish dies
            let mut best: Option<InversionResult> = None;
            for a in seeds {
                let polished = newton_invert(
                    |z| Ok(gated_forward(params, &sq, &gating, z)),
                    |z| Ok(gated_jacobian(params, &sq, &gating, z)),
                    b,
                    &a,
                    cfg.tol,
                    4 * cfg.newton_iters_per_step,
                );
                let cand = match polished {
                    Ok(p) => {
                        iters += p.iters;
                        finish(params, state, p.x, b, iters, cfg)
                    }
                    Err(_) => finish(params, state, a, b, iters, cfg),
                };
                let better = match &best {
                    None => true,
                    Some(held) => match (cand.converged, held.converged) {
                        (true, true) => cand.x.norm() < held.x.norm(),
                        (true, false) => true,
                        (false, true) => false,
                        (false, false) => cand.residual < held.residual,
                    },
                };
                if better {
                    best = Some(cand);
                }
            }
            Ok(best.expect("at least one seed was polished"))
        }
        Gating::Rwkv6 { .. } => Err(Error::InvalidInput(
            "column-gated retention is forward-only; no token inversion".into(),
        )),
    }
}

/// b(a) = gate(a) S Q a + (a . K^T Q a) V a, with S Q precomputed.
fn gated_forward(params: &RetentionParams, sq: &Matrix, gating: &Gating, a: &Vector) -> Vector {
    let g = gating.scalar_gate(a);
    let quad = a.dot(&params.k.transpose().matmul(&params.q).matvec(a));
    &sq.matvec(a).scaled(g) + &params.v.matvec(a).scaled(quad)
}

fn gated_jacobian(params: &RetentionParams, sq: &Matrix, gating: &Gating, a: &Vector) -> Matrix {
    let g = gating.scalar_gate(a);
    let dg = gating.scalar_gate_grad(a);
    let kt_q = params.k.transpose().matmul(&params.q);
    let quad = a.dot(&kt_q.matvec(a));
    let grad_quad = &kt_q.matvec(a) + &kt_q.tr_matvec(a);
    let mut jac = sq.scaled(g);
    jac = &jac + &Matrix::outer(&sq.matvec(a), &dg);
    jac = &jac + &params.v.scaled(quad);
    &jac + &Matrix::outer(&params.v.matvec(a), &grad_quad)
}

/// Residual from the real recurrence step, not from the normal form the
/// solver worked in.
fn finish(
    params: &RetentionParams,
    state: &Matrix,
    a: Vector,
    b: &Vector,
    iters: usize,
    cfg: &HomotopyConfig,
) -> InversionResult {
    let (b_check, _) = params.token_forward(state, &a);
    let residual = (&b_check - b).norm();
    InversionResult {
        x: a,
        residual,
        iters,
        method: Method::Homotopy,
        converged: residual <= cfg.tol * (1.0 + b.norm()),
        ball_radius: None,
    }
}
