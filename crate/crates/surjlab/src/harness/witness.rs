use serde::Serialize;

use crate::blocks::{Activation, AttentionParams, AttnTail, DiffMap, MlpParams};
use crate::error::Error;
use crate::numerics::{det_sign, nnls, seeded_gaussian_vector, sym_eigen, Seed, Vector};
use crate::solvers::{gd_invert_token, GdConfig, SolveConfig};
use crate::Result;

/// A concrete target some map cannot reach, with the strength of the
/// claim attached: a certified gap is a proved lower bound on the
/// distance from the target to the image; an empirical floor is the
/// best any restart of the inverter ever did.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub target: Vector,
    pub kind: WitnessKind,
    /// What was held fixed while the target was shown unreachable.
    pub context: String,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WitnessKind {
    Certified { gap: f64 },
    Empirical { residual_floor: f64, restarts: usize, sanity_successes: usize },
}

const RELU_WITNESS_DRAWS: u64 = 64;
const RELU_WITNESS_SCALES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const GAP_REL: f64 = 1e-6;

/// Certified unreachable target for a two-layer ReLU net.
///
/// Everything the net can emit lives in b2 + W2 * (nonnegative
/// orthant), a closed convex cone shifted by the output bias. The
/// distance from any y to that set is exactly the nonnegative
/// least-squares residual of W2 h = y - b2, so a target built from a
/// hidden vector with negative entries gets a certificate whenever the
/// cone misses it. Degenerate weight draws can make the cone the whole
/// space; after 64 seeded attempts this reports WitnessNotFound.
pub fn relu_mlp_unreachable_witness(p: &MlpParams) -> Result<Witness> {
    if p.layers.len() != 2
        || !matches!(p.layers[0].activation, Activation::Relu)
        || !matches!(p.layers[1].activation, Activation::Identity)
    {
        return Err(Error::InvalidInput(
            "the certified witness covers two-layer nets with a ReLU between".into(),
        ));
    }
    let w2 = &p.layers[1].weight;
    let b2 = &p.layers[1].bias;
    let d1 = w2.cols();
    for draw in 0..RELU_WITNESS_DRAWS {
        let mut v = seeded_gaussian_vector(d1, Seed(0xF00D).stream(draw));
        if (0..d1).all(|i| v[i] >= 0.0) {
            v = -&v; // the construction needs negative coordinates
        }
        for &scale in &RELU_WITNESS_SCALES {
            let shifted = w2.matvec(&v.scaled(scale));
            let y = b2 + &shifted;
            let (_, gap) = nnls(w2, &shifted)?;
            if gap > GAP_REL * (1.0 + shifted.norm()) {
                return Ok(Witness {
                    target: y,
                    kind: WitnessKind::Certified { gap },
                    context: format!(
                        "image is the bias-shifted cone over {} nonnegative hidden coordinates; \
                         nnls distance certified after {} draws",
                        d1,
                        draw + 1
                    ),
                });
            }
        }
    }
    Err(Error::WitnessNotFound)
}

/// Knobs for the attention witness that the defaults derive from the
/// scan: how far past the scanned reachable magnitude the target sits,
/// and how big the should-still-invert sanity targets are.
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionWitnessOptions {
    /// Target magnitude along the dead direction's value image;
    /// default 10x the scanned supremum.
    pub target_magnitude: Option<f64>,
    /// Sanity-target magnitude; default half the scanned supremum.
    pub sanity_magnitude: Option<f64>,
}

const SCAN_POINTS: usize = 8192;
const WITNESS_GD: GdConfig = GdConfig { lr: 0.05, steps: 400, init: None };

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Best residual over a battery of gradient+Newton attempts from
/// scattered starting points. Every reported residual is a fresh
/// forward evaluation, so the floor cannot be flattered.
fn multi_start_floor(
    tail: &AttnTail,
    target: &Vector,
    cfg: &SolveConfig,
    restarts: usize,
    scale_base: f64,
    salt: u64,
) -> f64 {
    let d = tail.in_dim();
    let mut floor = f64::INFINITY;
    for attempt in 0..restarts as u64 {
        let mut gd = WITNESS_GD.clone();
        gd.init = Some(if attempt == 0 {
            target.clone()
        } else {
            let scale = scale_base * [0.25, 0.5, 1.0, 2.0, 4.0][(attempt as usize - 1) % 5];
            seeded_gaussian_vector(d, cfg.seed.stream(salt ^ (attempt << 16))).scaled(scale)
        });
        if let Ok(r) = gd_invert_token(tail, target, &gd, cfg.tol, cfg.seed.stream(salt + attempt))
        {
            floor = floor.min(r.residual);
        }
    }
    floor
}

/// Empirical unreachable target for one-layer softmax attention.
pub fn attention_unreachable_witness(p: &AttentionParams, cfg: &SolveConfig) -> Result<Witness> {
    attention_unreachable_witness_with(p, cfg, &AttentionWitnessOptions::default())
}

/// The witness construction: pin the first token's output at zero
/// (making the first token itself zero, since the value matrix is
/// invertible), then aim the second output far along V u where u is a
/// direction whose self-score u'K'Q u is negative. Along that ray the
/// softmax weight decays like exp(lam r^2) while the value only grows
/// like r, so the reachable magnitude is capped; a 1-D scan measures
/// the cap and the target is placed well beyond it. Multi-start
/// inversion then reports the residual floor, and nearby moderate
/// targets are inverted as a discrimination check.
pub fn attention_unreachable_witness_with(
    p: &AttentionParams,
    cfg: &SolveConfig,
    opts: &AttentionWitnessOptions,
) -> Result<Witness> {
    let d = p.dim();
    let score = p.score_matrix();
    let sym = (&score + &score.transpose()).scaled(0.5);
    let (vals, vecs) = sym_eigen(&sym)?;
    let lam = vals[0];
    if lam >= -1e-9 * sym.frobenius_norm() {
        return Err(Error::NoDeadDirection);
    }
    if det_sign(&p.v) == 0 {
        return Err(Error::InvalidInput(
            "pinning the first output at zero needs an invertible value matrix".into(),
        ));
    }
    let u = vecs.column(0);
    let vu = p.v.matvec(&u);
    let vu_norm = vu.norm();
    let dir = vu.scaled(1.0 / vu_norm);

    // reachable magnitude along dir for a2 = r u: sigmoid(lam r^2) r |Vu|
    let radius = 10.0 / (-lam).sqrt();
    let mut sup = 0.0f64;
    let mut r_peak = 0.0f64;
    for k in 0..=SCAN_POINTS {
        let r = radius * k as f64 / SCAN_POINTS as f64;
        let m = sigmoid(lam * r * r) * r * vu_norm;
        if m > sup {
            sup = m;
            r_peak = r;
        }
    }

    let tail = AttnTail::new(p.clone(), vec![Vector::zeros(d)])?;
    let restarts = cfg.restarts.max(1);
    let scale_base = r_peak.max(1.0);

    let target = dir.scaled(opts.target_magnitude.unwrap_or(10.0 * sup));
    let floor = multi_start_floor(&tail, &target, cfg, restarts, scale_base, 0xA77);

    let sanity_mag = opts.sanity_magnitude.unwrap_or(0.5 * sup);
    let mut sanity_successes = 0usize;
    for (i, sanity) in [dir.scaled(sanity_mag), dir.scaled(-sanity_mag)].iter().enumerate() {
        let fl = multi_start_floor(&tail, sanity, cfg, restarts, scale_base, 0x5A9 + i as u64);
        if fl <= cfg.tol * (1.0 + sanity.norm()) {
            sanity_successes += 1;
        }
    }

    Ok(Witness {
        target,
        kind: WitnessKind::Empirical { residual_floor: floor, restarts, sanity_successes },
        context: format!(
            "two tokens, first output pinned at zero; dead-direction eigenvalue {lam:.6e}; \
             scanned reachable magnitude {sup:.6} along the value image (peak at r = {r_peak:.3})"
        ),
    })
}
