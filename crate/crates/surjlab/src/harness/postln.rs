use crate::blocks::{Activation, LayerNormParams, MlpParams};
use crate::error::Error;
use crate::numerics::{det_sign, Matrix, Vector};
use crate::solvers::newton_invert;
use crate::solvers::InversionResult;
use crate::Result;

const CHART_TOL: f64 = 1e-8;
const MU_HALVINGS: u32 = 40;

/// Local surjectivity probe for the post-norm residual block
/// y = LN(f(x) + x), restricted to the bias-free smooth case where the
/// block fixes the origin.
///
/// The image of LN is the (scaled, shifted) unit sphere of centered
/// vectors, so a target is first pulled back through the chart
/// v = (y - beta) / gamma and rejected if it is not on that manifold.
/// Because LN ignores positive rescaling, it is enough to hit mu * v
/// for any mu > 0: the probe runs Newton on g(x) = f(x) + x from the
/// origin, halving mu from 1 until a solve lands. An invertible dg(0)
/// guarantees some mu works; a sign-degenerate dg(0) is reported as
/// DegenerateJacobian because the argument (and the probe) break down.
pub fn postln_local_surjectivity_check(
    p: &MlpParams,
    ln: &LayerNormParams,
    target_on_sphere: &Vector,
) -> Result<InversionResult> {
    let d = ln.dim();
    if p.in_dim() != d || p.out_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.in_dim(),
            context: "post-norm residual branch must preserve the stream width",
        });
    }
    for layer in &p.layers {
        if !layer.weight.is_square() {
            return Err(Error::InvalidInput(
                "the origin-fixing argument needs square layers".into(),
            ));
        }
        if layer.bias.norm() != 0.0 {
            return Err(Error::InvalidInput(
                "nonzero biases move the fixed point away from the origin".into(),
            ));
        }
        if !matches!(layer.activation, Activation::Gelu | Activation::Identity) {
            return Err(Error::InvalidInput(
                "the probe needs activations that are smooth and fix zero".into(),
            ));
        }
    }
    if target_on_sphere.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: target_on_sphere.dim(),
            context: "post-norm target",
        });
    }

    let origin = Vector::zeros(d);
    let dg0 = &p.jacobian(&origin) + &Matrix::identity(d);
    if det_sign(&dg0) == 0 {
        return Err(Error::DegenerateJacobian);
    }

    // chart pullback: LN emits gamma * s + beta with mean(s) = 0, |s| = 1
    let mut v = Vector::zeros(d);
    for i in 0..d {
        if ln.gamma[i] == 0.0 {
            return Err(Error::InvalidInput("zero gain coordinate has no chart".into()));
        }
        v[i] = (target_on_sphere[i] - ln.beta[i]) / ln.gamma[i];
    }
    if v.mean().abs() > CHART_TOL || (v.norm() - 1.0).abs() > CHART_TOL {
        return Err(Error::InvalidInput(format!(
            "target is off the normalization image: mean {:.3e}, norm {:.6}",
            v.mean(),
            v.norm()
        )));
    }

    let g = |x: &Vector| Ok(&p.forward(x) + x);
    let dg = |x: &Vector| Ok(&p.jacobian(x) + &Matrix::identity(d));

    let mut iters = 0usize;
    let mut mu = 1.0f64;
    for _ in 0..=MU_HALVINGS {
        let r = newton_invert(g, dg, &v.scaled(mu), &origin, 1e-12, 200)?;
        iters += r.iters;
        if r.converged {
            let residual = (&ln.forward(&g(&r.x)?)? - target_on_sphere).norm();
            return Ok(InversionResult {
                converged: residual <= CHART_TOL * (1.0 + target_on_sphere.norm()),
                residual,
                iters,
                ..r
            });
        }
        mu *= 0.5;
    }
    Err(Error::NotConverged { residual: f64::NAN, iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed};

    fn zero_bias_gelu_net(d: usize, depth: usize, seed: u64, scale: f64) -> MlpParams {
        let layers = (0..depth)
            .map(|k| crate::blocks::MlpLayer {
                weight: seeded_gaussian(d, d, Seed(seed).stream(k as u64)).scaled(scale),
                bias: Vector::zeros(d),
                activation: if k + 1 == depth { Activation::Identity } else { Activation::Gelu },
            })
            .collect();
        MlpParams::new(layers).unwrap()
    }

    fn sphere_target(ln: &LayerNormParams, raw: &Vector) -> Vector {
        ln.forward(raw).unwrap()
    }

    #[test]
    fn zero_weights_make_the_block_pure_normalization() {
        let d = 4;
        let net = zero_bias_gelu_net(d, 2, 900, 0.0);
        let ln = LayerNormParams::standard(d);
        let raw = seeded_gaussian_vector(d, Seed(901));
        let y = sphere_target(&ln, &raw);
        let r = postln_local_surjectivity_check(&net, &ln, &y).unwrap();
        assert!(r.converged);
        // with f = 0 the preimage is any positive multiple of the
        // centered-normalized target; check it renormalizes right
        assert!((&ln.forward(&r.x).unwrap() - &y).norm() <= 1e-8);
    }

    #[test]
    fn random_deep_block_hits_its_sphere_target() {
        let d = 3;
        let net = zero_bias_gelu_net(d, 2, 910, 0.6);
        let ln = LayerNormParams::new(
            Vector::new(vec![1.5, 0.7, 1.1]),
            Vector::new(vec![0.2, -0.4, 0.1]),
        )
        .unwrap();
        for s in 0..5u64 {
            let raw = seeded_gaussian_vector(d, Seed(911).stream(s));
            let y = sphere_target(&ln, &raw);
            let r = postln_local_surjectivity_check(&net, &ln, &y).unwrap();
            assert!(r.converged, "seed {s}: residual {}", r.residual);
            assert!(r.residual <= 1e-8);
        }
    }

    #[test]
    fn degenerate_linearization_is_refused() {
        // f(x) = -x exactly cancels the skip connection at the origin
        let net = MlpParams::new(vec![crate::blocks::MlpLayer {
            weight: Matrix::identity(2).scaled(-1.0),
            bias: Vector::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let ln = LayerNormParams::standard(2);
        let y = ln.forward(&Vector::new(vec![1.0, -1.0])).unwrap();
        assert!(matches!(
            postln_local_surjectivity_check(&net, &ln, &y),
            Err(Error::DegenerateJacobian)
        ));
    }

    #[test]
    fn off_manifold_targets_are_rejected() {
        let d = 3;
        let net = zero_bias_gelu_net(d, 1, 920, 0.3);
        let ln = LayerNormParams::standard(d);
        let y = Vector::new(vec![2.0, 0.0, 0.0]); // norm 2, not on the unit sphere
        assert!(matches!(
            postln_local_surjectivity_check(&net, &ln, &y),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn biased_nets_are_refused() {
        let d = 2;
        let net = MlpParams::two_layer(
            Matrix::identity(d),
            Vector::new(vec![0.1, 0.0]),
            Activation::Gelu,
            Matrix::identity(d),
            Vector::zeros(d),
        )
        .unwrap();
        let ln = LayerNormParams::standard(d);
        let y = ln.forward(&Vector::new(vec![1.0, -1.0])).unwrap();
        assert!(matches!(
            postln_local_surjectivity_check(&net, &ln, &y),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn normalization_ignores_scale_of_the_recovered_point() {
        let d = 4;
        let net = zero_bias_gelu_net(d, 2, 930, 0.5);
        let ln = LayerNormParams::standard(d);
        let raw = seeded_gaussian_vector(d, Seed(931));
        let y = sphere_target(&ln, &raw);
        let r = postln_local_surjectivity_check(&net, &ln, &y).unwrap();
        let gx = &net.forward(&r.x) + &r.x;
        // the block output normalizes the residual-stream sum, so any
        // positive multiple of gx lands on the same target
        assert!((&ln.forward(&gx.scaled(7.0)).unwrap() - &y).norm() <= 1e-9);
    }
}
