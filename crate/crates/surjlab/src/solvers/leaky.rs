use crate::blocks::{Activation, MlpParams};
use crate::error::Error;
use crate::numerics::{seeded_gaussian_vector, solve_linear, Matrix, Seed, Vector};
use crate::Result;

use super::newton::newton_invert;
use super::{HomotopyConfig, InversionResult, Method};

/// The shape both leaky inverters require: exactly two layers, an
/// invertible-slope activation between them, identity on the way out.
/// Layer shapes are the callers' concern: the exact route peels layers
/// one at a time and needs both square, the homotopy route only needs
/// the composite to be square (hidden may be wider than the ends).
fn split_two_layer(mlp: &MlpParams) -> Result<(&Matrix, &Vector, f64, &Matrix, &Vector)> {
    if mlp.layers.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "leaky inversion needs exactly two layers, got {}",
            mlp.layers.len()
        )));
    }
    let alpha = match mlp.layers[0].activation {
        Activation::LeakyRelu { alpha } => alpha,
        _ => {
            return Err(Error::InvalidInput(
                "leaky inversion needs a leaky first activation".into(),
            ))
        }
    };
    if !matches!(mlp.layers[1].activation, Activation::Identity) {
        return Err(Error::InvalidInput(
            "leaky inversion needs an identity second activation".into(),
        ));
    }
    let (l1, l2) = (&mlp.layers[0], &mlp.layers[1]);
    Ok((&l1.weight, &l1.bias, alpha, &l2.weight, &l2.bias))
}

/// Exact pre-image of y = W2 leaky(W1 x + b1) + b2 by peeling the three
/// invertible pieces: two linear solves and the piecewise-linear scalar
/// inverse in between. One shot, no iteration.
pub fn leaky_mlp_invert_exact(mlp: &MlpParams, y: &Vector, tol: f64) -> Result<InversionResult> {
    let (w1, b1, alpha, w2, b2) = split_two_layer(mlp)?;
    if !w1.is_square() || !w2.is_square() {
        return Err(Error::InvalidInput(
            "the exact leaky route peels layers individually and needs both square".into(),
        ));
    }
    let h = solve_linear(w2, &(y - b2))?;
    let z = Vector::from_fn(h.dim(), |i| if h[i] >= 0.0 { h[i] } else { h[i] / alpha });
    let x = solve_linear(w1, &(&z - b1))?;
    let residual = (&mlp.forward(&x) - y).norm();
    Ok(InversionResult {
        x,
        residual,
        iters: 1,
        method: Method::Exact,
        converged: residual <= tol * (1.0 + y.norm()),
        ball_radius: None,
    })
}

/// Same pre-image by continuation: deform the activation from the
/// identity (where the map is affine and solvable in closed form) to
/// the leaky target, tracking the solution with a Newton corrector and
/// an adaptive step in t. Exists to cross-check the exact route with
/// machinery that never looks at the closed form.
pub fn leaky_mlp_invert_homotopy(
    mlp: &MlpParams,
    y: &Vector,
    cfg: &HomotopyConfig,
) -> Result<InversionResult> {
    let (w1, b1, alpha, w2, b2) = split_two_layer(mlp)?;
    if mlp.in_dim() != mlp.out_dim() {
        return Err(Error::InvalidInput(
            "the homotopy leaky route tracks a square system; in and out dims must match".into(),
        ));
    }
    let forward_t = |x: &Vector, t: f64| -> Vector {
        let act = Activation::BlendedLeaky { t, alpha };
        let z = &w1.matvec(x) + b1;
        let h = Vector::from_fn(z.dim(), |i| act.eval(z[i]));
        &w2.matvec(&h) + b2
    };
    let jacobian_t = |x: &Vector, t: f64| -> Matrix {
        let act = Activation::BlendedLeaky { t, alpha };
        let z = &w1.matvec(x) + b1;
        let mut scaled = w1.clone();
        for i in 0..z.dim() {
            let g = act.deriv(z[i]);
            for j in 0..w1.cols() {
                scaled[(i, j)] *= g;
            }
        }
        w2.matmul(&scaled)
    };

    let walk = |x0: &Vector| -> std::result::Result<(Vector, usize), (f64, usize)> {
        let mut x = x0.clone();
        let mut total_iters = 0usize;
        let mut t = 0.0f64;
        let mut dt = cfg.t_step_init;
        while t < 1.0 {
            let t_next = (t + dt).min(1.0);
            let corrected = newton_invert(
                |v| Ok(forward_t(v, t_next)),
                |v| Ok(jacobian_t(v, t_next)),
                y,
                &x,
                cfg.tol,
                cfg.newton_iters_per_step,
            );
            match corrected {
                Ok(r) if r.converged => {
                    total_iters += r.iters;
                    x = r.x;
                    t = t_next;
                    dt = (dt * 1.5).min(cfg.t_step_init);
                }
                other => {
                    if let Ok(r) = other {
                        total_iters += r.iters;
                    }
                    dt *= 0.5;
                    if dt < cfg.t_step_min {
                        return Err((t, total_iters));
                    }
                }
            }
        }
        Ok((x, total_iters))
    };

    // t = 0: affine map, one linear solve. Square layers never fold (the
    // corrector Jacobian keeps a fixed determinant sign along the path),
    // but a wide hidden layer can; restarting the walk from a nudged
    // affine solution usually picks a branch that reaches t = 1.
    let w21 = w2.matmul(w1);
    let rhs = &(y - b2) - &w2.matvec(b1);
    let x0 = solve_linear(&w21, &rhs)?;
    let mut total_iters = 1usize;
    let mut first_fold = None;
    for attempt in 0..8u64 {
        let start = if attempt == 0 {
            x0.clone()
        } else {
            let nudge = seeded_gaussian_vector(x0.dim(), Seed(0x1EA2).stream(attempt));
            let scale = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0][(attempt - 1) as usize % 7];
            &x0 + &nudge.scaled(scale * (1.0 + x0.norm()))
        };
        match walk(&start) {
            Ok((x, iters)) => {
                total_iters += iters;
                let residual = (&mlp.forward(&x) - y).norm();
                return Ok(InversionResult {
                    x,
                    residual,
                    iters: total_iters,
                    method: Method::Homotopy,
                    converged: residual <= cfg.tol * (1.0 + y.norm()),
                    ball_radius: None,
                });
            }
            Err((t, iters)) => {
                total_iters += iters;
                first_fold.get_or_insert(t);
            }
        }
    }
    // every walk folded. At t = 1 each hidden sign pattern makes the
    // map affine, so for modest widths all pre-images with a
    // nonsingular pattern system can be enumerated outright: solve
    // y = b2 + W2 D_p (W1 x + b1) per pattern p and keep the solutions
    // whose hidden signs actually match p. Rescue only; the walk stays
    // the primary route.
    if w1.rows() <= PATTERN_RESCUE_MAX_WIDTH {
        let d1 = w1.rows();
        let mut best: Option<Vector> = None;
        for pattern in 0u32..(1u32 << d1) {
            let mut w2d = w2.clone();
            for i in 0..d1 {
                let slope = if pattern & (1 << i) != 0 { 1.0 } else { alpha };
                for r in 0..w2.rows() {
                    w2d[(r, i)] *= slope;
                }
            }
            let sys = w2d.matmul(w1);
            let rhs_p = &(y - b2) - &w2d.matvec(b1);
            let Ok(x) = solve_linear(&sys, &rhs_p) else { continue };
            let z = &w1.matvec(&x) + b1;
            let consistent = (0..d1).all(|i| (z[i] >= 0.0) == (pattern & (1 << i) != 0));
            if !consistent {
                continue;
            }
            total_iters += 1;
            if best.as_ref().map_or(true, |b| x.norm() < b.norm()) {
                best = Some(x);
            }
        }
        if let Some(x) = best {
            let residual = (&mlp.forward(&x) - y).norm();
            return Ok(InversionResult {
                x,
                residual,
                iters: total_iters,
                method: Method::Exact,
                converged: residual <= cfg.tol * (1.0 + y.norm()),
                ball_radius: None,
            });
        }
    }
    Err(Error::PathFailure { t: first_fold.unwrap_or(0.0) })
}

/// Widths up to this get the exhaustive sign-pattern rescue when every
/// continuation start folds; 2^12 linear solves at most.
const PATTERN_RESCUE_MAX_WIDTH: usize = 12;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed};

    fn leaky_net(d: usize, alpha: f64, seed: u64) -> MlpParams {
        MlpParams::two_layer(
            seeded_gaussian(d, d, Seed(seed)),
            seeded_gaussian_vector(d, Seed(seed + 1)),
            Activation::LeakyRelu { alpha },
            seeded_gaussian(d, d, Seed(seed + 2)),
            seeded_gaussian_vector(d, Seed(seed + 3)),
        )
        .unwrap()
    }

    #[test]
    fn exact_route_round_trips() {
        for s in 0..10u64 {
            let net = leaky_net(5, 0.3, 3000 + 10 * s);
            let x_true = seeded_gaussian_vector(5, Seed(3100 + s)).scaled(3.0);
            let y = net.forward(&x_true);
            let r = leaky_mlp_invert_exact(&net, &y, 1e-9).unwrap();
            assert!(r.converged, "seed {s}: residual {}", r.residual);
            // the map is a bijection, so the pre-image is unique
            assert!((&r.x - &x_true).norm() < 1e-7, "seed {s}");
        }
    }

    #[test]
    fn homotopy_route_agrees_with_exact() {
        let cfg = HomotopyConfig::default();
        for s in 0..10u64 {
            let net = leaky_net(4, 0.2, 3200 + 10 * s);
            let y = seeded_gaussian_vector(4, Seed(3300 + s)).scaled(2.0);
            let exact = leaky_mlp_invert_exact(&net, &y, 1e-9).unwrap();
            let walked = leaky_mlp_invert_homotopy(&net, &y, &cfg).unwrap();
            assert!(walked.converged, "seed {s}: residual {}", walked.residual);
            assert!(
                (&walked.x - &exact.x).norm() < 1e-6,
                "seed {s}: routes disagree by {}",
                (&walked.x - &exact.x).norm()
            );
        }
    }

    #[test]
    fn small_slope_still_inverts() {
        // alpha near zero stresses the h/alpha branch of the scalar inverse
        let net = leaky_net(3, 1e-3, 3400);
        let y = seeded_gaussian_vector(3, Seed(3410));
        let r = leaky_mlp_invert_exact(&net, &y, 1e-8).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        let walked = leaky_mlp_invert_homotopy(&net, &y, &HomotopyConfig::default()).unwrap();
        assert!(walked.converged);
        assert!((&walked.x - &r.x).norm() < 1e-5 * (1.0 + r.x.norm()));
    }

    #[test]
    fn wide_hidden_layer_inverts_by_homotopy() {
        // d -> d1 -> d with d1 > d: no exact route (the layers are not
        // individually invertible), but the composite is square and onto
        let cfg = HomotopyConfig::default();
        for (s, d1) in [(0u64, 3usize), (1, 4), (2, 8), (3, 3), (4, 8)] {
            let net = MlpParams::two_layer(
                seeded_gaussian(d1, 2, Seed(3500 + 10 * s)),
                seeded_gaussian_vector(d1, Seed(3501 + 10 * s)),
                Activation::LeakyRelu { alpha: 0.25 },
                seeded_gaussian(2, d1, Seed(3502 + 10 * s)),
                seeded_gaussian_vector(2, Seed(3503 + 10 * s)),
            )
            .unwrap();
            assert!(leaky_mlp_invert_exact(&net, &Vector::zeros(2), 1e-8).is_err());
            let y = seeded_gaussian_vector(2, Seed(3600 + s)).scaled(2.0);
            let r = leaky_mlp_invert_homotopy(&net, &y, &cfg).unwrap();
            assert!(r.converged, "seed {s} d1 {d1}: residual {}", r.residual);
        }
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let one_layer = MlpParams::new(vec![crate::blocks::MlpLayer {
            weight: Matrix::identity(2),
            bias: Vector::zeros(2),
            activation: Activation::LeakyRelu { alpha: 0.5 },
        }])
        .unwrap();
        assert!(leaky_mlp_invert_exact(&one_layer, &Vector::zeros(2), 1e-8).is_err());

        let gelu_net = MlpParams::two_layer(
            Matrix::identity(2),
            Vector::zeros(2),
            Activation::Gelu,
            Matrix::identity(2),
            Vector::zeros(2),
        )
        .unwrap();
        assert!(leaky_mlp_invert_exact(&gelu_net, &Vector::zeros(2), 1e-8).is_err());
    }

    #[test]
    fn singular_outer_layer_is_structural() {
        let net = MlpParams::two_layer(
            Matrix::identity(2),
            Vector::zeros(2),
            Activation::LeakyRelu { alpha: 0.5 },
            Matrix::zeros(2, 2),
            Vector::zeros(2),
        )
        .unwrap();
        let err = leaky_mlp_invert_exact(&net, &Vector::new(vec![1.0, 0.0]), 1e-8);
        assert!(matches!(err, Err(Error::SingularMatrix)));
    }
}
