use serde::{Deserialize, Serialize};

use crate::blocks::{DiffMap, LayerNormParams, MlpParams};
use crate::error::Error;
use crate::numerics::{solve_linear, Matrix, Vector};
use crate::solvers::{fixed_point_invert_preln, InversionResult, Method, SolveConfig};
use crate::Result;

/// Velocity field of the probability-flow sampler. The neural variant
/// normalizes first, making every Euler step a pre-norm-shaped map the
/// fixed-point inverter can handle; the other two exist as exactly
/// invertible oracles for testing the step logic itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityNet {
    Zero { dim: usize },
    /// v(x, z) = A x + b, time-independent by construction.
    Linear { a: Matrix, b: Vector },
    /// v(x, z) = mlp(append(LN(x), z)); the time knot rides along as an
    /// extra input coordinate, so the mlp maps d+1 -> d.
    PrelnMlp { ln: LayerNormParams, mlp: MlpParams },
}

impl VelocityNet {
    pub fn dim(&self) -> usize {
        match self {
            VelocityNet::Zero { dim } => *dim,
            VelocityNet::Linear { a, .. } => a.rows(),
            VelocityNet::PrelnMlp { ln, .. } => ln.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VelocityNet::Zero { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidInput("velocity dimension must be positive".into()));
                }
            }
            VelocityNet::Linear { a, b } => {
                if !a.is_square() || a.rows() != b.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: a.rows(),
                        got: b.dim(),
                        context: "linear velocity shape",
                    });
                }
            }
            VelocityNet::PrelnMlp { ln, mlp } => {
                ln.validate()?;
                mlp.validate()?;
                if mlp.in_dim() != ln.dim() + 1 || mlp.out_dim() != ln.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: ln.dim() + 1,
                        got: mlp.in_dim(),
                        context: "velocity mlp must map d+1 -> d (time channel appended)",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &Vector, z: f64) -> Result<Vector> {
        match self {
            VelocityNet::Zero { dim } => Ok(Vector::zeros(*dim)),
            VelocityNet::Linear { a, b } => Ok(&a.matvec(x) + b),
            VelocityNet::PrelnMlp { ln, mlp } => Ok(mlp.forward(&ln.forward(x)?.appended(z))),
        }
    }
}

/// The wrapped subnetwork of one Euler step: u -> dt * mlp(append(u, z))
/// where u is the already-normalized state.
struct TimeSlice<'a> {
    mlp: &'a MlpParams,
    z: f64,
    dt: f64,
}

impl DiffMap for TimeSlice<'_> {
    fn in_dim(&self) -> usize {
        self.mlp.in_dim() - 1
    }
    fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }
    fn eval(&self, u: &Vector) -> Result<Vector> {
        Ok(self.mlp.forward(&u.appended(self.z)).scaled(self.dt))
    }
    fn jacobian(&self, u: &Vector) -> Result<Matrix> {
        // the time column is constant; drop it
        Ok(self.mlp.jacobian(&u.appended(self.z)).left_cols(self.in_dim()).scaled(self.dt))
    }
}

/// Explicit-Euler sampler on a fixed knot grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    /// Strictly increasing, from 0 to 1.
    pub knots: Vec<f64>,
    pub net: VelocityNet,
}

impl DiffusionSchedule {
    pub fn new(knots: Vec<f64>, net: VelocityNet) -> Result<Self> {
        let s = DiffusionSchedule { knots, net };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.knots.len() < 2 {
            return Err(Error::InvalidInput("schedule needs at least two knots".into()));
        }
        if self.knots[0] != 0.0 || *self.knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("knots must run from 0 to 1".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidInput(format!(
                    "knots must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// Run the sampler forward from noise at z = 0 to a sample at z = 1.
    pub fn generate(&self, noise: &Vector) -> Result<Vector> {
        if noise.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: noise.dim(),
                context: "diffusion noise",
            });
        }
        let mut x = noise.clone();
        for k in 0..self.steps() {
            let dt = self.knots[k + 1] - self.knots[k];
            x = &x + &self.net.eval(&x, self.knots[k])?.scaled(dt);
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffusionInversion {
    /// The recovered x(0); absent when a step failed to invert.
    pub noise: Option<Vector>,
    /// One entry per inverted Euler step, last step first (the order
    /// they were solved in). Short when the walk aborted.
    pub per_step: Vec<InversionResult>,
    /// Distance between generate(noise) and the target.
    pub replay_residual: Option<f64>,
    pub converged: bool,
}

/// Walk the sampler backwards: each Euler step x_{k+1} = x_k + dt v(x_k)
/// is inverted for x_k, from the target back to the noise. A step that
/// fails to converge aborts the walk and leaves the partial trace.
pub fn invert_diffusion(
    sched: &DiffusionSchedule,
    target: &Vector,
    cfg: &SolveConfig,
) -> Result<DiffusionInversion> {
    sched.validate()?;
    if target.dim() != sched.dim() {
        return Err(Error::DimensionMismatch {
            expected: sched.dim(),
            got: target.dim(),
            context: "diffusion target",
        });
    }
    let mut per_step = Vec::with_capacity(sched.steps());
    let mut x = target.clone();
    for k in (0..sched.steps()).rev() {
        let dt = sched.knots[k + 1] - sched.knots[k];
        let z = sched.knots[k];
        let step = match &sched.net {
            VelocityNet::Zero { .. } => InversionResult {
                x: x.clone(),
                residual: 0.0,
                iters: 0,
                method: Method::Exact,
                converged: true,
                ball_radius: None,
            },
            VelocityNet::Linear { a, b } => {
                // (I + dt A) x_k = x_{k+1} - dt b
                let lhs = &Matrix::identity(sched.dim()) + &a.scaled(dt);
                let sol = solve_linear(&lhs, &(&x - &b.scaled(dt)))?;
                let residual = (&(&sol + &(&a.matvec(&sol) + b).scaled(dt)) - &x).norm();
                InversionResult {
                    converged: residual <= cfg.tol * (1.0 + x.norm()),
                    x: sol,
                    residual,
                    iters: 1,
                    method: Method::Exact,
                    ball_radius: None,
                }
            }
            VelocityNet::PrelnMlp { ln, mlp } => {
                let slice = TimeSlice { mlp, z, dt };
                fixed_point_invert_preln(&slice, ln, &x, cfg)?
            }
        };
        let ok = step.converged;
        x = step.x.clone();
        per_step.push(step);
        if !ok {
            return Ok(DiffusionInversion {
                noise: None,
                per_step,
                replay_residual: None,
                converged: false,
            });
        }
    }
    let replay = (&sched.generate(&x)? - target).norm();
    Ok(DiffusionInversion {
        noise: Some(x),
        per_step,
        replay_residual: Some(replay),
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Activation;
    use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed};

    fn knot_grid(m: usize) -> Vec<f64> {
        (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn zero_velocity_returns_the_target_as_noise() {
        let sched =
            DiffusionSchedule::new(knot_grid(5), VelocityNet::Zero { dim: 3 }).unwrap();
        let y = seeded_gaussian_vector(3, Seed(4000));
        let inv = invert_diffusion(&sched, &y, &SolveConfig::default()).unwrap();
        let noise = inv.noise.unwrap();
        assert!((&noise - &y).norm() == 0.0);
        assert_eq!(inv.per_step.len(), 4);
    }

    #[test]
    fn linear_velocity_matches_the_closed_form_flow() {
        // two Euler steps of dt = 1/2 with v = Ax + b compose to an
        // affine map; invert that map directly as the oracle
        let a = seeded_gaussian(3, 3, Seed(4100)).scaled(0.4);
        let b = seeded_gaussian_vector(3, Seed(4101));
        let sched = DiffusionSchedule::new(
            knot_grid(3),
            VelocityNet::Linear { a: a.clone(), b: b.clone() },
        )
        .unwrap();
        let y = seeded_gaussian_vector(3, Seed(4102)).scaled(2.0);
        let inv = invert_diffusion(&sched, &y, &SolveConfig::default()).unwrap();
        let noise = inv.noise.unwrap();

        // oracle: x1 = M x0 + c with M = I + dt A applied twice
        let m1 = &Matrix::identity(3) + &a.scaled(0.5);
        let m2 = m1.matmul(&m1);
        let c = &m1.matvec(&b.scaled(0.5)) + &b.scaled(0.5);
        let oracle = solve_linear(&m2, &(&y - &c)).unwrap();
        assert!((&noise - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
        assert!(inv.replay_residual.unwrap() <= 1e-9 * (1.0 + y.norm()));
    }

    #[test]
    fn neural_velocity_round_trips() {
        let d = 4;
        let mlp = MlpParams::two_layer(
            seeded_gaussian(7, d + 1, Seed(4200)).scaled(0.5),
            seeded_gaussian_vector(7, Seed(4201)),
            Activation::Gelu,
            seeded_gaussian(d, 7, Seed(4202)).scaled(0.5),
            seeded_gaussian_vector(d, Seed(4203)),
        )
        .unwrap();
        let sched = DiffusionSchedule::new(
            knot_grid(6),
            VelocityNet::PrelnMlp { ln: LayerNormParams::standard(d), mlp },
        )
        .unwrap();
        let cfg = SolveConfig::default();
        for s in 0..5u64 {
            let y = seeded_gaussian_vector(d, Seed(4300 + s)).scaled(2.0);
            let inv = invert_diffusion(&sched, &y, &cfg).unwrap();
            assert!(inv.converged, "seed {s}");
            assert!(
                inv.replay_residual.unwrap() <= 1e-6 * (1.0 + y.norm()),
                "seed {s}: replay {}",
                inv.replay_residual.unwrap()
            );
        }
    }

    #[test]
    fn generation_and_inversion_agree_on_a_known_noise() {
        let d = 3;
        let mlp = MlpParams::two_layer(
            seeded_gaussian(5, d + 1, Seed(4400)).scaled(0.6),
            seeded_gaussian_vector(5, Seed(4401)),
            Activation::Gelu,
            seeded_gaussian(d, 5, Seed(4402)).scaled(0.6),
            seeded_gaussian_vector(d, Seed(4403)),
        )
        .unwrap();
        let sched = DiffusionSchedule::new(
            knot_grid(4),
            VelocityNet::PrelnMlp { ln: LayerNormParams::standard(d), mlp },
        )
        .unwrap();
        let noise = seeded_gaussian_vector(d, Seed(4404));
        let sample = sched.generate(&noise).unwrap();
        let inv = invert_diffusion(&sched, &sample, &SolveConfig::default()).unwrap();
        // the step maps are injective at this weight scale, so the
        // recovered noise is the original one
        assert!((&inv.noise.unwrap() - &noise).norm() <= 1e-7 * (1.0 + noise.norm()));
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(DiffusionSchedule::new(vec![0.0], VelocityNet::Zero { dim: 2 }).is_err());
        assert!(DiffusionSchedule::new(vec![0.0, 0.5], VelocityNet::Zero { dim: 2 }).is_err());
        assert!(
            DiffusionSchedule::new(vec![0.0, 0.5, 0.5, 1.0], VelocityNet::Zero { dim: 2 })
                .is_err()
        );
    }
}
