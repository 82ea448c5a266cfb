use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{seeded_gaussian_vector, Matrix, Seed, Vector};
use crate::Result;

use super::DiffMap;

/// Layer normalization in the whitening form
///
///   LN(x) = gamma .* (x - mean(x)) / ||x - mean(x)|| + beta
///
/// where the denominator is the Euclidean norm of the centered vector,
/// not a per-coordinate standard deviation. The image is therefore the
/// gamma-scaled unit sphere of the mean-zero hyperplane, shifted by
/// beta: a compact set, which is what makes pre-norm residual blocks
/// surjective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Vector,
    pub beta: Vector,
    /// Degeneracy guard: inputs with ||x - mean(x)|| <= epsilon * ||x||
    /// are rejected instead of silently regularized. Zero by default,
    /// so only (numerically) constant vectors are refused.
    #[serde(default)]
    pub epsilon: f64,
}

impl LayerNormParams {
    pub fn new(gamma: Vector, beta: Vector) -> Result<Self> {
        let p = LayerNormParams { gamma, beta, epsilon: 0.0 };
        p.validate()?;
        Ok(p)
    }

    /// gamma = 1, beta = 0.
    pub fn standard(dim: usize) -> Self {
        LayerNormParams {
            gamma: Vector::from_fn(dim, |_| 1.0),
            beta: Vector::zeros(dim),
            epsilon: 0.0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        assert!(epsilon >= 0.0, "guard threshold must be nonnegative");
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.dim() < 2 {
            return Err(Error::InvalidInput(format!(
                "layer norm needs dimension >= 2, got {}",
                self.gamma.dim()
            )));
        }
        if self.beta.dim() != self.gamma.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.gamma.dim(),
                got: self.beta.dim(),
                context: "layer norm (gamma and beta lengths)",
            });
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidInput("guard threshold must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    /// Centered input and its norm; the shared core of forward and
    /// Jacobian. Errors on (near-)constant input per the guard.
    fn centered(&self, x: &Vector) -> Result<(Vector, f64)> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
                context: "layer norm input",
            });
        }
        let mean = x.mean();
        let u = Vector::from_fn(x.dim(), |i| x[i] - mean);
        let r = u.norm();
        if r <= self.epsilon * x.norm() + 1e-300 {
            return Err(Error::DegenerateInput);
        }
        Ok((u, r))
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        let (u, r) = self.centered(x)?;
        Ok(Vector::from_fn(x.dim(), |i| {
            self.gamma[i] * u[i] / r + self.beta[i]
        }))
    }

    /// J_ij = gamma_i * (C_ij / r - u_i u_j / r^3) with C = I - (1/d) 1 1^T
    /// and u the centered input. Follows from differentiating u/||u||
    /// and noting C u = u.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        let (u, r) = self.centered(x)?;
        let d = x.dim();
        let inv_d = 1.0 / d as f64;
        let r3 = r * r * r;
        Ok(Matrix::from_fn(d, d, |i, j| {
            let c = if i == j { 1.0 - inv_d } else { -inv_d };
            self.gamma[i] * (c / r - u[i] * u[j] / r3)
        }))
    }

    /// A point of the exact image manifold: gamma .* s + beta with s a
    /// uniformly random unit vector of the mean-zero hyperplane. Used to
    /// bound residual branches by sampling.
    pub fn sample_image(&self, seed: Seed) -> Vector {
        let d = self.dim();
        let mut salt = 0;
        loop {
            let g = seeded_gaussian_vector(d, seed.stream(salt));
            let mean = g.mean();
            let c = Vector::from_fn(d, |i| g[i] - mean);
            let r = c.norm();
            if r > 1e-8 {
                return Vector::from_fn(d, |i| self.gamma[i] * c[i] / r + self.beta[i]);
            }
            salt += 1;
        }
    }
}

impl DiffMap for LayerNormParams {
    fn in_dim(&self) -> usize {
        self.dim()
    }
    fn out_dim(&self) -> usize {
        self.dim()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        self.forward(x)
    }
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.jacobian(x)
    }
}
