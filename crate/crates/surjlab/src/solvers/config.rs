use serde::{Deserialize, Serialize};

use crate::numerics::{Seed, Vector};

/// Knobs for the fixed-point / Newton inverters. The defaults are what
/// every driver and the CLI use unless overridden.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Convergence means residual <= tol * (1 + |target|).
    pub tol: f64,
    /// Iteration budget per restart for the fixed-point phase.
    pub max_iters: usize,
    /// Mixing weight for the damped iteration (1.0 = undamped).
    pub damping: f64,
    /// History window for the accelerated fixed-point step; 0 turns
    /// acceleration off. Capped at the problem dimension internally.
    pub anderson_depth: usize,
    /// Extra randomized starts after the deterministic one.
    pub restarts: usize,
    pub seed: Seed,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-8,
            max_iters: 500,
            damping: 1.0,
            anderson_depth: 5,
            restarts: 8,
            seed: Seed(0),
        }
    }
}

/// Gradient-descent stage used by the sequence inverters before the
/// Newton polish.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub lr: f64,
    pub steps: usize,
    /// Starting point; zero vector when absent.
    pub init: Option<Vector>,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { lr: 0.1, steps: 200, init: None }
    }
}

/// Knobs for the continuation solvers (blended-slope MLP path and the
/// linear-plus-cubic map path).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HomotopyConfig {
    /// Cone-degeneracy threshold: the cubic start point is trusted only
    /// when |v . N v| >= delta * |v|^2 * |N|_F.
    pub delta: f64,
    pub t_step_init: f64,
    /// Giving up: a corrector failure below this step size is a path
    /// failure, not a retry.
    pub t_step_min: f64,
    pub newton_iters_per_step: usize,
    pub tol: f64,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            delta: 1e-3,
            t_step_init: 0.1,
            t_step_min: 1e-4,
            newton_iters_per_step: 20,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    Anderson,
    Newton,
    Homotopy,
    GradientDescent,
    Exact,
}

/// What an inverter hands back. `residual` is always recomputed from a
/// fresh forward pass of the true map at `x`, never read off solver
/// internals, so a lying solver cannot report a good number.
#[derive(Clone, Debug, Serialize)]
pub struct InversionResult {
    pub x: Vector,
    pub residual: f64,
    pub iters: usize,
    pub method: Method,
    pub converged: bool,
    /// Search ball radius for the fixed-point route, when one was used.
    pub ball_radius: Option<f64>,
}
