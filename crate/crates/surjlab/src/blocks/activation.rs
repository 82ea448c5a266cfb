use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

/// Negative-side slope of the blend. Written so both endpoints are
/// exact: t = 0 gives 1.0 by arithmetic, t = 1 needs the branch because
/// t*alpha + 1 - t picks up a rounding error there.
fn blended_slope(t: f64, alpha: f64) -> f64 {
    if t == 1.0 {
        alpha
    } else {
        t * alpha + 1.0 - t
    }
}

/// Scalar activation, applied entrywise. Derivatives at kink points use
/// the right-hand limit (slope 1 at zero for the rectified families).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Gelu,
    Identity,
    /// Interpolant max(x, (t*alpha + 1 - t) * x): at t = 0 the identity,
    /// at t = 1 LeakyRelu(alpha). The continuation inverter walks t.
    BlendedLeaky { t: f64, alpha: f64 },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "leaky slope must lie in (0, 1), got {alpha}"
                    )));
                }
            }
            Activation::BlendedLeaky { t, alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "leaky slope must lie in (0, 1), got {alpha}"
                    )));
                }
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::InvalidInput(format!(
                        "blend parameter must lie in [0, 1], got {t}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Identity => x,
            Activation::BlendedLeaky { t, alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    blended_slope(t, alpha) * x
                }
            }
        }
    }

    /// Derivative, right-hand limit at kinks.
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Gelu => {
                // Phi(x) + x * phi(x), the exact derivative of x * Phi(x)
                let phi_big = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let phi_small = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
                phi_big + x * phi_small
            }
            Activation::Identity => 1.0,
            Activation::BlendedLeaky { t, alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    blended_slope(t, alpha)
                }
            }
        }
    }
}
