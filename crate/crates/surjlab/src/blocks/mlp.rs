use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::Result;

use super::{Activation, DiffMap};

/// One affine layer followed by its activation: x -> act(W x + b).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpLayer {
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

/// Multi-layer perceptron as a chain of [`MlpLayer`]s. The chain may
/// change dimension layer to layer (the last layer of a residual block
/// maps back to the stream width; a time-conditioned velocity net eats
/// one extra input coordinate), so squareness is asserted by the
/// operations that need it, not here.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

impl MlpParams {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        let p = MlpParams { layers };
        p.validate()?;
        Ok(p)
    }

    /// The common two-layer shape W2 act(W1 x + b1) + b2.
    pub fn two_layer(
        w1: Matrix,
        b1: Vector,
        activation: Activation,
        w2: Matrix,
        b2: Vector,
    ) -> Result<Self> {
        MlpParams::new(vec![
            MlpLayer { weight: w1, bias: b1, activation },
            MlpLayer { weight: w2, bias: b2, activation: Activation::Identity },
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("MLP needs at least one layer".into()));
        }
        let mut width = self.layers[0].weight.cols();
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.weight.cols() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: layer.weight.cols(),
                    context: "MLP layer chain",
                });
            }
            if layer.bias.dim() != layer.weight.rows() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weight.rows(),
                    got: layer.bias.dim(),
                    context: "MLP layer bias",
                });
            }
            layer.activation.validate().map_err(|e| {
                Error::InvalidInput(format!("layer {k}: {e}"))
            })?;
            width = layer.weight.rows();
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: &Vector) -> Vector {
        assert_eq!(x.dim(), self.in_dim(), "MLP input dimension mismatch");
        let mut h = x.clone();
        for layer in &self.layers {
            let z = &layer.weight.matvec(&h) + &layer.bias;
            h = Vector::from_fn(z.dim(), |i| layer.activation.eval(z[i]));
        }
        h
    }

    /// Chain-rule Jacobian: product over layers of diag(act'(z)) W.
    pub fn jacobian(&self, x: &Vector) -> Matrix {
        assert_eq!(x.dim(), self.in_dim(), "MLP input dimension mismatch");
        let mut h = x.clone();
        let mut jac: Option<Matrix> = None;
        for layer in &self.layers {
            let z = &layer.weight.matvec(&h) + &layer.bias;
            // diag(act'(z)) * W without materializing the diagonal
            let rows = layer.weight.rows();
            let cols = layer.weight.cols();
            let scaled = Matrix::from_fn(rows, cols, |i, j| {
                layer.activation.deriv(z[i]) * layer.weight[(i, j)]
            });
            jac = Some(match jac {
                None => scaled,
                Some(prev) => scaled.matmul(&prev),
            });
            h = Vector::from_fn(z.dim(), |i| layer.activation.eval(z[i]));
        }
        jac.unwrap()
    }
}

impl DiffMap for MlpParams {
    fn in_dim(&self) -> usize {
        self.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.out_dim()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x))
    }
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        Ok(self.jacobian(x))
    }
}
