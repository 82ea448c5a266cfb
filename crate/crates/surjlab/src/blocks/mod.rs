//! Exact forward maps and analytic Jacobians for the block types under
//! study: MLPs, layer normalization, causal softmax attention, gated
//! linear attention, and pre-norm transformer blocks.
//!
//! Forward maps are implemented directly from their defining formulas;
//! there is no approximation anywhere in this module. Every Jacobian
//! here is checked against central finite differences in the test
//! suites.

mod activation;
mod attention;
mod layernorm;
mod mlp;
mod retention;
mod transformer;

pub use activation::Activation;
pub use attention::{AttentionParams, AttnTail};
pub use layernorm::LayerNormParams;
pub use mlp::{MlpLayer, MlpParams};
pub use retention::{softplus, GateFactor, Gating, RetentionMode, RetentionParams};
pub use transformer::{BlockTail, StackParams, StackTail, TransformerBlockParams};

use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::Result;

/// A differentiable map between finite-dimensional real spaces with an
/// analytic Jacobian. Solvers are written against this trait so the
/// same machinery inverts an MLP, an attention tail, or a composed
/// residual block.
pub trait DiffMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Result<Vector>;
    fn jacobian(&self, x: &Vector) -> Result<Matrix>;
}

impl<T: DiffMap + ?Sized> DiffMap for &T {
    fn in_dim(&self) -> usize {
        (**self).in_dim()
    }
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        (**self).eval(x)
    }
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        (**self).jacobian(x)
    }
}

/// Plain linear map x -> M x, mostly useful in tests and as the
/// single-token attention tail.
#[derive(Clone, Debug)]
pub struct LinearMap(pub Matrix);

impl DiffMap for LinearMap {
    fn in_dim(&self) -> usize {
        self.0.cols()
    }
    fn out_dim(&self) -> usize {
        self.0.rows()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok(self.0.matvec(x))
    }
    fn jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Ok(self.0.clone())
    }
}

/// Composition g(x) = f(LN(x)): the shape of every residual branch in a
/// pre-norm block. Its Jacobian is Df(LN(x)) * J_LN(x).
#[derive(Clone, Debug)]
pub struct LnThen<F> {
    pub ln: LayerNormParams,
    pub f: F,
}

impl<F: DiffMap> DiffMap for LnThen<F> {
    fn in_dim(&self) -> usize {
        self.ln.dim()
    }
    fn out_dim(&self) -> usize {
        self.f.out_dim()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        self.f.eval(&self.ln.forward(x)?)
    }
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        let u = self.ln.forward(x)?;
        Ok(self.f.jacobian(&u)?.matmul(&self.ln.jacobian(x)?))
    }
}

/// Pre-norm residual wrap g(x) = f(LN(x)) + x. Because LN images are
/// bounded, the residual branch is bounded no matter what f does on
/// large inputs, which is exactly what the fixed-point inverter needs.
#[derive(Clone, Debug)]
pub struct PreLn<F> {
    inner: LnThen<F>,
}

impl<F: DiffMap> PreLn<F> {
    pub fn new(f: F, ln: LayerNormParams) -> Result<Self> {
        if f.in_dim() != ln.dim() || f.out_dim() != ln.dim() {
            return Err(Error::DimensionMismatch {
                expected: ln.dim(),
                got: f.in_dim().max(f.out_dim()),
                context: "pre-norm wrap (f must map R^d -> R^d)",
            });
        }
        Ok(PreLn { inner: LnThen { ln, f } })
    }

    /// The residual branch f(LN(x)) without the identity term.
    pub fn residual(&self) -> &LnThen<F> {
        &self.inner
    }

    pub fn ln(&self) -> &LayerNormParams {
        &self.inner.ln
    }

    pub fn f(&self) -> &F {
        &self.inner.f
    }
}

impl<F: DiffMap> DiffMap for PreLn<F> {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok(&self.inner.eval(x)? + x)
    }
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        let d = self.in_dim();
        Ok(&self.inner.jacobian(x)? + &Matrix::identity(d))
    }
}

/// Ordered list of same-dimension vectors; the input and output of all
/// sequence maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    dim: usize,
    items: Vec<Vector>,
}

impl Sequence {
    pub fn empty(dim: usize) -> Self {
        Sequence { dim, items: Vec::new() }
    }

    pub fn new(items: Vec<Vector>) -> Result<Self> {
        let dim = match items.first() {
            Some(v) => v.dim(),
            None => {
                return Err(Error::InvalidInput(
                    "cannot infer dimension of an empty sequence; use Sequence::empty".into(),
                ))
            }
        };
        for v in &items {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                    context: "sequence (all positions must share a dimension)",
                });
            }
        }
        Ok(Sequence { dim, items })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, v: Vector) {
        assert_eq!(v.dim(), self.dim, "sequence position dimension mismatch");
        self.items.push(v);
    }

    pub fn get(&self, i: usize) -> &Vector {
        &self.items[i]
    }

    pub fn items(&self) -> &[Vector] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector> {
        self.items.iter()
    }
}

impl std::ops::Index<usize> for Sequence {
    type Output = Vector;
    fn index(&self, i: usize) -> &Vector {
        &self.items[i]
    }
}
