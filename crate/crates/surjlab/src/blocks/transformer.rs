use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::Result;

use super::attention::{AttentionParams, AttnTail};
use super::layernorm::LayerNormParams;
use super::{Activation, DiffMap, Sequence};

/// Pre-norm residual block:
///
///   c_i = Attn(LN1(a))_i + a_i
///   b_i = W2 gelu(W1 LN2(c_i) + b1) + b2 + c_i
///
/// Both branches read normalized inputs, so each residual term is
/// bounded by a constant computable from the weights alone. The
/// fixed-point inverters lean on that.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerBlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

impl TransformerBlockParams {
    pub fn new(
        ln1: LayerNormParams,
        attn: AttentionParams,
        ln2: LayerNormParams,
        w1: Matrix,
        b1: Vector,
        w2: Matrix,
        b2: Vector,
    ) -> Result<Self> {
        let p = TransformerBlockParams { ln1, attn, ln2, w1, b1, w2, b2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.attn.dim();
        self.attn.validate()?;
        let checks: [(usize, &'static str); 6] = [
            (self.ln1.dim(), "block (first norm dimension)"),
            (self.ln2.dim(), "block (second norm dimension)"),
            (self.w1.cols(), "block (W1 input dimension)"),
            (self.w2.rows(), "block (W2 output dimension)"),
            (self.b2.dim(), "block (output bias dimension)"),
            (d, "block"),
        ];
        for (got, ctx) in checks {
            if got != d {
                return Err(Error::DimensionMismatch { expected: d, got, context: ctx });
            }
        }
        if self.b1.dim() != self.w1.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.w1.rows(),
                got: self.b1.dim(),
                context: "block (hidden bias dimension)",
            });
        }
        if self.w2.cols() != self.w1.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.w1.rows(),
                got: self.w2.cols(),
                context: "block (W2 input dimension)",
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.attn.dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    /// The feed-forward branch applied to an already-normalized input.
    fn mlp(&self, u: &Vector) -> Vector {
        let z = &self.w1.matvec(u) + &self.b1;
        let h = Vector::from_fn(z.dim(), |i| Activation::Gelu.eval(z[i]));
        &self.w2.matvec(&h) + &self.b2
    }

    fn mlp_jacobian(&self, u: &Vector) -> Matrix {
        let z = &self.w1.matvec(u) + &self.b1;
        // W2 diag(gelu'(z)) W1 without materializing the diagonal
        let mut scaled_w1 = self.w1.clone();
        for i in 0..z.dim() {
            let g = Activation::Gelu.deriv(z[i]);
            for j in 0..self.w1.cols() {
                scaled_w1[(i, j)] *= g;
            }
        }
        self.w2.matmul(&scaled_w1)
    }

    pub fn forward(&self, seq: &Sequence) -> Result<Sequence> {
        if seq.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: seq.dim(),
                context: "block input",
            });
        }
        let mut normed = Sequence::empty(self.dim());
        for a in seq.iter() {
            normed.push(self.ln1.forward(a)?);
        }
        let attn_out = self.attn.forward(&normed)?;
        let mut out = Sequence::empty(self.dim());
        for i in 0..seq.len() {
            let c = &attn_out[i] + seq.get(i);
            let b = &self.mlp(&self.ln2.forward(&c)?) + &c;
            out.push(b);
        }
        Ok(out)
    }

    /// The last-position map with earlier raw inputs frozen.
    pub fn tail(&self, raw_prefix: &[Vector]) -> Result<BlockTail> {
        BlockTail::new(self.clone(), raw_prefix)
    }
}

/// Block output at the final position as a function of that position's
/// raw input. The frozen prefix is normalized once at construction.
#[derive(Clone, Debug)]
pub struct BlockTail {
    params: TransformerBlockParams,
    attn_tail: AttnTail,
}

impl BlockTail {
    pub fn new(params: TransformerBlockParams, raw_prefix: &[Vector]) -> Result<Self> {
        let mut normed = Vec::with_capacity(raw_prefix.len());
        for a in raw_prefix {
            normed.push(params.ln1.forward(a)?);
        }
        let attn_tail = AttnTail::new(params.attn.clone(), normed)?;
        Ok(BlockTail { params, attn_tail })
    }

    pub fn params(&self) -> &TransformerBlockParams {
        &self.params
    }

    /// The attention branch with the frozen (already-normalized) prefix.
    pub fn attn_tail(&self) -> &AttnTail {
        &self.attn_tail
    }

    fn mid(&self, x: &Vector) -> Result<Vector> {
        let nx = self.params.ln1.forward(x)?;
        Ok(&self.attn_tail.eval(&nx)? + x)
    }
}

impl DiffMap for BlockTail {
    fn in_dim(&self) -> usize {
        self.params.dim()
    }
    fn out_dim(&self) -> usize {
        self.params.dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        let c = self.mid(x)?;
        Ok(&self.params.mlp(&self.params.ln2.forward(&c)?) + &c)
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        let d = self.params.dim();
        let nx = self.params.ln1.forward(x)?;
        let j_c = &self.attn_tail.jacobian(&nx)?.matmul(&self.params.ln1.jacobian(x)?)
            + &Matrix::identity(d);
        let c = &self.attn_tail.eval(&nx)? + x;
        let u = self.params.ln2.forward(&c)?;
        let j_mlp_c = self.params.mlp_jacobian(&u).matmul(&self.params.ln2.jacobian(&c)?);
        Ok((&j_mlp_c + &Matrix::identity(d)).matmul(&j_c))
    }
}

/// A pile of blocks applied in order, all sharing one dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StackParams {
    pub blocks: Vec<TransformerBlockParams>,
}

impl StackParams {
    pub fn new(blocks: Vec<TransformerBlockParams>) -> Result<Self> {
        let p = StackParams { blocks };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidInput("stack needs at least one block".into()));
        }
        let d = self.blocks[0].dim();
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.dim(),
                    context: if i == 1 { "stack (second block)" } else { "stack (later block)" },
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(&self, seq: &Sequence) -> Result<Sequence> {
        let mut cur = seq.clone();
        for b in &self.blocks {
            cur = b.forward(&cur)?;
        }
        Ok(cur)
    }

    /// The last-position map through the whole stack with earlier raw
    /// inputs frozen. Each layer's frozen prefix is the previous
    /// layer's output on the prefix, so it is precomputed here once.
    pub fn tail(&self, raw_prefix: &[Vector]) -> Result<StackTail> {
        let mut tails = Vec::with_capacity(self.blocks.len());
        let mut prefix = raw_prefix.to_vec();
        for b in &self.blocks {
            tails.push(b.tail(&prefix)?);
            if !prefix.is_empty() {
                let seq = Sequence::new(prefix)?;
                prefix = b.forward(&seq)?.items().to_vec();
            }
        }
        Ok(StackTail { tails })
    }
}

/// Composition of per-block tails; the whole-stack analogue of
/// `BlockTail`.
#[derive(Clone, Debug)]
pub struct StackTail {
    tails: Vec<BlockTail>,
}

impl StackTail {
    pub fn blocks(&self) -> &[BlockTail] {
        &self.tails
    }
}

impl DiffMap for StackTail {
    fn in_dim(&self) -> usize {
        self.tails[0].in_dim()
    }
    fn out_dim(&self) -> usize {
        self.tails[self.tails.len() - 1].out_dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        let mut cur = x.clone();
        for t in &self.tails {
            cur = t.eval(&cur)?;
        }
        Ok(cur)
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        let mut cur = x.clone();
        let mut jac = Matrix::identity(self.in_dim());
        for t in &self.tails {
            jac = t.jacobian(&cur)?.matmul(&jac);
            cur = t.eval(&cur)?;
        }
        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_jacobian, seeded_gaussian, seeded_gaussian_vector, Seed};

    fn random_block(d: usize, hidden: usize, seed: u64) -> TransformerBlockParams {
        TransformerBlockParams::new(
            LayerNormParams::standard(d),
            AttentionParams::new(
                seeded_gaussian(d, d, Seed(seed)),
                seeded_gaussian(d, d, Seed(seed + 1)),
                seeded_gaussian(d, d, Seed(seed + 2)),
            )
            .unwrap(),
            LayerNormParams::standard(d),
            seeded_gaussian(hidden, d, Seed(seed + 3)).scaled(0.5),
            seeded_gaussian_vector(hidden, Seed(seed + 4)).scaled(0.1),
            seeded_gaussian(d, hidden, Seed(seed + 5)).scaled(0.5),
            seeded_gaussian_vector(d, Seed(seed + 6)).scaled(0.1),
        )
        .unwrap()
    }

    fn random_seq(d: usize, n: usize, seed: u64) -> Sequence {
        Sequence::new((0..n).map(|i| seeded_gaussian_vector(d, Seed(seed + i as u64))).collect())
            .unwrap()
    }

    #[test]
    fn forward_matches_tail_at_last_position() {
        let b = random_block(4, 7, 900);
        let seq = random_seq(4, 5, 910);
        let full = b.forward(&seq).unwrap();
        let tail = b.tail(&seq.items()[..4]).unwrap();
        let out = tail.eval(seq.get(4)).unwrap();
        assert!((&out - &full[4]).norm() < 1e-13);
    }

    #[test]
    fn causality_perturbation() {
        let b = random_block(3, 6, 920);
        let seq = random_seq(3, 5, 930);
        let base = b.forward(&seq).unwrap();
        let mut bumped = seq.items().to_vec();
        bumped[4] = &bumped[4] + &Vector::new(vec![0.3, -0.1, 0.2]);
        let changed = b.forward(&Sequence::new(bumped).unwrap()).unwrap();
        for i in 0..4 {
            assert!((&base[i] - &changed[i]).norm() == 0.0, "position {i} saw the future");
        }
        assert!((&base[4] - &changed[4]).norm() > 1e-6);
    }

    #[test]
    fn stack_composes_blocks() {
        let b1 = random_block(4, 8, 940);
        let b2 = random_block(4, 5, 950);
        let stack = StackParams::new(vec![b1.clone(), b2.clone()]).unwrap();
        let seq = random_seq(4, 4, 960);
        let direct = stack.forward(&seq).unwrap();
        let composed = b2.forward(&b1.forward(&seq).unwrap()).unwrap();
        for i in 0..4 {
            assert!((&direct[i] - &composed[i]).norm() == 0.0);
        }
    }

    #[test]
    fn stack_tail_matches_stack_forward() {
        let stack = StackParams::new(vec![random_block(3, 6, 970), random_block(3, 4, 980)]).unwrap();
        let seq = random_seq(3, 4, 990);
        let full = stack.forward(&seq).unwrap();
        let tail = stack.tail(&seq.items()[..3]).unwrap();
        let out = tail.eval(seq.get(3)).unwrap();
        assert!((&out - &full[3]).norm() < 1e-12);
    }

    #[test]
    fn block_tail_jacobian_matches_finite_differences() {
        for s in 0..5u64 {
            let b = random_block(4, 6, 1000 + 20 * s);
            let prefix: Vec<Vector> =
                (0..3).map(|i| seeded_gaussian_vector(4, Seed(1100 + 20 * s + i))).collect();
            let tail = b.tail(&prefix).unwrap();
            let x = seeded_gaussian_vector(4, Seed(1200 + s));
            let j = tail.jacobian(&x).unwrap();
            let fd = finite_difference_jacobian(|v| tail.eval(v), &x, 1e-6).unwrap();
            let err = (&j - &fd).frobenius_norm() / (1.0 + j.frobenius_norm());
            assert!(err < 1e-6, "seed {s}: error {err}");
        }
    }

    #[test]
    fn stack_tail_jacobian_matches_finite_differences() {
        let stack =
            StackParams::new(vec![random_block(3, 5, 1300), random_block(3, 6, 1310)]).unwrap();
        let prefix: Vec<Vector> = (0..2).map(|i| seeded_gaussian_vector(3, Seed(1320 + i))).collect();
        let tail = stack.tail(&prefix).unwrap();
        let x = seeded_gaussian_vector(3, Seed(1330));
        let j = tail.jacobian(&x).unwrap();
        let fd = finite_difference_jacobian(|v| tail.eval(v), &x, 1e-6).unwrap();
        assert!((&j - &fd).frobenius_norm() / (1.0 + j.frobenius_norm()) < 1e-6);
    }

    #[test]
    fn zeroed_branches_make_identity() {
        let d = 3;
        let b = TransformerBlockParams::new(
            LayerNormParams::standard(d),
            AttentionParams::new(
                seeded_gaussian(d, d, Seed(1400)),
                seeded_gaussian(d, d, Seed(1401)),
                Matrix::zeros(d, d),
            )
            .unwrap(),
            LayerNormParams::standard(d),
            seeded_gaussian(5, d, Seed(1402)),
            seeded_gaussian_vector(5, Seed(1403)),
            Matrix::zeros(d, 5),
            Vector::zeros(d),
        )
        .unwrap();
        let seq = random_seq(d, 3, 1410);
        let out = b.forward(&seq).unwrap();
        for i in 0..3 {
            assert!((&out[i] - seq.get(i)).norm() == 0.0);
        }
    }

    #[test]
    fn residual_departure_is_bounded_uniformly() {
        // out - x = attention residual + mlp residual; both read
        // normalized vectors, so a weight-only bound holds everywhere
        let b = random_block(4, 6, 1500);
        let tail = b.tail(&[seeded_gaussian_vector(4, Seed(1510))]).unwrap();
        let gamma1 = b.ln1.gamma.norm();
        let gamma2 = b.ln2.gamma.norm();
        let attn_bound = b.attn.v.frobenius_norm() * gamma1;
        // |gelu(z)| <= |z| entrywise
        let mlp_bound =
            b.w2.frobenius_norm() * (b.w1.frobenius_norm() * gamma2 + b.b1.norm()) + b.b2.norm();
        let bound = attn_bound + mlp_bound;
        for s in 0..200u64 {
            let scale = 10f64.powf((s % 5) as f64 - 1.0);
            let x = seeded_gaussian_vector(4, Seed(1520 + s)).scaled(scale);
            let out = tail.eval(&x).unwrap();
            let dep = (&out - &x).norm();
            assert!(dep <= bound + 1e-9, "departure {dep} exceeds bound {bound}");
        }
    }
}
