use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{det_sign, Matrix, Vector};
use crate::Result;

use super::Sequence;

/// State decay applied per token before the rank-one update.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gating {
    /// No decay: the state accumulates every token at full weight.
    None,
    /// Scalar input-dependent decay exp(-softplus(gamma_row . a) * e^rate),
    /// always in (0, 1).
    Mamba2 { gamma_row: Vector, rate: f64 },
    /// Column-wise decay alpha = exp(-exp(A a)); multiplies state column j
    /// by alpha_j. Forward evaluation only.
    Rwkv6 { a: Matrix },
}

/// One token's decay, in the shape the recurrence applies it.
#[derive(Clone, Debug)]
pub enum GateFactor {
    Unit,
    Scalar(f64),
    Columns(Vector),
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Gating {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Gating::None => Ok(()),
            Gating::Mamba2 { gamma_row, rate } => {
                if gamma_row.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: gamma_row.dim(),
                        context: "gating row vector",
                    });
                }
                if !rate.is_finite() {
                    return Err(Error::InvalidInput("gating rate must be finite".into()));
                }
                Ok(())
            }
            Gating::Rwkv6 { a } => {
                if a.rows() != dim || a.cols() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: a.rows().max(a.cols()),
                        context: "gating matrix",
                    });
                }
                Ok(())
            }
        }
    }

    pub fn factor(&self, token: &Vector) -> GateFactor {
        match self {
            Gating::None => GateFactor::Unit,
            Gating::Mamba2 { .. } => GateFactor::Scalar(self.scalar_gate(token)),
            Gating::Rwkv6 { a } => {
                let z = a.matvec(token);
                GateFactor::Columns(Vector::from_fn(z.dim(), |j| (-z[j].exp()).exp()))
            }
        }
    }

    /// The scalar decay for the Mamba2 form; panics for other kinds.
    pub fn scalar_gate(&self, token: &Vector) -> f64 {
        match self {
            Gating::Mamba2 { gamma_row, rate } => {
                (-softplus(gamma_row.dot(token)) * rate.exp()).exp()
            }
            _ => panic!("scalar_gate is only defined for the scalar-decay gating"),
        }
    }

    /// Gradient of the scalar decay in the token. With g = gamma(a):
    /// dg/da = -g * e^rate * sigmoid(gamma_row . a) * gamma_row.
    pub fn scalar_gate_grad(&self, token: &Vector) -> Vector {
        match self {
            Gating::Mamba2 { gamma_row, rate } => {
                let g = self.scalar_gate(token);
                let s = sigmoid(gamma_row.dot(token));
                gamma_row.scaled(-g * rate.exp() * s)
            }
            _ => panic!("scalar_gate_grad is only defined for the scalar-decay gating"),
        }
    }
}

fn apply_gate(state: &Matrix, gate: &GateFactor) -> Matrix {
    match gate {
        GateFactor::Unit => state.clone(),
        GateFactor::Scalar(g) => state.scaled(*g),
        GateFactor::Columns(alpha) => {
            Matrix::from_fn(state.rows(), state.cols(), |i, j| state[(i, j)] * alpha[j])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetentionMode {
    Recurrent,
    Parallel,
}

/// Linear attention with a matrix-valued recurrent state:
///
///   S_i = G_i (.) S_{i-1} + (V a_i)(K a_i)^T
///   b_i = S_i Q a_i
///
/// Without gating this equals the parallel form
/// b_i = sum_{j<=i} ((K a_j) . (Q a_i)) V a_j, which the tests pin.
///
/// V is required to be invertible up front because the token inverters
/// conjugate by it; a singular V would fail there with a much less
/// useful error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetentionParams {
    pub k: Matrix,
    pub q: Matrix,
    pub v: Matrix,
    pub gating: Gating,
}

impl RetentionParams {
    pub fn new(k: Matrix, q: Matrix, v: Matrix, gating: Gating) -> Result<Self> {
        let p = RetentionParams { k, q, v, gating };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.k.rows();
        for (m, ctx) in [
            (&self.k, "retention (K must be square of the shared dimension)"),
            (&self.q, "retention (Q must be square of the shared dimension)"),
            (&self.v, "retention (V must be square of the shared dimension)"),
        ] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.rows().max(m.cols()),
                    context: ctx,
                });
            }
        }
        if det_sign(&self.v) == 0 {
            return Err(Error::InvalidInput("retention V must be invertible".into()));
        }
        self.gating.validate(d)
    }

    pub fn dim(&self) -> usize {
        self.k.rows()
    }

    /// Advance the state by one token and read out that token's output.
    pub fn token_forward(&self, state: &Matrix, token: &Vector) -> (Vector, Matrix) {
        let gate = self.gating.factor(token);
        let decayed = apply_gate(state, &gate);
        let update = Matrix::outer(&self.v.matvec(token), &self.k.matvec(token));
        let new_state = &decayed + &update;
        let b = new_state.matvec(&self.q.matvec(token));
        (b, new_state)
    }

    pub fn forward(&self, seq: &Sequence, mode: RetentionMode) -> Result<Sequence> {
        if seq.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: seq.dim(),
                context: "retention input",
            });
        }
        match mode {
            RetentionMode::Recurrent => {
                let mut state = Matrix::zeros(self.dim(), self.dim());
                let mut out = Sequence::empty(self.dim());
                for a in seq.iter() {
                    let (b, s) = self.token_forward(&state, a);
                    out.push(b);
                    state = s;
                }
                Ok(out)
            }
            RetentionMode::Parallel => {
                if !matches!(self.gating, Gating::None) {
                    return Err(Error::InvalidInput(
                        "parallel form is only implemented without gating".into(),
                    ));
                }
                let keyed: Vec<Vector> = seq.iter().map(|a| self.k.matvec(a)).collect();
                let values: Vec<Vector> = seq.iter().map(|a| self.v.matvec(a)).collect();
                let mut out = Sequence::empty(self.dim());
                for i in 0..seq.len() {
                    let query = self.q.matvec(seq.get(i));
                    let mut b = Vector::zeros(self.dim());
                    for j in 0..=i {
                        b = b.axpy(keyed[j].dot(&query), &values[j]);
                    }
                    out.push(b);
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_jacobian, seeded_gaussian, seeded_gaussian_vector, Seed};

    fn ungated(d: usize, seed: u64) -> RetentionParams {
        RetentionParams::new(
            seeded_gaussian(d, d, Seed(seed)),
            seeded_gaussian(d, d, Seed(seed + 1)),
            seeded_gaussian(d, d, Seed(seed + 2)),
            Gating::None,
        )
        .unwrap()
    }

    #[test]
    fn recurrent_matches_parallel() {
        for s in 0..5u64 {
            let p = ungated(4, 600 + 10 * s);
            let items: Vec<Vector> = (0..6)
                .map(|i| seeded_gaussian_vector(4, Seed(700 + 10 * s + i)))
                .collect();
            let seq = Sequence::new(items).unwrap();
            let rec = p.forward(&seq, RetentionMode::Recurrent).unwrap();
            let par = p.forward(&seq, RetentionMode::Parallel).unwrap();
            for i in 0..6 {
                assert!((&rec[i] - &par[i]).norm() < 1e-10, "seed {s} position {i}");
            }
        }
    }

    #[test]
    fn scalar_first_token_is_a_cube() {
        // d = 1, K = Q = V = 1: b_1 = a^3
        let p = RetentionParams::new(
            Matrix::identity(1),
            Matrix::identity(1),
            Matrix::identity(1),
            Gating::None,
        )
        .unwrap();
        let seq = Sequence::new(vec![Vector::new(vec![2.0])]).unwrap();
        let out = p.forward(&seq, RetentionMode::Recurrent).unwrap();
        assert!((out[0][0] - 8.0).abs() < 1e-14);
    }

    #[test]
    fn token_forward_chains_to_forward() {
        let p = ungated(3, 800);
        let items: Vec<Vector> = (0..5).map(|i| seeded_gaussian_vector(3, Seed(810 + i))).collect();
        let seq = Sequence::new(items.clone()).unwrap();
        let out = p.forward(&seq, RetentionMode::Recurrent).unwrap();
        let mut state = Matrix::zeros(3, 3);
        for (i, a) in items.iter().enumerate() {
            let (b, s) = p.token_forward(&state, a);
            assert!((&b - &out[i]).norm() == 0.0, "position {i}");
            state = s;
        }
    }

    #[test]
    fn scalar_gate_stays_in_unit_interval() {
        let gating = Gating::Mamba2 {
            gamma_row: seeded_gaussian_vector(4, Seed(820)),
            rate: 0.3,
        };
        for s in 0..50u64 {
            let a = seeded_gaussian_vector(4, Seed(830 + s)).scaled(5.0);
            let g = gating.scalar_gate(&a);
            assert!(g > 0.0 && g < 1.0, "gate {g} out of range");
        }
    }

    #[test]
    fn column_gate_stays_in_unit_interval() {
        // alpha = exp(-exp(z)) lies in (0, 1) for real z, but floats
        // saturate both ends: z > ~6.6 underflows alpha to 0, z < ~-36
        // rounds it to 1. Pin the strict interior on moderate z and the
        // saturated-but-sane range on wild z.
        let gating = Gating::Rwkv6 { a: Matrix::identity(3) };
        for k in -30..=30 {
            let z = k as f64 * 0.1;
            let a = Vector::new(vec![z, 0.0, -z]);
            match gating.factor(&a) {
                GateFactor::Columns(alpha) => {
                    for j in 0..3 {
                        assert!(alpha[j] > 0.0 && alpha[j] < 1.0, "z = {z}, alpha = {}", alpha[j]);
                    }
                }
                _ => panic!("expected column gate"),
            }
        }
        let wild = Gating::Rwkv6 { a: seeded_gaussian(3, 3, Seed(840)) };
        for s in 0..50u64 {
            let a = seeded_gaussian_vector(3, Seed(850 + s)).scaled(3.0);
            match wild.factor(&a) {
                GateFactor::Columns(alpha) => {
                    for j in 0..3 {
                        assert!((0.0..=1.0).contains(&alpha[j]));
                    }
                }
                _ => panic!("expected column gate"),
            }
        }
    }

    #[test]
    fn scalar_gate_gradient_matches_finite_differences() {
        let gating = Gating::Mamba2 {
            gamma_row: seeded_gaussian_vector(4, Seed(860)),
            rate: -0.2,
        };
        for s in 0..10u64 {
            let a = seeded_gaussian_vector(4, Seed(870 + s));
            let grad = gating.scalar_gate_grad(&a);
            let fd = finite_difference_jacobian(
                |x| Ok(Vector::new(vec![gating.scalar_gate(x)])),
                &a,
                1e-6,
            )
            .unwrap();
            for j in 0..4 {
                assert!((grad[j] - fd[(0, j)]).abs() < 1e-8, "seed {s} entry {j}");
            }
        }
    }

    #[test]
    fn gated_decay_shrinks_history() {
        // with a strong decay the second output is dominated by the
        // second token's own rank-one term
        let d = 2;
        let p = RetentionParams::new(
            Matrix::identity(d),
            Matrix::identity(d),
            Matrix::identity(d),
            Gating::Mamba2 {
                gamma_row: Vector::new(vec![0.0, 0.0]),
                rate: 8.0, // gate = exp(-softplus(0) e^8) ~ 1e-898
            },
        )
        .unwrap();
        let a1 = Vector::new(vec![3.0, 1.0]);
        let a2 = Vector::new(vec![0.5, -0.7]);
        let seq = Sequence::new(vec![a1, a2.clone()]).unwrap();
        let out = p.forward(&seq, RetentionMode::Recurrent).unwrap();
        let own = Matrix::outer(&a2, &a2).matvec(&a2);
        assert!((&out[1] - &own).norm() < 1e-12);
    }

    #[test]
    fn parallel_rejects_gating() {
        let p = RetentionParams::new(
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::identity(2),
            Gating::Mamba2 {
                gamma_row: Vector::zeros(2),
                rate: 0.0,
            },
        )
        .unwrap();
        let seq = Sequence::new(vec![Vector::new(vec![1.0, 2.0])]).unwrap();
        assert!(p.forward(&seq, RetentionMode::Parallel).is_err());
    }

    #[test]
    fn singular_value_projection_rejected() {
        let err = RetentionParams::new(
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::zeros(2, 2),
            Gating::None,
        );
        assert!(err.is_err());
    }
}
