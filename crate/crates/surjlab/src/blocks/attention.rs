use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{Matrix, Vector};
use crate::Result;

use super::{DiffMap, Sequence};

/// Single-head causal softmax attention. Position i attends over
/// positions j <= i with logits e_ij = a_j^T K^T Q a_i and output
/// b_i = sum_j softmax_j(e_i)_j * V a_j. No scaling factor is applied to
/// the logits; absorbing it into K is equivalent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionParams {
    pub k: Matrix,
    pub q: Matrix,
    pub v: Matrix,
}

impl AttentionParams {
    pub fn new(k: Matrix, q: Matrix, v: Matrix) -> Result<Self> {
        let p = AttentionParams { k, q, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.k.rows();
        for (m, name) in [(&self.k, "K"), (&self.q, "Q"), (&self.v, "V")] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.rows().max(m.cols()),
                    context: match name {
                        "K" => "attention (K must be square of the shared dimension)",
                        "Q" => "attention (Q must be square of the shared dimension)",
                        _ => "attention (V must be square of the shared dimension)",
                    },
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.k.rows()
    }

    /// The score matrix K^T Q that defines the logit quadratic form.
    pub fn score_matrix(&self) -> Matrix {
        self.k.transpose().matmul(&self.q)
    }

    pub fn forward(&self, seq: &Sequence) -> Result<Sequence> {
        if seq.is_empty() {
            return Err(Error::InvalidInput("attention needs at least one position".into()));
        }
        if seq.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: seq.dim(),
                context: "attention input",
            });
        }
        let kt_q = self.score_matrix();
        // cache K-side projections once; logits are (a_j^T K^T Q) a_i
        let keyed: Vec<Vector> = seq.iter().map(|a| kt_q.tr_matvec(a)).collect();
        let values: Vec<Vector> = seq.iter().map(|a| self.v.matvec(a)).collect();
        let mut out = Sequence::empty(self.dim());
        for i in 0..seq.len() {
            let a_i = seq.get(i);
            let logits: Vec<f64> = (0..=i).map(|j| keyed[j].dot(a_i)).collect();
            let weights = softmax(&logits);
            let mut b = Vector::zeros(self.dim());
            for (j, w) in weights.iter().enumerate() {
                b = b.axpy(*w, &values[j]);
            }
            out.push(b);
        }
        Ok(out)
    }
}

/// Max-subtracted softmax; exact up to rounding, safe for any logit
/// magnitudes.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&e| (e - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Attention output at the final position as a function of that
/// position's input, with the earlier positions frozen. This is the
/// shape in which attention enters both the pre-norm fixed-point solver
/// and the token-by-token sequence inverters.
///
/// `prefix` holds the frozen inputs exactly as attention sees them (for
/// a pre-norm block that means already normalized).
#[derive(Clone, Debug)]
pub struct AttnTail {
    pub params: AttentionParams,
    pub prefix: Vec<Vector>,
}

impl AttnTail {
    pub fn new(params: AttentionParams, prefix: Vec<Vector>) -> Result<Self> {
        for p in &prefix {
            if p.dim() != params.dim() {
                return Err(Error::DimensionMismatch {
                    expected: params.dim(),
                    got: p.dim(),
                    context: "attention tail prefix",
                });
            }
        }
        Ok(AttnTail { params, prefix })
    }

    /// Output, softmax weights, and per-position values at the last
    /// position; shared by eval and jacobian.
    fn weights_and_values(&self, x: &Vector) -> (Vector, Vec<f64>, Vec<Vector>) {
        let kt_q = self.params.score_matrix();
        let scored = kt_q.matvec(x); // e_j = h_j . (K^T Q x)
        let mut logits: Vec<f64> = self.prefix.iter().map(|h| h.dot(&scored)).collect();
        logits.push(x.dot(&scored));
        let weights = softmax(&logits);
        let mut values: Vec<Vector> = self.prefix.iter().map(|h| self.params.v.matvec(h)).collect();
        values.push(self.params.v.matvec(x));
        let mut b = Vector::zeros(self.params.dim());
        for (w, v) in weights.iter().zip(&values) {
            b = b.axpy(*w, v);
        }
        (b, weights, values)
    }
}

impl DiffMap for AttnTail {
    fn in_dim(&self) -> usize {
        self.params.dim()
    }
    fn out_dim(&self) -> usize {
        self.params.dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: x.dim(),
                context: "attention tail input",
            });
        }
        Ok(self.weights_and_values(x).0)
    }

    /// db/dx = w_n V + sum_j w_j (V h_j - b) g_j^T, where g_j is the
    /// gradient of logit j in x: Q^T K h_j for frozen positions and
    /// (K^T Q + Q^T K) x for the self term.
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        if x.dim() != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: x.dim(),
                context: "attention tail input",
            });
        }
        let (b, weights, values) = self.weights_and_values(x);
        let kt_q = self.params.score_matrix();
        let n = self.prefix.len(); // index of the self position
        let mut jac = self.params.v.scaled(weights[n]);
        for j in 0..=n {
            let g = if j < n {
                kt_q.tr_matvec(&self.prefix[j])
            } else {
                &kt_q.matvec(x) + &kt_q.tr_matvec(x)
            };
            let dv = &values[j] - &b;
            let rank1 = Matrix::outer(&dv, &g).scaled(weights[j]);
            jac = &jac + &rank1;
        }
        Ok(jac)
    }
}
