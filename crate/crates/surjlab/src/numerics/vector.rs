use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Dense real vector. Entries are finite on construction; arithmetic
/// between vectors does not re-validate, so solver loops stay cheap and
/// can detect overflow themselves via [`Vector::is_finite`].
#[derive(Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Wraps entries, panicking on NaN or infinity: non-finite model or
    /// target data is a caller bug, not a recoverable state.
    pub fn new(data: Vec<f64>) -> Self {
        assert!(
            data.iter().all(|v| v.is_finite()),
            "vector entries must be finite"
        );
        Vector { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector { data: vec![0.0; dim] }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize) -> f64) -> Self {
        Vector::new((0..dim).map(f).collect())
    }

    /// Internal constructor for arithmetic results; skips validation.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector::from_raw(self.data.iter().map(|v| v * s).collect())
    }

    /// self + s * other, the workhorse of every iteration loop.
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        )
    }

    /// Copy with one extra trailing coordinate. Used to feed a time
    /// channel into conditioned networks.
    pub fn appended(&self, extra: f64) -> Vector {
        let mut data = self.data.clone();
        data.push(extra);
        Vector::from_raw(data)
    }

    /// First `n` coordinates.
    pub fn truncated(&self, n: usize) -> Vector {
        Vector::from_raw(self.data[..n].to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, other: &Vector) -> Vector {
        self.axpy(1.0, other)
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, other: &Vector) -> Vector {
        self.axpy(-1.0, other)
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;
    fn mul(self, s: f64) -> Vector {
        self.scaled(s)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self.scaled(-1.0)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.data)
    }
}

// JSON form: a flat numeric array. serde_json prints f64 in the
// shortest form that parses back to the identical bits, so file round
// trips are exact.
impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.data.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(D::Error::custom("vector entries must be finite"));
        }
        Ok(Vector { data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = Vector::new(vec![1.0, 2.0, 3.0]);
        let b = Vector::new(vec![4.0, -5.0, 6.0]);
        assert_eq!(a.dot(&b), 1.0 * 4.0 - 2.0 * 5.0 + 3.0 * 6.0);
        assert_eq!((&a + &b).as_slice(), &[5.0, -3.0, 9.0]);
        assert_eq!((&a - &b).as_slice(), &[-3.0, 7.0, -3.0]);
        assert_eq!(a.scaled(2.0).as_slice(), &[2.0, 4.0, 6.0]);
        assert_eq!(Vector::new(vec![3.0, 4.0]).norm(), 5.0);
        assert_eq!(a.mean(), 2.0);
    }

    #[test]
    #[should_panic(expected = "finite")]
    fn rejects_nan() {
        Vector::new(vec![0.0, f64::NAN]);
    }

    #[test]
    fn append_truncate_round_trip() {
        let a = Vector::new(vec![1.0, 2.0]);
        let b = a.appended(0.5);
        assert_eq!(b.dim(), 3);
        assert_eq!(b[2], 0.5);
        assert_eq!(b.truncated(2), a);
    }
}
