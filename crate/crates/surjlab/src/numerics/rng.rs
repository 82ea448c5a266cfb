use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Matrix, Vector};

/// Seed for every random draw in the crate. ChaCha8 is counter-based,
/// so the same seed yields bit-identical streams across runs and
/// platforms (the crate versions are pinned by the lockfile).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent substream. Restart k of a solver, sample
    /// i of an estimator, and trial t of the battery all get their own
    /// streams so that reordering one loop never shifts another's draws.
    pub fn stream(self, salt: u64) -> Seed {
        Seed(splitmix(self.0 ^ splitmix(salt)))
    }
}

// SplitMix64 finalizer; a cheap, well-mixed u64 -> u64 bijection.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// rows x cols matrix of i.i.d. standard normal entries. The same
/// (rows, cols, seed) triple always produces the identical matrix.
pub fn seeded_gaussian(rows: usize, cols: usize, seed: Seed) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Length-d vector of i.i.d. standard normal entries.
pub fn seeded_gaussian_vector(dim: usize, seed: Seed) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let data: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Vector::new(data)
}
