//! Pre-image solvers. Iterative machinery lives here; the block
//! forward maps stay exact and reject degenerate inputs, and it is the
//! solvers' job to steer around those rejections (by nudging an
//! iterate) rather than the blocks' job to smooth them over.
//!
//! Every solver returns an [`InversionResult`] whose residual is
//! recomputed from a fresh forward pass of the true map at the returned
//! point. Running out of budget is a normal `Ok` outcome with
//! `converged == false`; errors are reserved for structural problems
//! (bad shapes, singular linearizations, degenerate continuation
//! paths).

mod config;
mod cubic;
mod gd;
mod leaky;
mod newton;
mod preln;
mod retention_inv;

pub use config::{GdConfig, HomotopyConfig, InversionResult, Method, SolveConfig};
pub use cubic::{cubic_forward, cubic_jacobian, cubic_map_branches, cubic_map_solve};
pub use gd::gd_invert_token;
pub use leaky::{leaky_mlp_invert_exact, leaky_mlp_invert_homotopy};
pub use newton::newton_invert;
pub use preln::{estimate_perturbation_bound, fixed_point_invert_preln, invert_perturbed_identity};
pub use retention_inv::retention_token_invert;

use crate::blocks::DiffMap;
use crate::numerics::{seeded_gaussian_vector, Seed, Vector};

/// Evaluate g at x, nudging x by a tiny seeded displacement when the
/// map rejects it as degenerate (a norm layer facing a constant
/// vector, typically). The displacement starts at 1e-12 relative scale
/// and grows tenfold per retry; eight dead retries give up.
///
/// Mutates x so the caller keeps iterating from the point that was
/// actually evaluated.
pub(crate) fn eval_nudged<G: DiffMap + ?Sized>(
    g: &G,
    x: &mut Vector,
    seed: Seed,
    counter: &mut u64,
) -> Option<Vector> {
    let mut eta = 1e-12 * (1.0 + x.norm());
    for _ in 0..8 {
        match g.eval(x) {
            Ok(v) => return Some(v),
            Err(_) => {
                *counter += 1;
                let dir = seeded_gaussian_vector(x.dim(), seed.stream(0xD1CE + *counter));
                let n = dir.norm();
                if n > 0.0 {
                    *x = &*x + &dir.scaled(eta / n);
                }
                eta *= 10.0;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{LayerNormParams, LinearMap, LnThen};
    use crate::numerics::Matrix;

    #[test]
    fn nudge_recovers_from_a_degenerate_point() {
        let g = LnThen { ln: LayerNormParams::standard(3), f: LinearMap(Matrix::identity(3)) };
        let mut x = Vector::new(vec![2.0, 2.0, 2.0]); // constant: norm layer rejects it
        let mut count = 0;
        let out = eval_nudged(&g, &mut x, Seed(3), &mut count);
        assert!(out.is_some());
        assert!(count >= 1);
        // the iterate moved, but barely
        assert!((&x - &Vector::new(vec![2.0, 2.0, 2.0])).norm() < 1e-6);
    }
}
