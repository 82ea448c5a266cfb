//! Topological degree of a map on a box, computed the blunt way: find
//! every root of f(x) = y inside the box with dense Newton starts and
//! add up the orientation signs of the Jacobian there. Honest for the
//! low dimensions it is restricted to (d <= 3), where a modest grid of
//! starts reliably lands in every basin; it refuses to answer whenever
//! the degree is genuinely ill-posed (y too close to the boundary
//! image, a root on the boundary, a degenerate root).

use serde::Serialize;

use crate::error::Error;
use crate::numerics::{det_sign_logabs, Matrix, Vector};
use crate::solvers::newton_invert;
use crate::Result;

const MAX_DIM: usize = 3;
const DEDUPE_REL: f64 = 1e-6;
const BOUNDARY_GUARD_FACTOR: f64 = 10.0;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_ITERS: usize = 80;
const BOUNDARY_DENSITY: usize = 4; // samples per grid cell per face axis

/// Axis-aligned box domain.
#[derive(Clone, Debug)]
pub struct DomainBox {
    pub lo: Vector,
    pub hi: Vector,
}

impl DomainBox {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch {
                expected: lo.dim(),
                got: hi.dim(),
                context: "domain box corners",
            });
        }
        for i in 0..lo.dim() {
            if !(lo[i] < hi[i]) {
                return Err(Error::InvalidInput(format!(
                    "box is empty along axis {i}: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(DomainBox { lo, hi })
    }

    /// Cube [-r, r]^d.
    pub fn centered_cube(dim: usize, r: f64) -> Result<Self> {
        DomainBox::new(Vector::from_fn(dim, |_| -r), Vector::from_fn(dim, |_| r))
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn diameter(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        (0..self.dim()).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    /// Distance to the nearest face, for points inside.
    pub fn boundary_distance(&self, x: &Vector) -> f64 {
        (0..self.dim())
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeResult {
    pub degree: i64,
    pub roots: Vec<Vector>,
    /// det-sign of the Jacobian at each root, same order as `roots`.
    pub signs: Vec<i32>,
    /// Newton starts that failed to converge or converged outside the box.
    pub rejected: usize,
    /// Smallest |f(x) - y| seen on the boundary sampling.
    pub boundary_clearance: f64,
}

/// Degree of f on the box at the regular value y, with Newton launched
/// from `grid_per_axis`^d cell centers.
///
/// Errors instead of guessing: `BoundaryValueTooClose` when the sampled
/// boundary clearance falls under 10x the root-dedupe radius (the
/// degree is unstable there), `BoundaryRoot` when a root lands within
/// that guard of a face, `DegenerateRoot` when the Jacobian at a root
/// is too close to singular for its sign to be orientation rather than
/// noise (the Newton position error would exceed the dedupe radius).
pub fn brouwer_degree<F, J>(
    f: F,
    jac: J,
    domain: &DomainBox,
    y: &Vector,
    grid_per_axis: usize,
) -> Result<DegreeResult>
where
    F: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Matrix>,
{
    let d = domain.dim();
    if d > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "degree oracle is limited to dimension {MAX_DIM}, got {d}"
        )));
    }
    if y.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: y.dim(), context: "degree target" });
    }
    if grid_per_axis == 0 {
        return Err(Error::InvalidInput("grid_per_axis must be positive".into()));
    }
    let dedupe_radius = DEDUPE_REL * domain.diameter();
    let guard = BOUNDARY_GUARD_FACTOR * dedupe_radius;

    let clearance = boundary_clearance(&f, domain, y, grid_per_axis)?;
    if clearance <= guard {
        return Err(Error::BoundaryValueTooClose { min_dist: clearance, needed: guard });
    }

    let mut roots: Vec<Vector> = Vec::new();
    let mut rejected = 0usize;
    for start in cell_centers(domain, grid_per_axis) {
        let run = newton_invert(&f, &jac, y, &start, NEWTON_TOL, NEWTON_ITERS);
        let root = match run {
            Ok(r) if r.converged => r.x,
            _ => {
                rejected += 1;
                continue;
            }
        };
        if !domain.contains(&root) {
            rejected += 1;
            continue;
        }
        if domain.boundary_distance(&root) < guard {
            return Err(Error::BoundaryRoot);
        }
        if roots.iter().any(|r| (r - &root).norm() < dedupe_radius) {
            continue; // same root reached from another cell
        }
        roots.push(root);
    }

    // Newton stops at an approximate root whose position error is about
    // residual / sigma_min(J). A sign read there is only trustworthy if
    // that error stays under the dedupe radius; at a degenerate root
    // sigma_min collapses and the bound blows up, so refuse. sigma_min
    // is bounded below by |det J| / ||J||_F^(d-1).
    let log_pos_floor = (NEWTON_TOL * (1.0 + y.norm())).ln() - dedupe_radius.ln();
    let mut signs = Vec::with_capacity(roots.len());
    for r in &roots {
        let j = jac(r)?;
        let (s, log_abs) = det_sign_logabs(&j);
        let log_sigma_min = log_abs - (d as f64 - 1.0) * j.frobenius_norm().max(f64::MIN_POSITIVE).ln();
        if s == 0 || log_sigma_min <= log_pos_floor {
            return Err(Error::DegenerateRoot);
        }
        signs.push(s);
    }
    let degree = signs.iter().map(|&s| s as i64).sum();
    Ok(DegreeResult { degree, roots, signs, rejected, boundary_clearance: clearance })
}

/// Degree of every member of a one-parameter family at a shared target;
/// the caller inspects whether the list is constant, which is what the
/// homotopy invariance of the degree predicts whenever y stays off all
/// boundary images. Restricted to d <= 2 to keep the dense sampling
/// honest across the whole family.
pub fn homotopy_invariance_check<F, J>(
    f: F,
    jac: J,
    domain: &DomainBox,
    y: &Vector,
    grid_per_axis: usize,
    t_samples: usize,
) -> Result<Vec<(f64, i64)>>
where
    F: Fn(&Vector, f64) -> Result<Vector>,
    J: Fn(&Vector, f64) -> Result<Matrix>,
{
    if domain.dim() > 2 {
        return Err(Error::InvalidInput(
            "homotopy invariance check is limited to dimension 2".into(),
        ));
    }
    if t_samples < 2 {
        return Err(Error::InvalidInput("need at least two homotopy samples".into()));
    }
    let mut out = Vec::with_capacity(t_samples);
    for k in 0..t_samples {
        let t = k as f64 / (t_samples - 1) as f64;
        let r = brouwer_degree(|x| f(x, t), |x| jac(x, t), domain, y, grid_per_axis)?;
        out.push((t, r.degree));
    }
    Ok(out)
}

fn cell_centers(domain: &DomainBox, grid: usize) -> Vec<Vector> {
    let d = domain.dim();
    let mut out = Vec::with_capacity(grid.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        out.push(Vector::from_fn(d, |i| {
            let w = (domain.hi[i] - domain.lo[i]) / grid as f64;
            domain.lo[i] + (idx[i] as f64 + 0.5) * w
        }));
        let mut axis = 0;
        loop {
            if axis == d {
                return out;
            }
            idx[axis] += 1;
            if idx[axis] < grid {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Min |f(x) - y| over a dense sampling of every face.
fn boundary_clearance<F>(f: &F, domain: &DomainBox, y: &Vector, grid: usize) -> Result<f64>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let d = domain.dim();
    let per_axis = BOUNDARY_DENSITY * grid + 1;
    let mut min_dist = f64::INFINITY;
    let mut probe = |x: &Vector| -> Result<()> {
        let v = f(x)?;
        min_dist = min_dist.min((&v - y).norm());
        Ok(())
    };
    for axis in 0..d {
        for &face in &[0usize, 1usize] {
            let fixed = if face == 0 { domain.lo[axis] } else { domain.hi[axis] };
            let free: Vec<usize> = (0..d).filter(|&i| i != axis).collect();
            match free.len() {
                0 => {
                    probe(&Vector::from_fn(1, |_| fixed))?;
                }
                1 => {
                    let a = free[0];
                    for k in 0..per_axis {
                        let s = k as f64 / (per_axis - 1) as f64;
                        let x = Vector::from_fn(d, |i| {
                            if i == axis {
                                fixed
                            } else {
                                domain.lo[a] + s * (domain.hi[a] - domain.lo[a])
                            }
                        });
                        probe(&x)?;
                    }
                }
                2 => {
                    let (a, b) = (free[0], free[1]);
                    for ka in 0..per_axis {
                        for kb in 0..per_axis {
                            let sa = ka as f64 / (per_axis - 1) as f64;
                            let sb = kb as f64 / (per_axis - 1) as f64;
                            let x = Vector::from_fn(d, |i| {
                                if i == axis {
                                    fixed
                                } else if i == a {
                                    domain.lo[a] + sa * (domain.hi[a] - domain.lo[a])
                                } else {
                                    domain.lo[b] + sb * (domain.hi[b] - domain.lo[b])
                                }
                            });
                            probe(&x)?;
                        }
                    }
                }
                _ => unreachable!("dimension capped at 3"),
            }
        }
    }
    Ok(min_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{Activation, MlpParams};
    use crate::numerics::{det_sign, seeded_gaussian, solve_linear, Seed};
    use crate::solvers::{cubic_forward, cubic_jacobian, leaky_mlp_invert_exact};

    fn cube_map(x: &Vector) -> Result<Vector> {
        Ok(Vector::new(vec![x[0] * x[0] * x[0]]))
    }
    fn cube_jac(x: &Vector) -> Result<Matrix> {
        Ok(Matrix::from_rows(vec![vec![3.0 * x[0] * x[0]]]))
    }

    #[test]
    fn cube_has_degree_one() {
        let domain = DomainBox::centered_cube(1, 2.0).unwrap();
        let r = brouwer_degree(cube_map, cube_jac, &domain, &Vector::new(vec![1.0]), 8).unwrap();
        assert_eq!(r.degree, 1);
        assert_eq!(r.roots.len(), 1);
        assert!((r.roots[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn square_has_degree_zero_with_two_roots() {
        let f = |x: &Vector| Ok(Vector::new(vec![x[0] * x[0]]));
        let j = |x: &Vector| Ok(Matrix::from_rows(vec![vec![2.0 * x[0]]]));
        let domain = DomainBox::centered_cube(1, 2.0).unwrap();
        let r = brouwer_degree(f, j, &domain, &Vector::new(vec![1.0]), 8).unwrap();
        assert_eq!(r.degree, 0);
        assert_eq!(r.roots.len(), 2);
        let mut signs = r.signs.clone();
        signs.sort_unstable();
        assert_eq!(signs, vec![-1, 1]);
    }

    #[test]
    fn degenerate_root_is_refused() {
        // y = 0 puts the only root at x = 0 where the cube's slope dies
        let domain = DomainBox::centered_cube(1, 2.0).unwrap();
        let err = brouwer_degree(cube_map, cube_jac, &domain, &Vector::zeros(1), 8);
        assert!(matches!(err, Err(Error::DegenerateRoot)));
    }

    #[test]
    fn boundary_value_is_refused() {
        // identity map with the target on a face
        let f = |x: &Vector| Ok(x.clone());
        let j = |x: &Vector| Ok(Matrix::identity(x.dim()));
        let domain = DomainBox::centered_cube(1, 1.0).unwrap();
        let err = brouwer_degree(f, j, &domain, &Vector::new(vec![1.0]), 8);
        assert!(matches!(err, Err(Error::BoundaryValueTooClose { .. })));
    }

    #[test]
    fn leaky_net_degree_matches_weight_determinant_sign() {
        // an invertible piecewise-linear net has exactly one pre-image,
        // and its orientation is the sign of det(W2 W1) on the cell the
        // root lives in, which equals det sign of W2 W1 up to the
        // positive slope factors
        for s in 0..10u64 {
            let d = 1 + (s % 2) as usize;
            let net = MlpParams::two_layer(
                seeded_gaussian(d, d, Seed(7000 + 10 * s)),
                Vector::zeros(d),
                Activation::LeakyRelu { alpha: 0.4 },
                seeded_gaussian(d, d, Seed(7001 + 10 * s)),
                Vector::zeros(d),
            )
            .unwrap();
            let w21 = net.layers[1].weight.matmul(&net.layers[0].weight);
            let expected = det_sign(&w21) as i64;
            let y = Vector::from_fn(d, |i| 0.3 - 0.1 * i as f64);
            // size the box from the known pre-image so ill-conditioned
            // draws cannot push the root outside it
            let exact = leaky_mlp_invert_exact(&net, &y, 1e-9).unwrap();
            let r = 3.0 * exact.x.norm_inf() + 2.0;
            let domain = DomainBox::centered_cube(d, r).unwrap();
            let r = brouwer_degree(
                |x| Ok(net.forward(x)),
                |x| Ok(net.jacobian(x)),
                &domain,
                &y,
                10,
            )
            .unwrap();
            assert_eq!(r.degree, expected, "seed {s}");
            assert_eq!(r.roots.len(), 1, "seed {s}: a bijection has one root");
        }
    }

    #[test]
    fn grid_refinement_does_not_change_the_answer() {
        let net = MlpParams::two_layer(
            seeded_gaussian(2, 2, Seed(7100)),
            Vector::zeros(2),
            Activation::LeakyRelu { alpha: 0.3 },
            seeded_gaussian(2, 2, Seed(7101)),
            Vector::zeros(2),
        )
        .unwrap();
        let y = Vector::new(vec![0.2, -0.4]);
        let domain = DomainBox::centered_cube(2, 10.0).unwrap();
        let mut degrees = Vec::new();
        for grid in [4, 8, 16] {
            let r = brouwer_degree(
                |x| Ok(net.forward(x)),
                |x| Ok(net.jacobian(x)),
                &domain,
                &y,
                grid,
            )
            .unwrap();
            degrees.push(r.degree);
        }
        assert_eq!(degrees[0], degrees[1]);
        assert_eq!(degrees[1], degrees[2]);
    }

    #[test]
    fn blend_family_keeps_its_degree() {
        // deform the activation from identity to leaky: the degree at a
        // fixed target must not move
        let w1 = seeded_gaussian(2, 2, Seed(7200));
        let w2 = seeded_gaussian(2, 2, Seed(7201));
        let y = Vector::new(vec![0.3, 0.1]);
        // each family member is piecewise linear and invertible in closed
        // form, so size the box around the whole root path
        let mut reach = 1.0f64;
        for k in 0..11 {
            let t = k as f64 / 10.0;
            let slope = Activation::BlendedLeaky { t, alpha: 0.35 }.deriv(-1.0);
            let h = solve_linear(&w2, &y).unwrap();
            let z = Vector::from_fn(2, |i| if h[i] >= 0.0 { h[i] } else { h[i] / slope });
            let root = solve_linear(&w1, &z).unwrap();
            reach = reach.max(root.norm_inf());
        }
        let domain = DomainBox::centered_cube(2, 2.0 * reach + 3.0).unwrap();
        let f = |x: &Vector, t: f64| {
            let act = Activation::BlendedLeaky { t, alpha: 0.35 };
            let z = w1.matvec(x);
            let h = Vector::from_fn(2, |i| act.eval(z[i]));
            Ok(w2.matvec(&h))
        };
        let j = |x: &Vector, t: f64| {
            let act = Activation::BlendedLeaky { t, alpha: 0.35 };
            let z = w1.matvec(x);
            let mut scaled = w1.clone();
            for i in 0..2 {
                let g = act.deriv(z[i]);
                for c in 0..2 {
                    scaled[(i, c)] *= g;
                }
            }
            Ok(w2.matmul(&scaled))
        };
        let trace = homotopy_invariance_check(f, j, &domain, &y, 8, 11).unwrap();
        assert_eq!(trace.len(), 11);
        let first = trace[0].1;
        for (t, deg) in &trace {
            assert_eq!(*deg, first, "degree moved at t = {t}");
        }
    }

    #[test]
    fn cubic_family_keeps_its_degree() {
        // walk the linear term of the linear-plus-cubic map in
        let m = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        let n = Matrix::identity(2);
        let y = Vector::new(vec![0.1, 0.1]);
        let domain = DomainBox::centered_cube(2, 3.0).unwrap();
        let f = |x: &Vector, t: f64| Ok(cubic_forward(&m.scaled(t), &n, x));
        let j = |x: &Vector, t: f64| Ok(cubic_jacobian(&m.scaled(t), &n, x));
        let trace = homotopy_invariance_check(f, j, &domain, &y, 10, 11).unwrap();
        let first = trace[0].1;
        for (t, deg) in &trace {
            assert_eq!(*deg, first, "degree moved at t = {t}");
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let f = |x: &Vector| Ok(x.clone());
        let j = |x: &Vector| Ok(Matrix::identity(x.dim()));
        let domain = DomainBox::centered_cube(4, 1.0).unwrap();
        let err = brouwer_degree(f, j, &domain, &Vector::zeros(4), 4);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
