use surjlab::blocks::{Activation, MlpParams};
use surjlab::harness::relu_mlp_unreachable_witness;
use surjlab::numerics::{seeded_gaussian, seeded_gaussian_vector, solve_linear, Matrix, Seed, Vector};
use surjlab::solvers::{leaky_mlp_invert_homotopy, HomotopyConfig};

fn relu_net(d: usize, d1: usize, seed: u64) -> MlpParams {
    MlpParams::two_layer(
        seeded_gaussian(d1, d, Seed(seed)),
        seeded_gaussian_vector(d1, Seed(seed + 1)),
        Activation::Relu,
        seeded_gaussian(d, d1, Seed(seed + 2)),
        seeded_gaussian_vector(d, Seed(seed + 3)),
    )
    .unwrap()
}

fn main() {
    for s in 5200..5220u64 {
        let net = relu_net(2, 3, s);
        let Ok(w) = relu_mlp_unreachable_witness(&net) else {
            println!("seed {s}: no witness");
            continue;
        };
        let mut leaky = net.clone();
        leaky.layers[0].activation = Activation::LeakyRelu { alpha: 0.3 };
        // enumerate patterns by hand
        let w1 = leaky.layers[0].weight.clone();
        let b1 = leaky.layers[0].bias.clone();
        let w2 = leaky.layers[1].weight.clone();
        let b2 = leaky.layers[1].bias.clone();
        let y = w.target.clone();
        let mut found = Vec::new();
        for pattern in 0u32..8 {
            let mut w2d = w2.clone();
            for i in 0..3 {
                let slope = if pattern & (1 << i) != 0 { 1.0 } else { 0.3 };
                for r in 0..2 {
                    w2d[(r, i)] *= slope;
                }
            }
            let sys = w2d.matmul(&w1);
            let rhs = &(&y - &b2) - &w2d.matvec(&b1);
            let Ok(x) = solve_linear(&sys, &rhs) else {
                println!("  seed {s} pat {pattern:03b}: singular");
                continue;
            };
            let z = &w1.matvec(&x) + &b1;
            let consistent = (0..3).all(|i| (z[i] >= 0.0) == (pattern & (1 << i) != 0));
            if consistent {
                let res = (&leaky.forward(&x) - &y).norm();
                found.push((pattern, x.norm(), res));
            }
        }
        let hom = leaky_mlp_invert_homotopy(&leaky, &y, &HomotopyConfig::default());
        println!(
            "seed {s}: witness |y|={:.3}, consistent patterns {:?}, homotopy {:?}",
            y.norm(),
            found,
            hom.map(|r| (r.converged, r.residual)).map_err(|e| format!("{e:?}"))
        );
    }
}
