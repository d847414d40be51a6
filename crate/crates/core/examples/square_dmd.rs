//! With as many snapshots as channels, decide which closed form of the
//! shifted spectrum the trained reservoir follows.

use domlab::dynamics::SnapshotMatrix;
use domlab::numerics::{eigvals, Matrix};
use domlab::reservoir::{exact_linear_snapshots, init_reservoir, linear_closed_loop_matrix, Activation, ReservoirParams};
use domlab::spectral::predicted_shifted_eigs_square;
use domlab::training::train_readout;

fn main() {
    for seed in 0..4 {
        let d = 3 + seed as usize % 2;
        let cfg = init_reservoir(&ReservoirParams {
            n: 20,
            d,
            gamma: 1.2,
            omega: 0.5,
            sigma_b: 0.0,
            activation: Activation::Linear,
            seed,
        })
        .unwrap();
        let u = SnapshotMatrix::new(
            Matrix::from_fn(d, d, |i, j| (((i + 1) * (j + 1)) as f64 + seed as f64).sin()),
            0.2,
            0.0,
        )
        .unwrap();
        let r = exact_linear_snapshots(&cfg, &u).unwrap().r;
        let w_out = train_readout(&r, &u).unwrap().w_out;
        let spectrum = eigvals(&linear_closed_loop_matrix(&cfg, &w_out)).unwrap();
        let sq = predicted_shifted_eigs_square(&u.data, &cfg, u.h, &spectrum, 1e-6).unwrap();
        println!(
            "seed {seed} d = {d}: printed {:.2e}, proof-implied {:.2e} -> {}",
            sq.printed_distance,
            sq.proof_implied_distance,
            sq.matched.as_str()
        );
    }
}
