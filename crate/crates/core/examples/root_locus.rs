//! Retrain the readout on growing prefixes and follow the closed-loop
//! eigenvalue branches as they leave the open-loop cluster.

use domlab::dynamics::SnapshotMatrix;
use domlab::numerics::Matrix;
use domlab::reservoir::{exact_linear_snapshots, init_reservoir, Activation, ReservoirParams};
use domlab::training::{prefix_readouts, train_readout, TrainOptions};

fn main() {
    let cfg = init_reservoir(&ReservoirParams {
        n: 40,
        d: 2,
        gamma: 1.0,
        omega: 0.8,
        sigma_b: 0.0,
        activation: Activation::Linear,
        seed: 1,
    })
    .unwrap();
    let h = 0.05;
    let u = SnapshotMatrix::new(
        Matrix::from_fn(2, 400, |i, j| {
            let t = (j + 1) as f64 * h;
            if i == 0 { t.sin() } else { t.cos() }
        }),
        h,
        0.0,
    )
    .unwrap();
    let r = exact_linear_snapshots(&cfg, &u).unwrap().r;
    let record = train_readout(&r, &u).unwrap();
    println!("training residual {:.2e}, rank {}", record.residual, record.rank);

    let series = prefix_readouts(&r, &u, &cfg, 40, &TrainOptions::default()).unwrap();
    println!("{} prefixes, departed counts {:?}", series.prefix_lengths.len(), series.departed_counts(1e-6));
    for b in series.departed_branches(1e-6) {
        let last = series.spectra.last().unwrap()[b];
        println!("branch {b} ends at {:.4} {:+.4}i", last.re, last.im);
    }
}
