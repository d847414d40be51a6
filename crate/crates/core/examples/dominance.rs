//! p-dominance certificates for the untrained and trained linear reservoir,
//! and a sampled differential check for the tanh closed loop.

use domlab::dominance::{certify_linear, differential_check, dominant_set, linearization_storage};
use domlab::dynamics::SnapshotMatrix;
use domlab::numerics::{eigvals, Matrix};
use domlab::reservoir::{
    closed_loop_forecast, drive_zoh, exact_linear_snapshots, init_reservoir, linear_closed_loop_matrix, Activation,
    ReservoirParams,
};
use domlab::training::{train_readout, train_readout_with, TrainOptions};

fn main() {
    let cfg = init_reservoir(&ReservoirParams {
        n: 40,
        d: 2,
        gamma: 1.0,
        omega: 0.8,
        sigma_b: 0.0,
        activation: Activation::Linear,
        seed: 4,
    })
    .unwrap();
    let h = 0.05;
    let u = SnapshotMatrix::new(
        Matrix::from_fn(2, 300, |i, j| ((j + 1) as f64 * h + i as f64).sin()),
        h,
        0.0,
    )
    .unwrap();

    let j0 = linear_closed_loop_matrix(&cfg, &Matrix::zeros(2, 40));
    let untrained = certify_linear(&j0, 0, cfg.gamma * (1.0 - cfg.omega) / 2.0).unwrap();
    println!("untrained: {}", untrained.to_json());

    let r = exact_linear_snapshots(&cfg, &u).unwrap().r;
    let w_out = train_readout(&r, &u).unwrap().w_out;
    let jt = linear_closed_loop_matrix(&cfg, &w_out);
    let set = dominant_set(&eigvals(&(&w_out * &cfg.w_in)).unwrap(), &eigvals(&jt).unwrap(), cfg.gamma, cfg.omega, 1e-9);
    println!("dominant set {:?}, rates ({:.4}, {:.4})", set.eigenvalues, set.rate_lower, set.rate_upper);
    let trained = certify_linear(&jt, set.cardinality, set.rate_midpoint).unwrap();
    println!("trained: {}", trained.to_json());

    let tanh = cfg.with_activation(Activation::Tanh);
    let driven = drive_zoh(&tanh, &u, 20).unwrap();
    let rec = train_readout_with(&driven.r, &u, &TrainOptions { ridge: 1e-6, rtol: None }).unwrap();
    let run = closed_loop_forecast(&tanh, &rec.w_out, &driven.final_state, 10.0, h / 20.0).unwrap();
    let states: Vec<_> = run.reservoir.states.iter().step_by(20).cloned().collect();
    let choice = linearization_storage(&tanh, &rec.w_out, &states).unwrap();
    let cert = differential_check(&tanh, &rec.w_out, &choice.storage, choice.rate, &states, 100, 4).unwrap();
    println!("tanh (sampled, p = {}): {}", choice.p, cert.to_json());
}
