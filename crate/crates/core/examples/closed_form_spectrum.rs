//! Compare the trained readout with its closed form and the closed-loop
//! spectrum with the weighted-DMD prediction.

use domlab::dynamics::SnapshotMatrix;
use domlab::numerics::{eigvals, matched_max_distance, Matrix};
use domlab::reservoir::{exact_linear_snapshots, init_reservoir, linear_closed_loop_matrix, Activation, ReservoirParams};
use domlab::spectral::{full_spectrum, predicted_shifted_eigs_general, theory_prediction, wout_win_closed_form};
use domlab::training::train_readout;

fn main() {
    let mut params = ReservoirParams {
        n: 50,
        d: 3,
        gamma: 1.5,
        omega: 0.7,
        sigma_b: 1.0,
        activation: Activation::Linear,
        seed: 21,
    };
    let h = 0.1;
    let u = SnapshotMatrix::new(
        Matrix::from_fn(3, 120, |i, j| (0.7 * (i + 1) as f64 * (j + 1) as f64 * h + i as f64).sin()),
        h,
        0.0,
    )
    .unwrap();

    for sigma_b in [1.0, 0.0] {
        params.sigma_b = sigma_b;
        let cfg = init_reservoir(&params).unwrap();
        let ex = exact_linear_snapshots(&cfg, &u).unwrap();
        let w_out = train_readout(&ex.r, &u).unwrap().w_out;
        let closed = wout_win_closed_form(&u.data, &ex.b1, &ex.b2, sigma_b).unwrap();
        let piped = &w_out * &cfg.w_in;
        println!("σ_b = {sigma_b}: closed form vs pipeline {:.2e}", (&closed - &piped).norm() / piped.norm());

        let spectrum = eigvals(&linear_closed_loop_matrix(&cfg, &w_out)).unwrap();
        let theory = theory_prediction(&cfg, &u, 1e-9).unwrap();
        println!("  shifted eigenvalues {:?}", theory.predicted_shifted_eigs);
        if sigma_b == 0.0 {
            let wdmd = predicted_shifted_eigs_general(&u.data, &cfg, h, 1e-9).unwrap();
            let full = full_spectrum(&wdmd, cfg.n, cfg.base_eigenvalue());
            println!("  weighted-DMD prediction vs pipeline {:.2e}", matched_max_distance(&full, &spectrum));
        }
    }
}
