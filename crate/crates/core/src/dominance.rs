//! p-dominance certificates.
//!
//! `ẋ = Ax` is p-dominant with rate `λ ≥ 0` when some symmetric `P` with
//! inertia `(p, 0, n−p)` satisfies `AᵀP + PA + 2λP ≤ −εI`, `ε > 0`. For a
//! linear system this is equivalent to `A + λI` having `p` eigenvalues in the
//! open right half-plane and `n − p` in the open left one, and `P` can be
//! written down from the eigenvectors. For the tanh reservoir the same `P` is
//! checked pointwise on sampled Jacobians.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    condition_number, eig, eigvals, inertia, symmetric_eig, InertiaTriple, Matrix, Vector, DEFAULT_SYMMETRY_RTOL,
};
use crate::reservoir::{jacobian_trained, Activation, ReservoirConfig};

/// Condition limit on the eigenvector matrix used to build `P`.
pub const MAX_EIGVEC_COND: f64 = 1e8;
/// Relative width of the marginal band in [`count_split`].
pub const MARGINAL_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub pos: usize,
    pub neg: usize,
    pub marginal: usize,
}

fn marginal_tol(a: &Matrix) -> f64 {
    MARGINAL_RTOL * a.norm().max(1.0)
}

/// Real-part sign counts of the eigenvalues of `A + λI`.
pub fn count_split(a: &Matrix, lambda: f64) -> Result<SplitCounts> {
    let tol = marginal_tol(a);
    let mut out = SplitCounts { pos: 0, neg: 0, marginal: 0 };
    for l in eigvals(a)? {
        let re = l.re + lambda;
        if re > tol {
            out.pos += 1;
        } else if re < -tol {
            out.neg += 1;
        } else {
            out.marginal += 1;
        }
    }
    Ok(out)
}

/// Closed-loop eigenvalues shifted to the right of the open-loop value, and
/// the rates for which exactly those dominate.
#[derive(Debug, Clone, Serialize)]
pub struct DominantSet {
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    pub cardinality: usize,
    /// Admissible rates form the open interval `(lower, upper)`, and also
    /// contain `lower` when it was clipped to `0`.
    pub rate_lower: f64,
    pub rate_upper: f64,
    pub rate_midpoint: f64,
    /// `Re μ_min`; `None` when the set is empty.
    pub min_re_shift: Option<f64>,
}

/// Select `λ[J_T] = γ(ω−1) + γμ` for every `μ ∈ λ[W_out W_in]` with
/// `Re μ > tol`, pairing each with the nearest unused entry of `jt_eigs`.
pub fn dominant_set(woutwin_eigs: &[Complex64], jt_eigs: &[Complex64], gamma: f64, omega: f64, tol: f64) -> DominantSet {
    let base = gamma * (omega - 1.0);
    let mut used = vec![false; jt_eigs.len()];
    let mut eigenvalues = Vec::new();
    let mut min_re: Option<f64> = None;
    for mu in woutwin_eigs.iter().filter(|mu| mu.re > tol) {
        let target = mu * gamma + base;
        let nearest = (0..jt_eigs.len())
            .filter(|&j| !used[j])
            .min_by(|&x, &y| (jt_eigs[x] - target).norm().total_cmp(&(jt_eigs[y] - target).norm()));
        let value = match nearest {
            Some(j) => {
                used[j] = true;
                jt_eigs[j]
            }
            None => target,
        };
        eigenvalues.push(value);
        min_re = Some(min_re.map_or(mu.re, |m: f64| m.min(mu.re)));
    }
    let upper = gamma * (1.0 - omega);
    let lower = match min_re {
        Some(re) => (upper - gamma * re).max(0.0),
        None => 0.0,
    };
    DominantSet {
        cardinality: eigenvalues.len(),
        eigenvalues,
        rate_lower: lower,
        rate_upper: upper,
        rate_midpoint: 0.5 * (lower + upper),
        min_re_shift: min_re,
    }
}

/// `P = T⁻ᵀ diag(−I_p, I_{n−p}) T⁻¹` where the columns of `T` are real and
/// imaginary parts of the eigenvectors of `A`, the `p` dominant modes first.
pub fn build_storage_matrix(a: &Matrix, p: usize, lambda: f64) -> Result<Matrix> {
    let split = count_split(a, lambda)?;
    if split.marginal > 0 {
        return Err(Error::SplitFailure { rate: lambda });
    }
    if split.pos != p {
        return Err(Error::InvalidArgument(format!(
            "A + λI has {} unstable eigenvalues at rate {lambda}, requested p = {p}",
            split.pos
        )));
    }
    let n = a.nrows();
    let spec = eig(a)?;
    let cond = condition_number(&spec.eigenvector_matrix());
    if !(cond < MAX_EIGVEC_COND) {
        return Err(Error::IllConditioned { cond });
    }
    let im_tol = marginal_tol(a);
    let mut dominant: Vec<Vector> = Vec::new();
    let mut rest: Vec<Vector> = Vec::new();
    for (l, v) in spec.eigenvalues.iter().zip(&spec.eigenvectors) {
        let target = if l.re + lambda > 0.0 { &mut dominant } else { &mut rest };
        if l.im.abs() <= im_tol {
            target.push(v.map(|z| z.re));
        } else if l.im > 0.0 {
            target.push(v.map(|z| z.re));
            target.push(v.map(|z| z.im));
        }
    }
    if dominant.len() != p || dominant.len() + rest.len() != n {
        return Err(Error::InvalidArgument("could not pair complex eigenvalues into a real basis".into()));
    }
    dominant.extend(rest);
    let t = Matrix::from_columns(&dominant);
    let t_inv = t.try_inverse().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let signs = Vector::from_fn(n, |i, _| if i < p { -1.0 } else { 1.0 });
    let pm = t_inv.transpose() * Matrix::from_diagonal(&signs) * &t_inv;
    Ok((&pm + pm.transpose()) * 0.5)
}

/// `λ_max(AᵀP + PA + 2λP)`.
pub fn lmi_residual(a: &Matrix, p: &Matrix, lambda: f64) -> Result<f64> {
    if a.shape() != p.shape() || !a.is_square() {
        return Err(Error::ShapeMismatch("A and P must be square of equal size".into()));
    }
    symmetric_eig(p, DEFAULT_SYMMETRY_RTOL)?;
    let m = a.transpose() * p + p * a + p * (2.0 * lambda);
    let sym = (&m + m.transpose()) * 0.5;
    let (values, _) = symmetric_eig(&sym, DEFAULT_SYMMETRY_RTOL)?;
    Ok(values.last().copied().unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone)]
pub struct DominanceCertificate {
    pub p: usize,
    pub rate: f64,
    /// `max(0, −worst_residual)`.
    pub epsilon: f64,
    pub storage: Matrix,
    pub inertia: InertiaTriple,
    pub worst_residual: f64,
    pub checked_points: usize,
}

#[derive(Serialize)]
struct CertificateJson {
    p: usize,
    rate: f64,
    epsilon: f64,
    worst_residual: f64,
    checked_points: usize,
    valid: bool,
}

impl DominanceCertificate {
    fn assemble(storage: Matrix, rate: f64, worst_residual: f64, checked_points: usize) -> Result<Self> {
        let inertia = inertia(&storage, 1e-12 * storage.norm().max(1e-300))?;
        Ok(DominanceCertificate {
            p: inertia.negatives,
            rate,
            epsilon: (-worst_residual).max(0.0),
            storage,
            inertia,
            worst_residual,
            checked_points,
        })
    }

    /// `worst_residual < 0` with inertia `(p, 0, n−p)`.
    pub fn valid(&self) -> bool {
        self.worst_residual < 0.0 && self.inertia.zeros == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CertificateJson {
            p: self.p,
            rate: self.rate,
            epsilon: self.epsilon,
            worst_residual: self.worst_residual,
            checked_points: self.checked_points,
            valid: self.valid(),
        })
        .expect("certificate serializes")
    }
}

/// Certificate for `ẋ = Ax` with the eigenvector storage matrix.
pub fn certify_linear(a: &Matrix, p: usize, lambda: f64) -> Result<DominanceCertificate> {
    let storage = build_storage_matrix(a, p, lambda)?;
    let residual = lmi_residual(a, &storage, lambda)?;
    DominanceCertificate::assemble(storage, lambda, residual, 1)
}

/// Evaluate the LMI at the closed-loop Jacobian of every state and at
/// `extra_gain_samples` synthetic Jacobians `γ(−I + ω diag(s)) + γ W_in W_out`,
/// `s ~ U(0, 1]ⁿ`. A sampled check, not a proof.
pub fn differential_check(
    cfg: &ReservoirConfig,
    w_out: &Matrix,
    storage: &Matrix,
    lambda: f64,
    states: &[Vector],
    extra_gain_samples: usize,
    seed: u64,
) -> Result<DominanceCertificate> {
    if cfg.activation != Activation::Tanh {
        return Err(Error::NotTanh);
    }
    if states.is_empty() && extra_gain_samples == 0 {
        return Err(Error::EmptySamples);
    }
    let mut worst = f64::NEG_INFINITY;
    for r in states {
        worst = worst.max(lmi_residual(&jacobian_trained(cfg, w_out, r), storage, lambda)?);
    }
    let coupling = &cfg.w_in * w_out * cfg.gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra_gain_samples {
        let diag = Vector::from_fn(cfg.n, |_, _| {
            let s = 1.0 - rng.random::<f64>();
            cfg.gamma * (cfg.omega * s - 1.0)
        });
        let j = Matrix::from_diagonal(&diag) + &coupling;
        worst = worst.max(lmi_residual(&j, storage, lambda)?);
    }
    DominanceCertificate::assemble(storage.clone(), lambda, worst, states.len() + extra_gain_samples)
}

/// Candidate storage matrix for the tanh closed loop, built from the
/// Jacobian at the temporal mean of `states`.
#[derive(Debug, Clone)]
pub struct LinearizationChoice {
    pub mean_state: Vector,
    pub p: usize,
    pub rate: f64,
    pub storage: Matrix,
}

/// `p` = number of eigenvalues of `J(r̄)` with positive real part, rate in
/// the middle of the gap between the `p`-th and `(p+1)`-th real parts
/// (clipped to `≥ 0`).
pub fn linearization_storage(cfg: &ReservoirConfig, w_out: &Matrix, states: &[Vector]) -> Result<LinearizationChoice> {
    if states.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut mean = Vector::zeros(cfg.n);
    for r in states {
        mean += r;
    }
    mean /= states.len() as f64;
    let j = jacobian_trained(cfg, w_out, &mean);
    let res: Vec<f64> = eigvals(&j)?.iter().map(|l| l.re).collect();
    let p = res.iter().filter(|&&x| x > 0.0).count();
    let below = res.iter().copied().filter(|&x| x <= 0.0).fold(f64::NEG_INFINITY, f64::max);
    let above = res.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let rate = if above.is_finite() && below.is_finite() {
        (-(above + below) / 2.0).max(0.0)
    } else if below.is_finite() {
        -below / 2.0
    } else {
        0.0
    };
    let storage = build_storage_matrix(&j, p, rate)?;
    Ok(LinearizationChoice {
        mean_state: mean,
        p,
        rate,
        storage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SnapshotMatrix;
    use crate::reservoir::{exact_linear_snapshots, init_reservoir, linear_closed_loop_matrix, ReservoirParams};
    use crate::training::train_readout;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn reservoir(activation: Activation, sigma_b: f64) -> ReservoirConfig {
        init_reservoir(&ReservoirParams {
            n: 20,
            d: 2,
            gamma: 2.0,
            omega: 0.8,
            sigma_b,
            activation,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn count_split_examples() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 0.5]));
        assert_eq!(count_split(&a, 0.2).unwrap(), SplitCounts { pos: 1, neg: 1, marginal: 0 });
        let j0 = Matrix::identity(6, 6) * (2.0 * (0.8 - 1.0));
        assert_eq!(count_split(&j0, 0.3).unwrap(), SplitCounts { pos: 0, neg: 6, marginal: 0 });
        assert_eq!(count_split(&a, -0.5).unwrap().marginal, 1);
    }

    #[test]
    fn dominant_set_examples() {
        let none = dominant_set(&[c(-0.3, 0.0), c(-0.1, 0.2), c(-0.1, -0.2)], &[], 1.0, 0.8, 1e-12);
        assert_eq!(none.cardinality, 0);
        assert!(none.rate_lower == 0.0 && (none.rate_upper - 0.2).abs() < 1e-15);

        let jt = [c(-0.2 + 0.3, 0.0), c(-0.2 - 0.1, 0.0), c(-0.2, 0.0)];
        let one = dominant_set(&[c(0.3, 0.0), c(-0.1, 0.0)], &jt, 1.0, 0.8, 1e-12);
        assert_eq!(one.cardinality, 1);
        assert!((one.eigenvalues[0] - jt[0]).norm() < 1e-15);
        // λ ∈ (0.2 − 0.3, 0.2) clipped at 0
        assert_eq!(one.rate_lower, 0.0);

        let small = dominant_set(&[c(0.05, 0.0)], &[c(-0.15, 0.0)], 1.0, 0.8, 1e-12);
        assert!((small.rate_lower - 0.15).abs() < 1e-15 && (small.rate_midpoint - 0.175).abs() < 1e-15);
    }

    #[test]
    fn storage_matrix_diagonal_case() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, -1.0]));
        let p = build_storage_matrix(&a, 1, 0.2).unwrap();
        assert!((p - Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 1.0]))).amax() < 1e-15);
        assert!(matches!(build_storage_matrix(&a, 1, 1.0).unwrap_err(), Error::SplitFailure { .. }));
        assert!(build_storage_matrix(&a, 0, 0.2).is_err());
    }

    #[test]
    fn lmi_residual_examples() {
        let i = Matrix::identity(3, 3);
        assert!((lmi_residual(&(-&i), &i, 0.0).unwrap() + 2.0).abs() < 1e-15);
        assert!((lmi_residual(&i, &i, 0.0).unwrap() - 2.0).abs() < 1e-15);
        let a = Matrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let p = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let base = lmi_residual(&a, &p, 0.4).unwrap();
        assert!((lmi_residual(&a, &(&p * 3.5), 0.4).unwrap() - 3.5 * base).abs() < 1e-12);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            lmi_residual(&Matrix::identity(2, 2), &asym, 0.0).unwrap_err(),
            Error::NotSymmetric { .. }
        ));
    }

    #[test]
    fn untrained_linear_is_zero_dominant() {
        let cfg = reservoir(Activation::Linear, 1.0);
        let j0 = linear_closed_loop_matrix(&cfg, &Matrix::zeros(2, 20));
        let cert = certify_linear(&j0, 0, cfg.gamma * (1.0 - cfg.omega) / 2.0).unwrap();
        assert!(cert.valid() && cert.p == 0);
        let v: serde_json::Value = serde_json::from_str(&cert.to_json()).unwrap();
        for key in ["p", "rate", "epsilon", "worst_residual", "checked_points", "valid"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn trained_linear_certified_at_midpoint() {
        for sigma_b in [0.0, 1.0] {
            let cfg = reservoir(Activation::Linear, sigma_b);
            let u = SnapshotMatrix::new(
                Matrix::from_fn(2, 60, |i, j| ((j as f64) * 0.15 + i as f64 * 0.9).sin()),
                0.1,
                0.0,
            )
            .unwrap();
            let r = exact_linear_snapshots(&cfg, &u).unwrap().r;
            let w_out = train_readout(&r, &u).unwrap().w_out;
            let jt = linear_closed_loop_matrix(&cfg, &w_out);
            let mus = eigvals(&(&w_out * &cfg.w_in)).unwrap();
            let set = dominant_set(&mus, &eigvals(&jt).unwrap(), cfg.gamma, cfg.omega, 1e-9);
            assert!(set.cardinality <= 2);
            let cert = certify_linear(&jt, set.cardinality, set.rate_midpoint).unwrap();
            assert!(cert.valid(), "{}", cert.to_json());
            assert_eq!(cert.p, set.cardinality);
            assert_eq!(cert.inertia.positives, 20 - set.cardinality);
        }
    }

    #[test]
    fn untrained_tanh_contracts() {
        let cfg = reservoir(Activation::Tanh, 0.5);
        let states: Vec<Vector> = (0..10).map(|k| Vector::from_fn(20, |i, _| ((i * k) as f64).sin() * 2.0)).collect();
        let cert = differential_check(&cfg, &Matrix::zeros(2, 20), &Matrix::identity(20, 20), 0.0, &states, 50, 7).unwrap();
        assert!(cert.worst_residual <= 2.0 * cfg.gamma * (cfg.omega - 1.0) + 1e-12);
        assert!(cert.valid() && cert.checked_points == 60);
        assert_eq!(
            differential_check(&cfg, &Matrix::zeros(2, 20), &Matrix::identity(20, 20), 0.0, &[], 0, 7).unwrap_err(),
            Error::EmptySamples
        );
        let lin = reservoir(Activation::Linear, 0.5);
        assert_eq!(
            differential_check(&lin, &Matrix::zeros(2, 20), &Matrix::identity(20, 20), 0.0, &states, 0, 7).unwrap_err(),
            Error::NotTanh
        );
    }

    #[test]
    fn residual_monotone_in_rate_for_positive_storage() {
        let cfg = reservoir(Activation::Tanh, 0.0);
        let w_out = Matrix::from_fn(2, 20, |i, j| 0.05 * ((i + 2 * j) as f64).cos());
        let states: Vec<Vector> = (0..5).map(|k| Vector::from_fn(20, |i, _| ((i + k) as f64).cos())).collect();
        let p = Matrix::identity(20, 20);
        let mut last = f64::NEG_INFINITY;
        for step in 0..10 {
            let rate = step as f64 * 0.1;
            let cert = differential_check(&cfg, &w_out, &p, rate, &states, 20, 1).unwrap();
            assert!(cert.worst_residual >= last - 1e-12);
            last = cert.worst_residual;
        }
    }

    #[test]
    fn linearization_choice_splits_mean_jacobian() {
        let cfg = reservoir(Activation::Tanh, 0.0);
        let w_out = Matrix::from_fn(2, 20, |i, j| 0.8 * ((i * 20 + j) as f64 * 0.7).sin());
        let states: Vec<Vector> = (0..5).map(|k| Vector::from_fn(20, |i, _| 0.2 * ((i + k) as f64).cos())).collect();
        let choice = linearization_storage(&cfg, &w_out, &states).unwrap();
        let j = jacobian_trained(&cfg, &w_out, &choice.mean_state);
        assert!(lmi_residual(&j, &choice.storage, choice.rate).unwrap() < 0.0);
        assert_eq!(inertia(&choice.storage, 1e-12).unwrap().negatives, choice.p);
    }

    fn diagonalizable(seed: u64, n: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = Matrix::from_fn(n, n, |i, j| rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 });
        let mut d = Matrix::from_diagonal(&Vector::from_vec(res.clone()));
        // one rotation block
        d[(0, 1)] = 0.7;
        d[(1, 0)] = -0.7;
        d[(1, 1)] = d[(0, 0)];
        let mut res = res;
        res[1] = res[0];
        (&t * d * t.try_inverse().unwrap(), res)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn spectral_split_certifies(seed in 0u64..5000, rate in 0.0f64..2.0) {
            let (a, res) = diagonalizable(seed, 6);
            let gap = res.iter().map(|x| (x + rate).abs()).fold(f64::INFINITY, f64::min);
            prop_assume!(gap > 1e-3);
            let split = count_split(&a, rate).unwrap();
            prop_assert_eq!(split.pos, res.iter().filter(|x| **x + rate > 0.0).count());
            let cert = certify_linear(&a, split.pos, rate).unwrap();
            prop_assert!(cert.valid());
            prop_assert_eq!(cert.inertia, InertiaTriple { negatives: split.pos, zeros: 0, positives: 6 - split.pos });

            // invariant under P -> cP and an orthogonal change of coordinates
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let q = crate::numerics::thin_qr(&Matrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0)), 1e-12).unwrap().0;
            let a2 = q.transpose() * &a * &q;
            let p2 = q.transpose() * &cert.storage * &q * 4.0;
            prop_assert!(lmi_residual(&a2, &p2, rate).unwrap() < 0.0);
        }

        #[test]
        fn marginal_split_fails(seed in 0u64..5000) {
            let (a, res) = diagonalizable(seed, 5);
            let rate = -res[3];
            prop_assume!(rate >= 0.0);
            prop_assert!(build_storage_matrix(&a, 0, rate).is_err());
        }
    }
}
