//! Closed-form spectra of the trained linear reservoir and the DMD operators
//! they reduce to.
//!
//! With `r(0) = 0` and zero-order-hold inputs the snapshots factor as
//! `R = W_in B₁ + 1 B₂`, and `W_out W_in` depends on the data only through
//! `U`, `B₁` and `B₂`. For `σ_b = 0` it equals `(1−ω)/(1−α)` times the
//! exponentially weighted DMD operator `U (U (I − αSᵀ)⁻¹)†`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::SnapshotMatrix;
use crate::error::{Error, Result};
use crate::numerics::{
    clustered_max_distance, condition_number, default_rtol, eig, eigvals, numerical_rank, pinv, to_complex,
    CVector, Matrix, Vector,
};
use crate::reservoir::{
    closed_loop_forecast, exact_linear_snapshots, linear_closed_loop_matrix, memory_factor, Activation,
    ReservoirConfig, ReservoirParams,
};

/// Default distance from `γ(ω−1)` below which an eigenvalue counts as unperturbed.
pub const DEFAULT_SPLIT_TOL: f64 = 1e-7;
/// Relative floor for the bias scalar `s`.
pub const S_RTOL: f64 = 1e-12;
/// Eigenvector-matrix condition limit for modal checks.
pub const MAX_MODAL_COND: f64 = 1e8;
/// Relative clustering radius for `d = m` spectra. With square data
/// `U SᵀU⁻¹` is nilpotent, so the shifted eigenvalues form one defective
/// cluster and are compared through its mean.
pub const SQUARE_CLUSTER_RADIUS: f64 = 1e-2;

/// `W_out W_in` from the snapshot factors:
/// `U B₁†` when `σ_b = 0`, otherwise `U (I − s⁻¹ (I − B₁†B₁) B₂ᵀB₂) B₁†`
/// with `s = B₂ (I − B₁†B₁) B₂ᵀ`.
pub fn wout_win_closed_form(u: &Matrix, b1: &Matrix, b2: &Matrix, sigma_b: f64) -> Result<Matrix> {
    let (d, m) = b1.shape();
    if u.shape() != (d, m) {
        return Err(Error::ShapeMismatch(format!(
            "U is {}x{}, B1 is {d}x{m}",
            u.nrows(),
            u.ncols()
        )));
    }
    let rank = numerical_rank(b1, default_rtol(d, m));
    if rank < d {
        let s = crate::numerics::singular_values(b1);
        return Err(Error::RankDeficient {
            smallest: s.last().copied().unwrap_or(0.0),
            tol: default_rtol(d, m) * s.first().copied().unwrap_or(0.0),
        });
    }
    let b1p = pinv(b1, default_rtol(d, m));
    if sigma_b == 0.0 {
        return Ok(u * b1p);
    }
    if b2.shape() != (1, m) {
        return Err(Error::ShapeMismatch(format!("B2 must be 1x{m}")));
    }
    let perp = Matrix::identity(m, m) - &b1p * b1;
    let s = (b2 * &perp * b2.transpose())[(0, 0)];
    let tol = S_RTOL * b2.norm_squared() * m as f64;
    if !(s > tol) {
        return Err(Error::DegenerateS { s, tol });
    }
    let correction = &perp * b2.transpose() * b2 / s;
    Ok(u * (Matrix::identity(m, m) - correction) * b1p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DmdKind {
    Exact,
    Weighted { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdOperator {
    pub matrix: Matrix,
    pub kind: DmdKind,
}

impl DmdOperator {
    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        eigvals(&self.matrix)
    }
}

fn require_full_row_rank(u: &Matrix) -> Result<()> {
    let (d, m) = u.shape();
    let rank = numerical_rank(u, default_rtol(d, m));
    if rank < d {
        return Err(Error::RankDeficientU { rank, needed: d });
    }
    Ok(())
}

/// `U Sᵀ`: column `j` is `u_{j−1}`, column 0 is zero.
fn delayed(u: &Matrix) -> Matrix {
    let (d, m) = u.shape();
    let mut out = Matrix::zeros(d, m);
    for j in 1..m {
        out.set_column(j, &u.column(j - 1));
    }
    out
}

/// `U (I − αSᵀ)⁻¹`, i.e. `v_j = u_j + α v_{j−1}`.
pub fn discounted_sums(u: &Matrix, alpha: f64) -> Matrix {
    let mut v = u.clone();
    for j in 1..u.ncols() {
        let prev = v.column(j - 1) * alpha;
        let mut col = v.column_mut(j);
        col += prev;
    }
    v
}

/// `U Sᵀ U†`. Maps each snapshot to its predecessor.
pub fn exact_dmd(u: &Matrix) -> Result<DmdOperator> {
    require_full_row_rank(u)?;
    Ok(DmdOperator {
        matrix: delayed(u) * pinv(u, default_rtol(u.nrows(), u.ncols())),
        kind: DmdKind::Exact,
    })
}

fn weighted_matrix(u: &Matrix, alpha: f64) -> Matrix {
    let v = discounted_sums(u, alpha);
    u * pinv(&v, default_rtol(v.nrows(), v.ncols()))
}

/// `U (U (I − αSᵀ)⁻¹)†`.
pub fn weighted_dmd(u: &Matrix, alpha: f64) -> Result<DmdOperator> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    require_full_row_rank(u)?;
    Ok(DmdOperator {
        matrix: weighted_matrix(u, alpha),
        kind: DmdKind::Weighted { alpha },
    })
}

fn require_unbiased(cfg: &ReservoirConfig, u: &Matrix) -> Result<()> {
    if cfg.activation != Activation::Linear {
        return Err(Error::NotLinear);
    }
    if cfg.sigma_b != 0.0 {
        return Err(Error::InvalidArgument("formula assumes sigma_b = 0".into()));
    }
    if u.nrows() != cfg.d {
        return Err(Error::ShapeMismatch(format!("U has {} rows, d = {}", u.nrows(), cfg.d)));
    }
    Ok(())
}

/// Shifted closed-loop eigenvalues `γ(ω−1) + γ(1−ω)/(1−α) λ[U (U (I−αSᵀ)⁻¹)†]`
/// for an unbiased linear reservoir. Eigenvalues whose shift is within
/// `tol` of zero are dropped. Rank-deficient `U` is handled through the
/// pseudoinverse, which gives at most `rank U` shifts.
pub fn predicted_shifted_eigs_general(u: &Matrix, cfg: &ReservoirConfig, h: f64, tol: f64) -> Result<Vec<Complex64>> {
    require_unbiased(cfg, u)?;
    let alpha = memory_factor(cfg.gamma, cfg.omega, h);
    let scale = cfg.gamma * (1.0 - cfg.omega) / (1.0 - alpha);
    let base = cfg.base_eigenvalue();
    Ok(eigvals(&weighted_matrix(u, alpha))?
        .into_iter()
        .map(|mu| mu * scale)
        .filter(|shift| shift.norm() > tol)
        .map(|shift| shift + base)
        .collect())
}

/// `shifted` padded with copies of `base` to length `n`.
pub fn full_spectrum(shifted: &[Complex64], n: usize, base: f64) -> Vec<Complex64> {
    let mut out = shifted.to_vec();
    out.resize(n.max(shifted.len()), Complex64::new(base, 0.0));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SquareVariant {
    /// `−γα(1−ω)/(1−α)·(1 + μ)`.
    Printed,
    /// `γα(1−ω)/(1−α)·(1 − μ)`, from `W_out W_in = (1−ω)/(1−α)(I − α U SᵀU⁻¹)`.
    ProofImplied,
}

impl SquareVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            SquareVariant::Printed => "printed",
            SquareVariant::ProofImplied => "proof-implied",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SquarePrediction {
    /// Eigenvalues `μ` of `U SᵀU⁻¹`.
    #[serde(skip)]
    pub dmd_eigs: Vec<Complex64>,
    #[serde(skip)]
    pub printed: Vec<Complex64>,
    #[serde(skip)]
    pub proof_implied: Vec<Complex64>,
    /// Matched distance of each variant (padded to `n`) to the pipeline spectrum.
    pub printed_distance: f64,
    pub proof_implied_distance: f64,
    pub matched: SquareVariant,
}

impl SquarePrediction {
    pub fn matched_eigs(&self) -> &[Complex64] {
        match self.matched {
            SquareVariant::Printed => &self.printed,
            SquareVariant::ProofImplied => &self.proof_implied,
        }
    }
}

/// Both `d = m` closed forms, adjudicated against `pipeline` (the full
/// closed-loop spectrum of the actually trained reservoir). A variant matches
/// when its matched distance is at most `tol`.
pub fn predicted_shifted_eigs_square(
    u: &Matrix,
    cfg: &ReservoirConfig,
    h: f64,
    pipeline: &[Complex64],
    tol: f64,
) -> Result<SquarePrediction> {
    require_unbiased(cfg, u)?;
    let (d, m) = u.shape();
    if d != m {
        return Err(Error::NotSquare { d, m });
    }
    let dmd_eigs = exact_dmd(u)?.eigenvalues()?;
    let alpha = memory_factor(cfg.gamma, cfg.omega, h);
    let c = cfg.gamma * alpha * (1.0 - cfg.omega) / (1.0 - alpha);
    let one = Complex64::new(1.0, 0.0);
    let printed: Vec<Complex64> = dmd_eigs.iter().map(|mu| -(one + mu) * c).collect();
    let proof_implied: Vec<Complex64> = dmd_eigs.iter().map(|mu| (one - mu) * c).collect();

    let base = cfg.base_eigenvalue();
    let n = pipeline.len();
    let radius = SQUARE_CLUSTER_RADIUS * pipeline.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let printed_distance = clustered_max_distance(&full_spectrum(&printed, n, base), pipeline, radius);
    let proof_implied_distance = clustered_max_distance(&full_spectrum(&proof_implied, n, base), pipeline, radius);
    let matched = match (printed_distance <= tol, proof_implied_distance <= tol) {
        (false, false) => {
            return Err(Error::NoVariantMatches {
                printed: printed_distance,
                proof_implied: proof_implied_distance,
            })
        }
        (true, false) => SquareVariant::Printed,
        (false, true) => SquareVariant::ProofImplied,
        (true, true) if printed_distance < proof_implied_distance => SquareVariant::Printed,
        (true, true) => SquareVariant::ProofImplied,
    };
    Ok(SquarePrediction {
        dmd_eigs,
        printed,
        proof_implied,
        printed_distance,
        proof_implied_distance,
        matched,
    })
}

/// `v = W_in y / ‖W_in y‖` for each `y`.
pub fn lift_eigenvectors(w_in: &Matrix, ys: &[CVector]) -> Result<Vec<CVector>> {
    let wc = to_complex(w_in);
    ys.iter()
        .map(|y| {
            if y.len() != w_in.ncols() {
                return Err(Error::ShapeMismatch(format!("y has length {}, d = {}", y.len(), w_in.ncols())));
            }
            let v = &wc * y;
            let norm = v.norm();
            if y.norm() == 0.0 || norm <= f64::EPSILON * y.norm() * w_in.norm() {
                return Err(Error::ZeroVector);
            }
            Ok(v / Complex64::new(norm, 0.0))
        })
        .collect()
}

/// Partition into eigenvalues within `tol` of `base` and the rest; at least
/// `n − d` must be unperturbed.
pub fn split_spectrum(
    eigs: &[Complex64],
    base: f64,
    tol: f64,
    d: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let b = Complex64::new(base, 0.0);
    let (unperturbed, shifted): (Vec<Complex64>, Vec<Complex64>) = eigs.iter().partition(|l| (**l - b).norm() <= tol);
    let expected = eigs.len().saturating_sub(d);
    if unperturbed.len() < expected {
        return Err(Error::SplitViolation {
            unperturbed: unperturbed.len(),
            expected,
        });
    }
    Ok((unperturbed, shifted))
}

/// Closed-form account of a trained linear reservoir.
#[derive(Debug, Clone)]
pub struct TheoryPrediction {
    pub predicted_shifted_eigs: Vec<Complex64>,
    pub predicted_unperturbed_value: f64,
    pub predicted_eigvecs: Vec<CVector>,
    pub wout_win_closed_form: Matrix,
    pub alpha: f64,
}

/// Closed-form `W_out W_in` from exact snapshots of `u`, its spectrum shifted
/// by `γ(ω−1)`, and lifted eigenvectors. Shifts within `tol` of zero are dropped.
pub fn theory_prediction(cfg: &ReservoirConfig, u: &SnapshotMatrix, tol: f64) -> Result<TheoryPrediction> {
    let ex = exact_linear_snapshots(cfg, u)?;
    let closed = wout_win_closed_form(&u.data, &ex.b1, &ex.b2, cfg.sigma_b)?;
    theory_from_closed_form(cfg, closed, u.h, tol)
}

/// [`theory_prediction`] for an already computed closed-form `W_out W_in`.
pub fn theory_from_closed_form(cfg: &ReservoirConfig, closed: Matrix, h: f64, tol: f64) -> Result<TheoryPrediction> {
    let spec = eig(&closed)?;
    let base = cfg.base_eigenvalue();
    let mut shifted = Vec::new();
    let mut ys = Vec::new();
    for (mu, y) in spec.eigenvalues.iter().zip(&spec.eigenvectors) {
        let shift = mu * cfg.gamma;
        if shift.norm() > tol {
            shifted.push(shift + base);
            ys.push(y.clone());
        }
    }
    Ok(TheoryPrediction {
        predicted_shifted_eigs: shifted,
        predicted_unperturbed_value: base,
        predicted_eigvecs: lift_eigenvectors(&cfg.w_in, &ys)?,
        wout_win_closed_form: closed,
        alpha: memory_factor(cfg.gamma, cfg.omega, h),
    })
}

/// Largest `‖J v − λ v‖` over the lifted pairs.
pub fn eigenpair_residual(j: &Matrix, eigs: &[Complex64], vecs: &[CVector]) -> f64 {
    let jc = to_complex(j);
    eigs.iter()
        .zip(vecs)
        .map(|(l, v)| (&jc * v - v * *l).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalCheck {
    /// `max_t ‖r_sim(t) − r_modal(t)‖ / max(1, max_t ‖r_sim(t)‖)`; `None` when skipped.
    pub max_deviation: Option<f64>,
    pub eigenvector_cond: f64,
    pub min_abs_eig: f64,
    pub skipped: Option<String>,
}

/// Compare the simulated linear closed loop from `r0` with
/// `r(t) = r* + Σ c_i e^{λ_i t} v_i`, `r* = −J_T⁻¹ γσ_b 1`. Skipped when
/// `J_T` is numerically singular or not diagonalizable.
pub fn modal_trajectory_check(
    cfg: &ReservoirConfig,
    w_out: &Matrix,
    r0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<ModalCheck> {
    if cfg.activation != Activation::Linear {
        return Err(Error::NotLinear);
    }
    let j = linear_closed_loop_matrix(cfg, w_out);
    let spec = eig(&j)?;
    let v = spec.eigenvector_matrix();
    let cond = condition_number(&v);
    let min_abs = spec.eigenvalues.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    let tol = 1e-10 * j.norm().max(1.0);
    let skip = |reason: &str| ModalCheck {
        max_deviation: None,
        eigenvector_cond: cond,
        min_abs_eig: min_abs,
        skipped: Some(reason.to_string()),
    };
    if !(cond < MAX_MODAL_COND) {
        return Ok(skip("eigenvector matrix ill-conditioned"));
    }
    if !(min_abs > tol) {
        return Ok(skip("closed-loop matrix singular"));
    }
    let ones = Vector::from_element(cfg.n, cfg.gamma * cfg.sigma_b);
    let r_star = match j.clone().lu().solve(&ones) {
        Some(x) => -x,
        None => return Ok(skip("closed-loop matrix singular")),
    };
    let coeffs: CVector = match v.clone().lu().solve(&(r0 - &r_star).map(|x| Complex64::new(x, 0.0))) {
        Some(c) => c,
        None => return Ok(skip("eigenvector matrix singular")),
    };
    let run = closed_loop_forecast(cfg, w_out, r0, horizon, dt)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for (t, r) in run.reservoir.times.iter().zip(&run.reservoir.states) {
        let growth = CVector::from_iterator(
            cfg.n,
            spec.eigenvalues
                .iter()
                .zip(coeffs.iter())
                .map(|(l, c)| c * (l * *t).exp()),
        );
        let modal: CVector = &v * growth;
        let modal_re = Vector::from_iterator(cfg.n, modal.iter().map(|z| z.re)) + &r_star;
        worst = worst.max((r - modal_re).norm());
        scale = scale.max(r.norm());
    }
    Ok(ModalCheck {
        max_deviation: Some(worst / scale),
        eigenvector_cond: cond,
        min_abs_eig: min_abs,
        skipped: None,
    })
}

/// Machine-readable outcome of a theory-versus-pipeline comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub experiment_id: String,
    pub max_eig_mismatch: f64,
    pub lemma_residual: f64,
    pub matched_variant: Option<SquareVariant>,
    pub alpha: f64,
    pub params: ReservoirParams,
}

impl TheoryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matched_max_distance;
    use crate::numerics::shift_matrix;
    use crate::reservoir::{init_reservoir, ReservoirConfig};
    use crate::training::train_readout;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn reservoir(n: usize, d: usize, gamma: f64, sigma_b: f64, seed: u64) -> ReservoirConfig {
        init_reservoir(&ReservoirParams {
            n,
            d,
            gamma,
            omega: 0.8,
            sigma_b,
            activation: Activation::Linear,
            seed,
        })
        .unwrap()
    }

    /// `W_out W_in` through snapshots and least squares.
    fn pipeline(cfg: &ReservoirConfig, u: &SnapshotMatrix) -> (Matrix, Matrix) {
        let r = exact_linear_snapshots(cfg, u).unwrap().r;
        let w_out = train_readout(&r, u).unwrap().w_out;
        (&w_out * &cfg.w_in, w_out)
    }

    #[test]
    fn closed_form_trivial_case() {
        let u = random(3, 3, 1);
        let got = wout_win_closed_form(&u, &Matrix::identity(3, 3), &Matrix::zeros(1, 3), 0.0).unwrap();
        assert!((got - u).amax() < 1e-14);
    }

    #[test]
    fn closed_form_matches_pipeline_both_bias_branches() {
        for sigma_b in [0.0, 1.0] {
            let cfg = reservoir(10, 2, 1.0, sigma_b, 3);
            let u = SnapshotMatrix::new(random(2, 6, 4), 0.1, 0.0).unwrap();
            let ex = exact_linear_snapshots(&cfg, &u).unwrap();
            let closed = wout_win_closed_form(&u.data, &ex.b1, &ex.b2, sigma_b).unwrap();
            let (piped, _) = pipeline(&cfg, &u);
            assert!((&closed - &piped).norm() <= 1e-8 * piped.norm().max(1.0), "sigma_b {sigma_b}");
        }
    }

    #[test]
    fn closed_form_degenerate_s() {
        // B₂ in the row space of B₁
        let b1 = random(2, 5, 7);
        let b2 = b1.rows(0, 1).into_owned() * 2.0;
        let err = wout_win_closed_form(&random(2, 5, 8), &b1, &b2, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateS { .. }));
    }

    #[test]
    fn exact_dmd_examples() {
        assert_eq!(exact_dmd(&Matrix::identity(4, 4)).unwrap().matrix, shift_matrix(4).transpose());

        // 1×m geometric data: U SᵀU† = ρ (S_m − ρ^{2m}) / S_m, S_m = Σ_{j≤m} ρ^{2j}
        let rho: f64 = 0.9;
        for m in [1usize, 4, 10] {
            let u = Matrix::from_fn(1, m, |_, j| rho.powi(j as i32 + 1));
            let got = exact_dmd(&u).unwrap().matrix[(0, 0)];
            let s_m: f64 = (1..=m).map(|j| rho.powi(2 * j as i32)).sum();
            let oracle = rho * (s_m - rho.powi(2 * m as i32)) / s_m;
            assert!((got - oracle).abs() < 1e-14, "m = {m}");
        }

        let theta: f64 = 0.05;
        let m = 5000;
        let u = Matrix::from_fn(2, m, |i, j| {
            let a = theta * (j + 1) as f64;
            if i == 0 {
                a.cos()
            } else {
                a.sin()
            }
        });
        let eigs = exact_dmd(&u).unwrap().eigenvalues().unwrap();
        let oracle = [Complex64::from_polar(1.0, theta), Complex64::from_polar(1.0, -theta)];
        assert!(matched_max_distance(&eigs, &oracle) < 1e-3);

        assert!(matches!(
            exact_dmd(&Matrix::zeros(2, 5)).unwrap_err(),
            Error::RankDeficientU { rank: 0, needed: 2 }
        ));
    }

    #[test]
    fn weighted_dmd_examples() {
        let u = random(2, 8, 11);
        assert!((weighted_dmd(&u, 0.0).unwrap().matrix - Matrix::identity(2, 2)).amax() < 1e-12);

        // d = m: W = (I − α U SᵀU⁻¹)
        let sq = random(3, 3, 12);
        let alpha = 0.7;
        let w = weighted_dmd(&sq, alpha).unwrap().matrix;
        let e = exact_dmd(&sq).unwrap().matrix;
        assert!((w - (Matrix::identity(3, 3) - e * alpha)).amax() < 1e-10);

        let m = 6;
        let st = shift_matrix(m).transpose();
        let inv = (Matrix::identity(m, m) - &st * alpha).try_inverse().unwrap();
        let mut neumann = Matrix::zeros(m, m);
        let mut power = Matrix::identity(m, m);
        for _ in 0..m {
            neumann += &power;
            power = power * &st * alpha;
        }
        assert_eq!(power, Matrix::zeros(m, m));
        assert!((inv - neumann).amax() < 1e-15);
        let u = random(2, m, 13);
        assert!((discounted_sums(&u, alpha) - &u * (Matrix::identity(m, m) - &st * alpha).try_inverse().unwrap()).amax() < 1e-14);

        assert!(weighted_dmd(&u, 1.0).is_err());
    }

    #[test]
    fn weighted_dmd_approaches_square_structure() {
        // for d = m the weighted operator is I − α U SᵀU⁻¹, whose eigenvalues
        // are exactly 1 (nilpotent part); check trace convergence as α → 1
        let sq = random(2, 2, 21);
        for alpha in [0.9, 0.99, 0.999] {
            let w = weighted_dmd(&sq, alpha).unwrap().matrix;
            let e = exact_dmd(&sq).unwrap().matrix;
            assert!((w.trace() - 2.0).abs() < 1e-10);
            assert!((&(Matrix::identity(2, 2) - &w) / alpha - e).amax() < 1e-9);
        }
    }

    fn sine_input(d: usize, m: usize, h: f64) -> SnapshotMatrix {
        SnapshotMatrix::new(
            Matrix::from_fn(d, m, |i, j| ((j + 1) as f64 * h * (1.0 + 0.7 * i as f64) + i as f64).sin()),
            h,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn general_formula_matches_pipeline() {
        let cfg = reservoir(40, 2, 1.0, 0.0, 5);
        let u = sine_input(2, 60, 0.05);
        let predicted = predicted_shifted_eigs_general(&u.data, &cfg, u.h, 1e-9).unwrap();
        assert!(predicted.len() <= 2);
        let (_, w_out) = pipeline(&cfg, &u);
        let spectrum = eigvals(&linear_closed_loop_matrix(&cfg, &w_out)).unwrap();
        let full = full_spectrum(&predicted, 40, cfg.base_eigenvalue());
        let dist = matched_max_distance(&full, &spectrum);
        assert!(dist <= 1e-6, "mismatch {dist:e}");
    }

    #[test]
    fn general_formula_rank_bounds() {
        let cfg = reservoir(10, 2, 1.0, 0.0, 6);
        assert!(predicted_shifted_eigs_general(&Matrix::zeros(2, 8), &cfg, 0.1, 1e-9).unwrap().is_empty());
        let rank_one = Matrix::from_fn(2, 8, |i, j| (i as f64 + 1.0) * (j as f64 * 0.3).cos());
        assert!(predicted_shifted_eigs_general(&rank_one, &cfg, 0.1, 1e-9).unwrap().len() <= 1);
        let biased = reservoir(10, 2, 1.0, 1.0, 6);
        assert!(predicted_shifted_eigs_general(&rank_one, &biased, 0.1, 1e-9).is_err());
    }

    #[test]
    fn square_variants() {
        let cfg = reservoir(10, 3, 1.0, 0.0, 8);
        let u = SnapshotMatrix::new(random(3, 3, 9), 0.1, 0.0).unwrap();
        let (_, w_out) = pipeline(&cfg, &u);
        let spectrum = eigvals(&linear_closed_loop_matrix(&cfg, &w_out)).unwrap();
        let pred = predicted_shifted_eigs_square(&u.data, &cfg, u.h, &spectrum, 1e-4).unwrap();
        assert_eq!(pred.matched, SquareVariant::ProofImplied);

        // the two forms differ by 2γα(1−ω)/(1−α), whatever μ is
        let alpha = memory_factor(1.0, 0.8, 0.1);
        let gap = 2.0 * alpha * 0.2 / (1.0 - alpha);
        for (p, q) in pred.printed.iter().zip(&pred.proof_implied) {
            assert!(((q - p).re - gap).abs() < 1e-12 && (q - p).im.abs() < 1e-12);
        }

        // μ = 1 gives zero shift in the proof-implied form
        let one = Complex64::new(1.0, 0.0);
        assert_eq!((one - one) * gap, Complex64::new(0.0, 0.0));

        assert!(matches!(
            predicted_shifted_eigs_square(&random(3, 4, 1), &cfg, 0.1, &spectrum, 1e-4).unwrap_err(),
            Error::NotSquare { d: 3, m: 4 }
        ));
        let wrong = vec![Complex64::new(50.0, 0.0); 10];
        assert!(matches!(
            predicted_shifted_eigs_square(&u.data, &cfg, u.h, &wrong, 1e-4).unwrap_err(),
            Error::NoVariantMatches { .. }
        ));
    }

    #[test]
    fn lift_examples() {
        let w_in = Matrix::from_fn(5, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = CVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let v = &lift_eigenvectors(&w_in, &[y.clone()]).unwrap()[0];
        assert!((v.rows(0, 2) - &y).norm() < 1e-15 && v.rows(2, 3).norm() == 0.0);
        let v2 = &lift_eigenvectors(&w_in, &[&y * Complex64::new(2.0, 0.0)]).unwrap()[0];
        assert!((v - v2).norm() < 1e-15);
        assert_eq!(lift_eigenvectors(&w_in, &[CVector::zeros(2)]).unwrap_err(), Error::ZeroVector);
    }

    #[test]
    fn theory_prediction_matches_pipeline() {
        for sigma_b in [0.0, 1.0] {
            let cfg = reservoir(30, 3, 2.4, sigma_b, 14);
            let u = sine_input(3, 80, 0.1);
            let pred = theory_prediction(&cfg, &u, 1e-9).unwrap();
            assert!(pred.predicted_shifted_eigs.len() <= 3);
            assert!(pred.alpha > 0.0 && pred.alpha < 1.0);
            let (_, w_out) = pipeline(&cfg, &u);
            let j = linear_closed_loop_matrix(&cfg, &w_out);
            let spectrum = eigvals(&j).unwrap();
            let (unperturbed, shifted) = split_spectrum(&spectrum, cfg.base_eigenvalue(), DEFAULT_SPLIT_TOL, 3).unwrap();
            assert!(unperturbed.len() >= 27 && shifted.len() <= 3);
            let full = full_spectrum(&pred.predicted_shifted_eigs, 30, cfg.base_eigenvalue());
            assert!(matched_max_distance(&full, &spectrum) < 1e-8);
            assert!(eigenpair_residual(&j, &pred.predicted_shifted_eigs, &pred.predicted_eigvecs) < 1e-6);
        }
    }

    #[test]
    fn split_examples() {
        let base = -0.2;
        let untrained = vec![Complex64::new(base, 0.0); 6];
        let (u, s) = split_spectrum(&untrained, base, 1e-9, 2).unwrap();
        assert_eq!((u.len(), s.len()), (6, 0));
        let mut bad = untrained.clone();
        bad[0] = Complex64::new(1.0, 0.0);
        bad[1] = Complex64::new(2.0, 0.0);
        assert!(split_spectrum(&bad, base, 1e-9, 2).is_ok());
        assert_eq!(
            split_spectrum(&bad, base, 1e-9, 1).unwrap_err(),
            Error::SplitViolation { unperturbed: 4, expected: 5 }
        );
    }

    #[test]
    fn modal_expansion_matches_simulation() {
        let cfg = reservoir(12, 2, 1.0, 1.0, 15);
        let u = sine_input(2, 40, 0.1);
        let (_, w_out) = pipeline(&cfg, &u);
        let r0 = Vector::from_fn(12, |i, _| (i as f64).cos());
        let check = modal_trajectory_check(&cfg, &w_out, &r0, 1.0, 1e-3).unwrap();
        assert!(check.skipped.is_none(), "{:?}", check.skipped);
        assert!(check.max_deviation.unwrap() < 1e-5, "{check:?}");
    }

    #[test]
    fn report_json_fields() {
        let cfg = reservoir(5, 1, 1.0, 0.0, 1);
        let report = TheoryReport {
            experiment_id: "x".into(),
            max_eig_mismatch: 1e-9,
            lemma_residual: 1e-12,
            matched_variant: Some(SquareVariant::ProofImplied),
            alpha: 0.5,
            params: cfg.params(),
        };
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["experiment_id", "max_eig_mismatch", "lemma_residual", "matched_variant", "alpha", "params"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["matched_variant"], "proof-implied");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lemma_pipeline_equivalence(seed in 0u64..10_000, biased in any::<bool>(), d in 1usize..4) {
            let sigma_b = if biased { 1.0 } else { 0.0 };
            let cfg = reservoir(15, d, 1.5, sigma_b, seed);
            let u = SnapshotMatrix::new(random(d, 12, seed + 1), 0.1, 0.0).unwrap();
            let ex = exact_linear_snapshots(&cfg, &u).unwrap();
            let closed = wout_win_closed_form(&u.data, &ex.b1, &ex.b2, sigma_b).unwrap();
            let (piped, w_out) = pipeline(&cfg, &u);
            prop_assert!((&closed - &piped).norm() <= 1e-7 * piped.norm().max(1e-300));

            // nonzero eigenvalues of W_in W_out and W_out W_in coincide
            let small = eigvals(&piped).unwrap();
            let big: Vec<Complex64> = eigvals(&(&cfg.w_in * &w_out)).unwrap()
                .into_iter().filter(|l| l.norm() > 1e-9).collect();
            let small: Vec<Complex64> = small.into_iter().filter(|l| l.norm() > 1e-9).collect();
            prop_assert_eq!(small.len(), big.len());
            prop_assert!(matched_max_distance(&small, &big) < 1e-8);
        }
    }
}
