//! Continuous-time reservoir with diagonal recurrence `W = ωI` and uniform
//! bias `σ = σ_b 1`:
//!
//! ```text
//! ṙ = −γ r + γ f(ω r + σ_b 1) + γ W_in u
//! ```
//!
//! with `f(x) = x` (linear) or `f = tanh`. Closing the loop replaces `u` by
//! `W_out r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_with, sample_uniform, zero_order_hold, InputSignal, SnapshotMatrix, StepPoint, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{default_rtol, ensure_finite, numerical_rank, pinv, Matrix, Vector};

pub const INIT_ATTEMPTS: u32 = 16;
/// Relative tolerance on the residual of projecting `1_n` onto `Im W_in`.
pub const ONES_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
        })
    }
}

/// Scalar reservoir parameters; `W_in` is drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub omega: f64,
    pub sigma_b: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl ReservoirParams {
    fn check(&self) -> Result<()> {
        if self.d == 0 || self.n <= self.d {
            return Err(Error::InvalidArgument(format!(
                "need n > d >= 1 (n = {}, d = {})",
                self.n, self.d
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.omega < 1.0) {
            return Err(Error::InvalidArgument(format!("omega must be < 1, got {}", self.omega)));
        }
        if !self.sigma_b.is_finite() {
            return Err(Error::InvalidArgument("sigma_b must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub omega: f64,
    pub sigma_b: f64,
    pub activation: Activation,
    pub seed: u64,
    #[serde(with = "crate::numerics::matrix_serde")]
    pub w_in: Matrix,
}

impl ReservoirConfig {
    /// Build from explicit `W_in`, checking every invariant.
    pub fn with_input_matrix(params: ReservoirParams, w_in: Matrix) -> Result<Self> {
        params.check()?;
        let cfg = ReservoirConfig {
            n: params.n,
            d: params.d,
            gamma: params.gamma,
            omega: params.omega,
            sigma_b: params.sigma_b,
            activation: params.activation,
            seed: params.seed,
            w_in,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> ReservoirParams {
        ReservoirParams {
            n: self.n,
            d: self.d,
            gamma: self.gamma,
            omega: self.omega,
            sigma_b: self.sigma_b,
            activation: self.activation,
            seed: self.seed,
        }
    }

    /// Same reservoir with another activation (and the same `W_in`).
    pub fn with_activation(&self, activation: Activation) -> Self {
        ReservoirConfig {
            activation,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().check()?;
        if self.w_in.shape() != (self.n, self.d) {
            return Err(Error::ShapeMismatch(format!(
                "W_in is {}x{}, expected {}x{}",
                self.w_in.nrows(),
                self.w_in.ncols(),
                self.n,
                self.d
            )));
        }
        ensure_finite(&self.w_in)?;
        let rank = numerical_rank(&self.w_in, default_rtol(self.n, self.d));
        if rank != self.d {
            return Err(Error::InvalidArgument(format!(
                "W_in has rank {rank}, expected full column rank {}",
                self.d
            )));
        }
        let residual = ones_residual(&self.w_in);
        let limit = ONES_RESIDUAL_TOL * (self.n as f64).sqrt();
        if residual <= limit {
            return Err(Error::InvalidArgument(format!(
                "1_n lies in Im W_in (residual {residual:e} <= {limit:e})"
            )));
        }
        Ok(())
    }

    /// Eigenvalue of the untrained linear reservoir, `γ(ω − 1)`.
    pub fn base_eigenvalue(&self) -> f64 {
        self.gamma * (self.omega - 1.0)
    }

    /// Open-loop vector field.
    pub fn drift(&self, r: &Vector, u: &Vector) -> Vector {
        let g = self.gamma;
        match self.activation {
            Activation::Linear => {
                let mut out = r * (g * (self.omega - 1.0)) + &self.w_in * u * g;
                out.add_scalar_mut(g * self.sigma_b);
                out
            }
            Activation::Tanh => {
                let act = r.map(|x| (self.omega * x + self.sigma_b).tanh());
                (act - r + &self.w_in * u) * g
            }
        }
    }

    /// Closed-loop vector field with `u = W_out r`.
    pub fn closed_loop_drift(&self, w_out: &Matrix, r: &Vector) -> Vector {
        self.drift(r, &(w_out * r))
    }
}

/// `‖(I − W_in W_in†) 1_n‖`.
fn ones_residual(w_in: &Matrix) -> f64 {
    let n = w_in.nrows();
    let ones = Vector::from_element(n, 1.0);
    let proj = w_in * (pinv(w_in, default_rtol(n, w_in.ncols())) * &ones);
    (ones - proj).norm()
}

/// Draw `W_in` i.i.d. uniform on `[−1, 1]` and validate; redraw from the next
/// generator stream on failure.
pub fn init_reservoir(params: &ReservoirParams) -> Result<ReservoirConfig> {
    params.check()?;
    let mut last_reason = String::new();
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(attempt as u64);
        let mut entries = Vec::with_capacity(params.n * params.d);
        for _ in 0..params.n * params.d {
            entries.push(rng.random_range(-1.0..=1.0));
        }
        let w_in = Matrix::from_row_slice(params.n, params.d, &entries);
        match ReservoirConfig::with_input_matrix(*params, w_in) {
            Ok(cfg) => return Ok(cfg),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::InitFailure {
        attempts: INIT_ATTEMPTS,
        reason: last_reason,
    })
}

fn step_count(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need positive horizon and step (horizon = {horizon}, dt = {dt})"
        )));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

/// Integrate the untrained reservoir from `r(0) = 0` over `[0, t_end]`.
/// The step is adjusted to `t_end / round(t_end / dt)`. Piecewise-constant
/// inputs are integrated exactly across their jumps when the step divides
/// the hold interval.
pub fn drive_open_loop(cfg: &ReservoirConfig, u: &dyn InputSignal, t_end: f64, dt: f64) -> Result<Trajectory> {
    if u.dim() != cfg.d {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, reservoir expects {}",
            u.dim(),
            cfg.d
        )));
    }
    let (steps, dt) = step_count(t_end, dt)?;
    let field = |t: f64, point: StepPoint, r: &Vector| -> Result<Vector> {
        let input = match point {
            StepPoint::Start => u.value_right(t)?,
            StepPoint::Mid | StepPoint::End => u.value(t)?,
        };
        Ok(cfg.drift(r, &input))
    };
    integrate_with(field, 0.0, &Vector::zeros(cfg.n), dt, steps)
}

/// Reservoir response sampled on the grid of `u`.
#[derive(Debug, Clone)]
pub struct DrivenSnapshots {
    pub r: SnapshotMatrix,
    /// State at the last sample time, the starting point for forecasting.
    pub final_state: Vector,
}

/// Drive with an input defined on `[0, t_m]` (the grid of `u`, which must
/// start at `t_start = 0`) using `substeps` RK4 steps per sample.
pub fn drive_sampled(
    cfg: &ReservoirConfig,
    signal: &dyn InputSignal,
    u: &SnapshotMatrix,
    substeps: usize,
) -> Result<DrivenSnapshots> {
    if u.t_start != 0.0 {
        return Err(Error::InvalidArgument("training window must start at t = 0".into()));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    let t_end = u.end_time();
    let traj = drive_open_loop(cfg, signal, t_end, u.h / substeps as f64)?;
    let r = sample_uniform(&traj, u.h, u.m(), 0.0)?;
    Ok(DrivenSnapshots {
        final_state: traj.states.last().unwrap().clone(),
        r,
    })
}

/// [`drive_sampled`] with the zero-order hold of `u`.
pub fn drive_zoh(cfg: &ReservoirConfig, u: &SnapshotMatrix, substeps: usize) -> Result<DrivenSnapshots> {
    drive_sampled(cfg, &zero_order_hold(u), u, substeps)
}

/// Variation-of-constants snapshots of the linear reservoir under a
/// zero-order-hold input.
#[derive(Debug, Clone)]
pub struct ExactSnapshots {
    pub r: SnapshotMatrix,
    /// `d × m`, `B₁ = U Kᵀ`.
    pub b1: Matrix,
    /// `1 × m` bias response.
    pub b2: Matrix,
}

/// `α = exp(−γ(1 − ω)h)`, the per-sample memory factor.
pub fn memory_factor(gamma: f64, omega: f64, h: f64) -> f64 {
    (-gamma * (1.0 - omega) * h).exp()
}

/// Lower-triangular `K` with `K_jk = (1−α)/(1−ω) α^{j−k}` for `k ≤ j`.
pub fn memory_kernel(m: usize, alpha: f64, omega: f64) -> Matrix {
    let c = (1.0 - alpha) / (1.0 - omega);
    Matrix::from_fn(m, m, |j, k| if k <= j { c * alpha.powi((j - k) as i32) } else { 0.0 })
}

/// Closed-form snapshots `R = W_in B₁ + 1_n B₂` with `r(0) = 0`, sample
/// times `t_j = j h` measured from the start of `u`.
pub fn exact_linear_snapshots(cfg: &ReservoirConfig, u: &SnapshotMatrix) -> Result<ExactSnapshots> {
    if cfg.activation != Activation::Linear {
        return Err(Error::NotLinear);
    }
    if u.rows() != cfg.d {
        return Err(Error::ShapeMismatch(format!(
            "U has {} rows, reservoir expects d = {}",
            u.rows(),
            cfg.d
        )));
    }
    let m = u.m();
    let alpha = memory_factor(cfg.gamma, cfg.omega, u.h);
    let c = (1.0 - alpha) / (1.0 - cfg.omega);

    // b1_j = α b1_{j−1} + c u_j, i.e. B₁ = U Kᵀ
    let mut b1 = Matrix::zeros(cfg.d, m);
    let mut acc = Vector::zeros(cfg.d);
    for j in 0..m {
        acc = acc * alpha + u.data.column(j) * c;
        b1.set_column(j, &acc);
    }
    let rate = cfg.gamma * (cfg.omega - 1.0);
    let b2 = Matrix::from_fn(1, m, |_, j| {
        let t = (j + 1) as f64 * u.h;
        cfg.sigma_b * (rate * t).exp_m1() / (cfg.omega - 1.0)
    });
    let ones = Matrix::from_element(cfg.n, 1, 1.0);
    let r = &cfg.w_in * &b1 + ones * &b2;
    Ok(ExactSnapshots {
        r: SnapshotMatrix::new(r, u.h, u.t_start)?,
        b1,
        b2,
    })
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub reservoir: Trajectory,
    /// `y(t) = W_out r(t)`.
    pub output: Trajectory,
}

/// Autonomous forecast `ṙ = −γr + γf(ωr + σ_b) + γ W_in W_out r` from `r_init`;
/// times are measured from the start of the forecast.
pub fn closed_loop_forecast(
    cfg: &ReservoirConfig,
    w_out: &Matrix,
    r_init: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<ClosedLoopRun> {
    if w_out.shape() != (cfg.d, cfg.n) {
        return Err(Error::ShapeMismatch(format!(
            "W_out is {}x{}, expected {}x{}",
            w_out.nrows(),
            w_out.ncols(),
            cfg.d,
            cfg.n
        )));
    }
    if r_init.len() != cfg.n {
        return Err(Error::ShapeMismatch("initial reservoir state has wrong length".into()));
    }
    let (steps, dt) = step_count(horizon, dt)?;
    let reservoir = integrate_with(|_, _, r| Ok(cfg.closed_loop_drift(w_out, r)), 0.0, r_init, dt, steps)?;
    let output = Trajectory {
        times: reservoir.times.clone(),
        states: reservoir.states.iter().map(|r| w_out * r).collect(),
    };
    Ok(ClosedLoopRun { reservoir, output })
}

/// Jacobian of the open-loop drift with respect to `r`.
pub fn jacobian_untrained(cfg: &ReservoirConfig, r: &Vector) -> Matrix {
    let g = cfg.gamma;
    match cfg.activation {
        Activation::Linear => Matrix::identity(cfg.n, cfg.n) * (g * (cfg.omega - 1.0)),
        Activation::Tanh => {
            let diag = r.map(|x| {
                let sech = 1.0 / (cfg.omega * x + cfg.sigma_b).cosh();
                g * (cfg.omega * sech * sech - 1.0)
            });
            Matrix::from_diagonal(&diag)
        }
    }
}

/// Jacobian of the closed loop: `J₀(r) + γ W_in W_out`.
pub fn jacobian_trained(cfg: &ReservoirConfig, w_out: &Matrix, r: &Vector) -> Matrix {
    jacobian_untrained(cfg, r) + &cfg.w_in * w_out * cfg.gamma
}

/// State matrix of the trained linear reservoir (its Jacobian, constant in `r`).
pub fn linear_closed_loop_matrix(cfg: &ReservoirConfig, w_out: &Matrix) -> Matrix {
    Matrix::identity(cfg.n, cfg.n) * cfg.base_eigenvalue() + &cfg.w_in * w_out * cfg.gamma
}
