//! Least-squares readout training and prefix retraining (root locus).

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{SnapshotMatrix, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{default_rtol, eigvals, ensure_finite, numerical_rank, pinv, Matrix, Vector};
use crate::reservoir::{linear_closed_loop_matrix, ReservoirConfig};

pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Tikhonov weight. Zero means the exact pseudoinverse.
    pub ridge: f64,
    /// Relative SVD truncation for the pseudoinverse; `None` uses
    /// [`default_rtol`].
    pub rtol: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { ridge: 0.0, rtol: None }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub u: SnapshotMatrix,
    pub r: SnapshotMatrix,
    pub w_out: Matrix,
    /// `‖W_out R − U‖_F`.
    pub residual: f64,
    pub rank: usize,
    /// `R` has fewer than `n` numerically independent rows, so `W_out` is the
    /// minimum-norm least-squares solution.
    pub rank_deficient: bool,
    pub options: TrainOptions,
}

/// `W_out = U R†`.
pub fn train_readout(r: &SnapshotMatrix, u: &SnapshotMatrix) -> Result<TrainingRecord> {
    train_readout_with(r, u, &TrainOptions::default())
}

pub fn train_readout_with(r: &SnapshotMatrix, u: &SnapshotMatrix, opts: &TrainOptions) -> Result<TrainingRecord> {
    if r.m() != u.m() {
        return Err(Error::ShapeMismatch(format!("R has {} columns, U has {}", r.m(), u.m())));
    }
    if (r.h - u.h).abs() > 1e-12 * u.h.abs().max(1.0) {
        return Err(Error::ShapeMismatch(format!("R sampled at h = {}, U at h = {}", r.h, u.h)));
    }
    if u.m() < u.rows() {
        return Err(Error::InvalidArgument(format!(
            "need m >= d samples (m = {}, d = {})",
            u.m(),
            u.rows()
        )));
    }
    if !(opts.ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {}", opts.ridge)));
    }
    ensure_finite(&r.data)?;
    ensure_finite(&u.data)?;
    let (n, m) = r.data.shape();
    let rtol = opts.rtol.unwrap_or_else(|| default_rtol(n, m));
    let rank = numerical_rank(&r.data, default_rtol(n, m));
    let w_out = if opts.ridge > 0.0 {
        let gram = &r.data * r.data.transpose() + Matrix::identity(n, n) * opts.ridge;
        let rhs = &r.data * u.data.transpose();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))?;
        chol.solve(&rhs).transpose()
    } else {
        &u.data * pinv(&r.data, rtol)
    };
    let residual = (&w_out * &r.data - &u.data).norm();
    Ok(TrainingRecord {
        u: u.clone(),
        r: r.clone(),
        w_out,
        residual,
        rank,
        rank_deficient: rank < n,
        options: *opts,
    })
}

/// Closed-loop eigenvalues of the linear reservoir retrained on growing data
/// prefixes, ordered into continuous branches.
#[derive(Debug, Clone, Serialize)]
pub struct PrefixSeries {
    pub base: f64,
    pub prefix_lengths: Vec<usize>,
    pub prefix_times: Vec<f64>,
    #[serde(skip)]
    pub readouts: Vec<Matrix>,
    /// `spectra[k][b]` is branch `b` at prefix `k`.
    #[serde(skip)]
    pub spectra: Vec<Vec<Complex64>>,
    pub readout_ranks: Vec<usize>,
    /// Prefixes whose retraining failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Prefix lengths `max(d+1, stride)`, then every `stride` samples, ending at `m`.
pub fn prefix_lengths(m: usize, d: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let first = (d + 1).max(stride);
    if first > m {
        return Err(Error::InvalidArgument(format!(
            "first prefix length {first} exceeds m = {m}"
        )));
    }
    let mut out: Vec<usize> = (first..=m).step_by(stride).collect();
    if *out.last().unwrap() != m {
        out.push(m);
    }
    Ok(out)
}

/// Retrain on each prefix and track `eig(γ(ω−1)I + γ W_in W_out(t'))`.
pub fn prefix_readouts(
    r: &SnapshotMatrix,
    u: &SnapshotMatrix,
    cfg: &ReservoirConfig,
    stride: usize,
    opts: &TrainOptions,
) -> Result<PrefixSeries> {
    if r.m() != u.m() {
        return Err(Error::ShapeMismatch(format!("R has {} columns, U has {}", r.m(), u.m())));
    }
    let lengths = prefix_lengths(u.m(), cfg.d, stride)?;
    let base = cfg.base_eigenvalue();
    let mut series = PrefixSeries {
        base,
        prefix_lengths: Vec::new(),
        prefix_times: Vec::new(),
        readouts: Vec::new(),
        spectra: Vec::new(),
        readout_ranks: Vec::new(),
        failures: Vec::new(),
    };
    let mut previous = vec![Complex64::new(base, 0.0); cfg.n];
    for len in lengths {
        let step = train_readout_with(&r.prefix(len), &u.prefix(len), opts).and_then(|rec| {
            let eigs = eigvals(&linear_closed_loop_matrix(cfg, &rec.w_out))?;
            Ok((rec.w_out, eigs))
        });
        match step {
            Ok((w_out, eigs)) => {
                let ordered = match_branches(&previous, &eigs);
                let coupling = &cfg.w_in * &w_out;
                series.readout_ranks.push(numerical_rank(&coupling, default_rtol(cfg.n, cfg.n)));
                series.prefix_lengths.push(len);
                series.prefix_times.push(u.time(len - 1));
                series.readouts.push(w_out);
                series.spectra.push(ordered.clone());
                previous = ordered;
            }
            Err(e) => series.failures.push((len, e.to_string())),
        }
    }
    Ok(series)
}

/// Reorder `next` so that entry `b` continues branch `b` of `prev`: pairs are
/// assigned greedily in order of increasing distance.
pub fn match_branches(prev: &[Complex64], next: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(prev.len(), next.len());
    let n = prev.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, p) in prev.iter().enumerate() {
        for (j, q) in next.iter().enumerate() {
            pairs.push(((p - q).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; n];
    let mut used = vec![false; n];
    let mut left = n;
    for (_, i, j) in pairs {
        if left == 0 {
            break;
        }
        if out[i].is_none() && !used[j] {
            out[i] = Some(next[j]);
            used[j] = true;
            left -= 1;
        }
    }
    out.into_iter().map(Option::unwrap).collect()
}

impl PrefixSeries {
    fn departed_at(&self, k: usize, tol: f64) -> impl Iterator<Item = usize> + '_ {
        let base = Complex64::new(self.base, 0.0);
        self.spectra[k]
            .iter()
            .enumerate()
            .filter(move |(_, l)| (**l - base).norm() > tol)
            .map(|(b, _)| b)
    }

    /// Eigenvalues farther than `tol` from the open-loop value, per prefix.
    pub fn departed_counts(&self, tol: f64) -> Vec<usize> {
        (0..self.spectra.len()).map(|k| self.departed_at(k, tol).count()).collect()
    }

    pub fn max_departed(&self, tol: f64) -> usize {
        self.departed_counts(tol).into_iter().max().unwrap_or(0)
    }

    /// Branch ids that leave the open-loop cluster at any prefix.
    pub fn departed_branches(&self, tol: f64) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.spectra.len()).flat_map(|k| self.departed_at(k, tol)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Rows `(prefix_time, branch_id, re, im)`, starting with the open-loop
    /// spectrum at time 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# domlab-csv v1 rootlocus\nprefix_time,branch_id,re,im\n");
        if let Some(first) = self.spectra.first() {
            for b in 0..first.len() {
                out.push_str(&format!("{:e},{b},{:e},{:e}\n", 0.0, self.base, 0.0));
            }
        }
        for (t, spec) in self.prefix_times.iter().zip(&self.spectra) {
            for (b, l) in spec.iter().enumerate() {
                out.push_str(&format!("{t:e},{b},{:e},{:e}\n", l.re, l.im));
            }
        }
        out
    }
}

/// Pointwise `‖y(t) − u(t)‖₂` on the grid of `u_true`, with `y` linearly
/// interpolated. Grid points outside the span of `y` are dropped.
pub fn forecast_error(y: &Trajectory, u_true: &Trajectory) -> Result<Trajectory> {
    if y.dim() != u_true.dim() {
        return Err(Error::ShapeMismatch(format!(
            "forecast has {} channels, truth has {}",
            y.dim(),
            u_true.dim()
        )));
    }
    let slack = 1e-9 * (y.end() - y.start()).abs().max(1.0);
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (t, u) in u_true.times.iter().zip(&u_true.states) {
        if *t < y.start() - slack || *t > y.end() + slack {
            continue;
        }
        let yt = y.interpolate(t.clamp(y.start(), y.end()))?;
        times.push(*t);
        states.push(Vector::from_element(1, (yt - u).norm()));
    }
    if times.is_empty() {
        return Err(Error::GridMismatch);
    }
    Trajectory::new(times, states)
}

/// Trapezoidal time average of a scalar trajectory over `[start, start + window]`.
pub fn window_mean(err: &Trajectory, window: f64) -> Result<f64> {
    if err.is_empty() || !(window > 0.0) {
        return Err(Error::EmptySamples);
    }
    let end = err.start() + window;
    let pts: Vec<(f64, f64)> = err
        .times
        .iter()
        .zip(&err.states)
        .take_while(|(t, _)| **t <= end + 1e-12 * window)
        .map(|(t, x)| (*t, x[0]))
        .collect();
    if pts.len() < 2 {
        return Ok(pts[0].1);
    }
    let area: f64 = pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Ok(area / (pts.last().unwrap().0 - pts[0].0))
}
