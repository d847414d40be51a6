//! Benchmark ODE systems, a fixed-step RK4 integrator and uniform snapshot sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Autonomous vector field `ẋ = f(x)`.
pub trait OdeSystem {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
}

/// Lorenz-63.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl OdeSystem for Lorenz {
    fn name(&self) -> &str {
        "lorenz"
    }
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![
            self.sigma * (x[1] - x[0]),
            x[0] * (self.rho - x[2]) - x[1],
            x[0] * x[1] - self.beta * x[2],
        ])
    }
}

pub fn lorenz_field() -> Lorenz {
    Lorenz::default()
}

pub const GOLDBETER_1995_TOML: &str = include_str!("../configs/goldbeter1995.toml");

/// Rate constants of the five-state PER oscillator. Field names follow the
/// usual notation (`v_s`, `v_m`, `K_m`, ...); `k_1..k_4` are the Michaelis
/// constants of the phosphorylation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldbeterParams {
    pub version: u32,
    pub vs: f64,
    pub vm: f64,
    pub km: f64,
    pub ks: f64,
    pub vd: f64,
    pub kd: f64,
    pub k1: f64,
    pub k2: f64,
    pub ki: f64,
    pub hill: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub k_1: f64,
    pub k_2: f64,
    pub k_3: f64,
    pub k_4: f64,
}

impl GoldbeterParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("goldbeter_params", e.to_string()))
    }
}

impl Default for GoldbeterParams {
    fn default() -> Self {
        Self::from_toml(GOLDBETER_1995_TOML).expect("shipped Goldbeter parameters parse")
    }
}

/// State order: `(M, P0, P1, P2, P_N)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Goldbeter {
    pub params: GoldbeterParams,
}

impl OdeSystem for Goldbeter {
    fn name(&self) -> &str {
        "goldbeter"
    }
    fn dim(&self) -> usize {
        5
    }
    fn eval(&self, x: &Vector) -> Vector {
        let p = &self.params;
        let (m, p0, p1, p2, pn) = (x[0], x[1], x[2], x[3], x[4]);
        let mm = |v: f64, k: f64, s: f64| v * s / (k + s);
        let repress = p.ki.powf(p.hill) / (p.ki.powf(p.hill) + pn.max(0.0).powf(p.hill));
        let phos1 = mm(p.v1, p.k_1, p0);
        let dephos1 = mm(p.v2, p.k_2, p1);
        let phos2 = mm(p.v3, p.k_3, p1);
        let dephos2 = mm(p.v4, p.k_4, p2);
        Vector::from_vec(vec![
            p.vs * repress - mm(p.vm, p.km, m),
            p.ks * m - phos1 + dephos1,
            phos1 - dephos1 - phos2 + dephos2,
            phos2 - dephos2 - p.k1 * p2 + p.k2 * pn - mm(p.vd, p.kd, p2),
            p.k1 * p2 - p.k2 * pn,
        ])
    }
}

pub fn goldbeter_field() -> Goldbeter {
    Goldbeter::default()
}

/// `ẋ = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub a: Matrix,
}

impl OdeSystem for LinearField {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &Vector) -> Vector {
        &self.a * x
    }
}

/// Ordered samples of a vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vector>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        Ok(Trajectory { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation between stored points.
    pub fn interpolate(&self, t: f64) -> Result<Vector> {
        let slack = 1e-9 * (self.end() - self.start()).abs().max(1.0);
        if t < self.start() - slack || t > self.end() + slack {
            return Err(Error::OutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            return Ok(self.states[0].clone());
        }
        if idx >= self.len() {
            return Ok(self.states[self.len() - 1].clone());
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        Ok(&self.states[idx - 1] * (1.0 - w) + &self.states[idx] * w)
    }

    /// `time,<label0>,<label1>,...` rows after a versioned schema comment.
    pub fn to_csv(&self, schema: &str, labels: &[&str]) -> String {
        let mut out = format!("# domlab-csv v1 {schema}\ntime");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t:e}"));
            for x in s.iter() {
                out.push_str(&format!(",{x:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Which point of an RK4 step a stage is evaluated at. Lets piecewise-constant
/// inputs pick the value on the correct side of a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepPoint {
    Start,
    Mid,
    End,
}

/// One classical RK4 step of a time-dependent field.
pub(crate) fn rk4_step<F>(f: &mut F, t: f64, x: &Vector, dt: f64) -> Result<Vector>
where
    F: FnMut(f64, StepPoint, &Vector) -> Result<Vector>,
{
    let k1 = f(t, StepPoint::Start, x)?;
    let k2 = f(t + 0.5 * dt, StepPoint::Mid, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, StepPoint::Mid, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, StepPoint::End, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrate `f` from `(t0, x0)` for `steps` fixed steps.
pub(crate) fn integrate_with<F>(mut f: F, t0: f64, x0: &Vector, dt: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(f64, StepPoint, &Vector) -> Result<Vector>,
{
    if !(dt > 0.0) || steps == 0 {
        return Err(Error::InvalidArgument(format!("need dt > 0 and steps >= 1 (dt = {dt}, steps = {steps})")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: t0 });
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for i in 0..steps {
        let t = t0 + i as f64 * dt;
        x = rk4_step(&mut f, t, &x, dt)?;
        let t_next = t0 + (i + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_next });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Classical fixed-step RK4 from `t = 0`; returns `steps + 1` points including `x0`.
pub fn rk4_integrate(sys: &dyn OdeSystem, x0: &Vector, dt: f64, steps: usize) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial state has {} entries, system `{}` has dimension {}",
            x0.len(),
            sys.name(),
            sys.dim()
        )));
    }
    integrate_with(|_, _, x| Ok(sys.eval(x)), 0.0, x0, dt, steps)
}

/// Uniformly sampled signal: column `j` (0-based) holds the value at
/// `t_start + (j + 1) h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: Matrix,
    pub h: f64,
    pub t_start: f64,
}

impl SnapshotMatrix {
    pub fn new(data: Matrix, h: f64, t_start: f64) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling step must be positive, got {h}")));
        }
        Ok(SnapshotMatrix { data, h, t_start })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Number of snapshots `m`.
    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    /// Time of 0-based column `j`.
    pub fn time(&self, j: usize) -> f64 {
        self.t_start + (j + 1) as f64 * self.h
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.m() - 1)
    }

    /// First `k` columns.
    pub fn prefix(&self, k: usize) -> SnapshotMatrix {
        SnapshotMatrix {
            data: self.data.columns(0, k).into_owned(),
            h: self.h,
            t_start: self.t_start,
        }
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            times: (0..self.m()).map(|j| self.time(j)).collect(),
            states: self.data.column_iter().map(|c| c.into_owned()).collect(),
        }
    }

    pub fn to_csv(&self, schema: &str, labels: &[&str]) -> String {
        self.to_trajectory().to_csv(schema, labels)
    }
}

/// Sample `traj` at `t_start + j h`, `j = 1..=m`. Grid points are looked up
/// exactly; off-grid times fall back to linear interpolation.
pub fn sample_uniform(traj: &Trajectory, h: f64, m: usize, t_start: f64) -> Result<SnapshotMatrix> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one snapshot".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling step must be positive, got {h}")));
    }
    let grid_tol = 1e-9 * h;
    let mut data = Matrix::zeros(traj.dim(), m);
    for j in 0..m {
        let t = t_start + (j + 1) as f64 * h;
        if t < traj.start() - grid_tol || t > traj.end() + grid_tol {
            return Err(Error::OutOfRange {
                t,
                start: traj.start(),
                end: traj.end(),
            });
        }
        let idx = traj.times.partition_point(|&x| x < t - grid_tol);
        let value = match traj.times.get(idx) {
            Some(&ti) if (ti - t).abs() <= grid_tol => traj.states[idx].clone(),
            _ => traj.interpolate(t)?,
        };
        data.set_column(j, &value);
    }
    SnapshotMatrix::new(data, h, t_start)
}

/// Time-dependent input `u(t)`.
pub trait InputSignal {
    fn dim(&self) -> usize;
    fn value(&self, t: f64) -> Result<Vector>;
    /// Right limit `u(t⁺)`; differs from [`InputSignal::value`] only at jumps.
    fn value_right(&self, t: f64) -> Result<Vector> {
        self.value(t)
    }
}

/// Piecewise-constant reconstruction: `u(t) = u(t_k)` on `(t_{k−1}, t_k]`,
/// and `u(t) = u(t_1)` on `[t_start, t_1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOrderHold {
    pub snapshots: SnapshotMatrix,
}

pub fn zero_order_hold(u: &SnapshotMatrix) -> ZeroOrderHold {
    ZeroOrderHold {
        snapshots: u.clone(),
    }
}

impl ZeroOrderHold {
    fn check(&self, t: f64) -> Result<f64> {
        let s = &self.snapshots;
        let slack = 1e-9 * s.h;
        if t < s.t_start - slack || t > s.end_time() + slack {
            return Err(Error::OutOfRange {
                t,
                start: s.t_start,
                end: s.end_time(),
            });
        }
        Ok((t - s.t_start) / s.h)
    }

    fn column(&self, k: f64) -> Vector {
        let m = self.snapshots.m();
        let k = (k.max(1.0) as usize).min(m);
        self.snapshots.data.column(k - 1).into_owned()
    }
}

impl InputSignal for ZeroOrderHold {
    fn dim(&self) -> usize {
        self.snapshots.rows()
    }

    fn value(&self, t: f64) -> Result<Vector> {
        let x = self.check(t)?;
        Ok(self.column((x - 1e-9).ceil()))
    }

    fn value_right(&self, t: f64) -> Result<Vector> {
        let x = self.check(t)?;
        Ok(self.column((x + 1e-9).floor() + 1.0))
    }
}

/// Linear interpolation between snapshots, constant `u(t_1)` before `t_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHold {
    traj: Trajectory,
    t_start: f64,
}

impl LinearHold {
    pub fn new(u: &SnapshotMatrix) -> Self {
        LinearHold {
            traj: u.to_trajectory(),
            t_start: u.t_start,
        }
    }
}

impl InputSignal for LinearHold {
    fn dim(&self) -> usize {
        self.traj.dim()
    }

    fn value(&self, t: f64) -> Result<Vector> {
        let slack = 1e-9 * (self.traj.end() - self.t_start).max(1.0);
        if t < self.t_start - slack {
            return Err(Error::OutOfRange {
                t,
                start: self.t_start,
                end: self.traj.end(),
            });
        }
        if t <= self.traj.start() {
            return Ok(self.traj.states[0].clone());
        }
        self.traj.interpolate(t)
    }
}

/// Input given by a closure, defined for all `t`.
pub struct FnSignal<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> Vector> FnSignal<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnSignal { dim, f }
    }
}

impl<F: Fn(f64) -> Vector> InputSignal for FnSignal<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64) -> Result<Vector> {
        Ok((self.f)(t))
    }
}

/// Per-channel affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelScaling {
    /// Fit over the columns of `data`; a constant channel keeps unit scale.
    pub fn fit(data: &Matrix) -> Self {
        let m = data.ncols() as f64;
        let mut mean = Vec::with_capacity(data.nrows());
        let mut std = Vec::with_capacity(data.nrows());
        for row in data.row_iter() {
            let mu = row.sum() / m;
            let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m;
            mean.push(mu);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        ChannelScaling { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        ChannelScaling {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn apply(&self, data: &Matrix) -> Matrix {
        Matrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            (data[(i, j)] - self.mean[i]) / self.std[i]
        })
    }

    pub fn apply_vec(&self, x: &Vector) -> Vector {
        Vector::from_fn(x.len(), |i, _| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert_vec(&self, x: &Vector) -> Vector {
        Vector::from_fn(x.len(), |i, _| x[i] * self.std[i] + self.mean[i])
    }

    pub fn invert_trajectory(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            times: traj.times.clone(),
            states: traj.states.iter().map(|s| self.invert_vec(s)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn name(&self) -> &str {
            "decay"
        }
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &Vector) -> Vector {
            -x
        }
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn constant_field_gives_constant_trajectory() {
        let zero = LinearField { a: Matrix::zeros(1, 1) };
        let traj = rk4_integrate(&zero, &v(&[1.0]), 0.37, 20).unwrap();
        assert_eq!(traj.len(), 21);
        assert!(traj.states.iter().all(|s| s[0] == 1.0));
    }

    #[test]
    fn exponential_decay_accuracy() {
        let traj = rk4_integrate(&Decay, &v(&[1.0]), 0.01, 100).unwrap();
        let last = traj.states.last().unwrap()[0];
        assert!((last - (-1.0f64).exp()).abs() < 1e-8, "{last}");
        assert!((traj.end() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_energy_drift() {
        let rot = LinearField {
            a: Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        };
        let traj = rk4_integrate(&rot, &v(&[1.0, 0.0]), 1e-3, 1000).unwrap();
        for s in &traj.states {
            assert!((s.norm_squared() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let traj = rk4_integrate(&Decay, &v(&[1.0]), dt, steps).unwrap();
            (traj.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn divergence_reported() {
        let blow = LinearField { a: Matrix::from_element(1, 1, 800.0) };
        let err = rk4_integrate(&blow, &v(&[1.0]), 1.0, 200).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn lorenz_field_values() {
        let l = lorenz_field();
        assert_eq!(l.eval(&v(&[0.0, 0.0, 0.0])), v(&[0.0, 0.0, 0.0]));
        let f = l.eval(&v(&[1.0, 1.0, 1.0]));
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 26.0);
        assert!((f[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn lorenz_trajectory_bounded() {
        let traj = rk4_integrate(&lorenz_field(), &v(&[1.0, 1.0, 1.0]), 0.005, 20_000).unwrap();
        assert!(traj.states.iter().all(|s| s.amax() < 1e3));
    }

    #[test]
    fn goldbeter_nonnegative_and_oscillating() {
        let g = goldbeter_field();
        assert_eq!(g.dim(), 5);
        let x0 = v(&[1.0, 0.5, 0.5, 0.5, 0.5]);
        let traj = rk4_integrate(&g, &x0, 0.01, 20_000).unwrap();
        assert!(traj.states.iter().all(|s| s.iter().all(|&c| c >= 0.0)));
        // dM/dt sign changes over the last 30 h (about one period) after the transient
        let tail: Vec<f64> = traj.states[17_000..]
            .iter()
            .map(|s| g.eval(s)[0])
            .collect();
        let changes = tail.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(changes >= 2, "{changes} sign changes");
    }

    #[test]
    fn goldbeter_params_reject_unknown_keys() {
        let text = format!("{GOLDBETER_1995_TOML}\nbogus = 1.0\n");
        assert!(GoldbeterParams::from_toml(&text).is_err());
    }

    #[test]
    fn sampling_examples() {
        let traj = rk4_integrate(&Decay, &v(&[1.0]), 0.001, 1000).unwrap();
        let u = sample_uniform(&traj, 0.1, 5, 0.0).unwrap();
        assert_eq!(u.m(), 5);
        for j in 0..5 {
            let exact = (-0.1 * (j + 1) as f64).exp();
            assert!((u.data[(0, j)] - exact).abs() < 1e-6);
        }
        let one = sample_uniform(&traj, 0.1, 1, 0.0).unwrap();
        assert_eq!(one.m(), 1);
        assert!(matches!(
            sample_uniform(&traj, 0.1, 11, 0.0),
            Err(Error::OutOfRange { .. })
        ));

        let zero = LinearField { a: Matrix::zeros(2, 2) };
        let flat = rk4_integrate(&zero, &v(&[1.0, 2.0]), 0.1, 30).unwrap();
        let u = sample_uniform(&flat, 0.25, 4, 0.0).unwrap();
        assert!(u.data.column_iter().all(|c| c == u.data.column(0)));
    }

    #[test]
    fn off_grid_sampling_interpolates() {
        let traj = Trajectory::new(vec![0.0, 1.0], vec![v(&[0.0]), v(&[2.0])]).unwrap();
        let u = sample_uniform(&traj, 0.3, 3, 0.0).unwrap();
        assert!((u.data[(0, 2)] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn zero_order_hold_conventions() {
        let u = SnapshotMatrix::new(Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), 0.5, 0.0).unwrap();
        let zoh = zero_order_hold(&u);
        assert_eq!(zoh.value(0.0).unwrap()[0], 1.0);
        assert_eq!(zoh.value(0.5).unwrap()[0], 1.0);
        assert_eq!(zoh.value(1.0).unwrap()[0], 2.0);
        assert_eq!(zoh.value(1.0 - 0.25).unwrap()[0], 2.0);
        assert_eq!(zoh.value(1.5).unwrap()[0], 3.0);
        assert_eq!(zoh.value_right(0.5).unwrap()[0], 2.0);
        assert_eq!(zoh.value_right(1.5).unwrap()[0], 3.0);
        assert!(matches!(zoh.value(1.6), Err(Error::OutOfRange { .. })));

        let single = SnapshotMatrix::new(Matrix::from_element(2, 1, 4.0), 0.1, 0.0).unwrap();
        let hold = zero_order_hold(&single);
        for t in [0.0, 0.03, 0.1] {
            assert_eq!(hold.value(t).unwrap(), v(&[4.0, 4.0]));
        }
    }

    #[test]
    fn hold_then_resample_round_trip() {
        let u = SnapshotMatrix::new(
            Matrix::from_fn(2, 7, |i, j| ((i + 1) * (j + 3)) as f64 * 0.1),
            0.2,
            0.0,
        )
        .unwrap();
        let zoh = zero_order_hold(&u);
        let times: Vec<f64> = (0..=70).map(|i| i as f64 * 0.02).collect();
        let states = times.iter().map(|&t| zoh.value(t).unwrap()).collect();
        let traj = Trajectory::new(times, states).unwrap();
        assert_eq!(sample_uniform(&traj, 0.2, 7, 0.0).unwrap().data, u.data);
    }

    #[test]
    fn scaling_normalizes_and_inverts() {
        let data = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]);
        let s = ChannelScaling::fit(&data);
        let z = s.apply(&data);
        assert!(z.row(0).sum().abs() < 1e-12);
        assert!((z.row(0).norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(s.std[1], 1.0);
        let back = s.invert_vec(&z.column(2).into_owned());
        assert!((back - data.column(2)).norm() < 1e-12);
    }
}
