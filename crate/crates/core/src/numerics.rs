//! Dense real matrix kernel.
//!
//! Thin layer over `nalgebra` that fixes the tolerance conventions used
//! across the crate: a relative singular-value cutoff for rank and
//! pseudoinverse, a deterministic eigenvalue order, and eigenvectors
//! that stay well defined on repeated (semisimple) eigenvalues.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative tolerance used to decide whether a symmetric input really is symmetric.
pub const DEFAULT_SYMMETRY_RTOL: f64 = 1e-9;

/// `max(rows, cols) * eps`, the usual LAPACK-style singular value cutoff (relative to `σ_max`).
pub fn default_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s = real_to_faer(a)
        .singular_values()
        .unwrap_or_else(|_| a.clone().svd(false, false).singular_values.iter().copied().collect());
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn real_to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn complex_to_faer(a: &CMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD `(U, σ, V)` with `σ` descending.
fn thin_svd(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    match real_to_faer(a).thin_svd() {
        Ok(svd) => {
            let (u, v) = (svd.U(), svd.V());
            let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
            (
                Matrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
                s,
                Matrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
            )
        }
        Err(_) => {
            let svd = a.clone().svd(true, true);
            let s = svd.singular_values.iter().copied().collect();
            (svd.u.unwrap(), s, svd.v_t.unwrap().transpose())
        }
    }
}

/// Number of singular values strictly above `rtol * σ_max`.
pub fn numerical_rank(a: &Matrix, rtol: f64) -> usize {
    let s = singular_values(a);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rtol * smax).count()
}

/// Moore-Penrose pseudoinverse with singular values `<= rtol * σ_max` truncated.
pub fn pinv(a: &Matrix, rtol: f64) -> Matrix {
    let (rows, cols) = a.shape();
    if a.is_empty() {
        return Matrix::zeros(cols, rows);
    }
    let (u, sv, v) = thin_svd(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Matrix::zeros(cols, rows);
    }
    let cut = rtol * smax;
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in sv.iter().enumerate() {
        if s > cut {
            // out += v_k * u_k^T / s
            out.ger(1.0 / s, &v.column(k), &u.column(k), 1.0);
        }
    }
    out
}

/// Thin QR with `diag(R) >= 0`. Requires full column rank.
pub fn thin_qr(a: &Matrix, rtol: f64) -> Result<(Matrix, Matrix)> {
    ensure_finite(a)?;
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::ShapeMismatch(format!(
            "thin QR needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let s = singular_values(a);
    let smax = s[0];
    let smin = *s.last().unwrap();
    let tol = rtol * smax;
    if smin <= tol || smax == 0.0 {
        return Err(Error::RankDeficient { smallest: smin, tol });
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..cols {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    Ok((q, r))
}

/// Unit right-shift matrix: ones at `(k+1, k)`.
pub fn shift_matrix(m: usize) -> Matrix {
    let mut s = Matrix::zeros(m, m);
    for k in 0..m.saturating_sub(1) {
        s[(k + 1, k)] = 1.0;
    }
    s
}

/// Eigen-decomposition of a real square matrix.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Unit-norm right eigenvectors, aligned with `eigenvalues`.
    pub eigenvectors: Vec<CVector>,
    pub source_dim: usize,
}

impl ComplexSpectrum {
    /// Columns are the eigenvectors.
    pub fn eigenvector_matrix(&self) -> CMatrix {
        CMatrix::from_columns(&self.eigenvectors)
    }

    /// Largest `‖A v − λ v‖` over all listed pairs.
    pub fn max_residual(&self, a: &Matrix) -> f64 {
        let ac = to_complex(a);
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(&l, v)| (&ac * v - v * l).norm())
            .fold(0.0, f64::max)
    }
}

pub fn to_complex(a: &Matrix) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Descending real part, ties broken by descending imaginary part.
pub fn sort_eigenvalues(eigs: &mut [Complex64]) {
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Eigenvalues only (cheaper than [`eig`]), in the crate's canonical order.
pub fn eigvals(a: &Matrix) -> Result<Vec<Complex64>> {
    ensure_finite(a)?;
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let fa = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let mut eigs: Vec<Complex64> = fa
        .eigenvalues()
        .map_err(|_| Error::ConvergenceFailure)?
        .into_iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    // normalize −0.0 so ordering and output are stable
    for e in eigs.iter_mut() {
        if e.im == 0.0 {
            e.im = 0.0;
        }
    }
    sort_eigenvalues(&mut eigs);
    Ok(eigs)
}

/// All eigenpairs.
///
/// Eigenvalues come from `faer`'s Hessenberg QR. Eigenvalues closer than a
/// small multiple of `‖A‖` are grouped, and each group gets an orthonormal
/// basis of the numerical null space of `A − λ̄I`; this keeps repeated
/// semisimple eigenvalues (the unperturbed reservoir cluster) with a full
/// set of independent eigenvectors. Eigenvectors of conjugate eigenvalues are
/// conjugates of each other.
pub fn eig(a: &Matrix) -> Result<ComplexSpectrum> {
    let eigs = eigvals(a)?;
    let n = eigs.len();
    let scale = a.norm().max(1.0);
    let cluster_tol = 1e-9 * scale;

    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if cluster_of[i] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        cluster_of[i] = id;
        let mut head = 0;
        while head < members.len() {
            let cur = members[head];
            head += 1;
            for j in 0..n {
                if cluster_of[j] == usize::MAX && (eigs[j] - eigs[cur]).norm() <= cluster_tol {
                    cluster_of[j] = id;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let mut vectors: Vec<Option<CVector>> = vec![None; n];
    for members in &clusters {
        if vectors[members[0]].is_some() {
            continue;
        }
        let k = members.len();
        let mean = members.iter().map(|&i| eigs[i]).sum::<Complex64>() / k as f64;
        if mean.im < 0.0 {
            // filled from the conjugate cluster
            continue;
        }
        let basis = null_space_basis(a, mean, k, scale);
        for (slot, &i) in members.iter().enumerate() {
            vectors[i] = Some(basis[slot].clone());
        }
        if mean.im > 0.0 {
            // conjugate cluster: match each member to the conjugate of a member here
            for (slot, &i) in members.iter().enumerate() {
                let target = eigs[i].conj();
                let j = (0..n)
                    .filter(|&j| vectors[j].is_none() && eigs[j].im < 0.0)
                    .min_by(|&x, &y| {
                        (eigs[x] - target)
                            .norm()
                            .total_cmp(&(eigs[y] - target).norm())
                    });
                if let Some(j) = j {
                    vectors[j] = Some(basis[slot].map(|z| z.conj()));
                }
            }
        }
    }
    // Any lower-half eigenvalue left without a partner (should not happen for real input).
    for i in 0..n {
        if vectors[i].is_none() {
            vectors[i] = Some(null_space_basis(a, eigs[i], 1, scale).remove(0));
        }
    }

    Ok(ComplexSpectrum {
        eigenvalues: eigs,
        eigenvectors: vectors.into_iter().map(Option::unwrap).collect(),
        source_dim: n,
    })
}

/// `k` orthonormal vectors spanning the numerical null space of `A − λI`.
fn null_space_basis(a: &Matrix, lambda: Complex64, k: usize, scale: f64) -> Vec<CVector> {
    let n = a.nrows();
    if k == 1 {
        if let Some(v) = inverse_iteration(a, lambda, scale) {
            return vec![v];
        }
    }
    // singular values come out descending, so the last k columns of V
    let mut out = Vec::with_capacity(k);
    if lambda.im == 0.0 {
        let (_, _, v) = thin_svd(&(a - Matrix::identity(n, n) * lambda.re));
        for idx in (n - k..n).rev() {
            out.push(normalize_phase(v.column(idx).map(|x| Complex64::new(x, 0.0))));
        }
    } else {
        let shifted = to_complex(a) - CMatrix::identity(n, n) * lambda;
        match complex_to_faer(&shifted).svd() {
            Ok(svd) => {
                let v = svd.V();
                for idx in (n - k..n).rev() {
                    out.push(normalize_phase(CVector::from_fn(n, |i, _| v[(i, idx)])));
                }
            }
            Err(_) => {
                let svd = shifted.svd(false, true);
                let v_t = svd.v_t.expect("v_t requested");
                let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
                order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
                for &idx in order.iter().take(k) {
                    out.push(normalize_phase(v_t.row(idx).adjoint()));
                }
            }
        }
    }
    out
}

fn inverse_iteration(a: &Matrix, lambda: Complex64, scale: f64) -> Option<CVector> {
    let n = a.nrows();
    let ac = to_complex(a);
    let shift = lambda + Complex64::new(1e-13 * scale, 1e-13 * scale);
    let lu = (&ac - CMatrix::identity(n, n) * shift).lu();
    let mut v = CVector::from_fn(n, |i, _| Complex64::new(1.0 + (i as f64).sin() * 0.5, 0.0));
    v /= Complex64::new(v.norm(), 0.0);
    for _ in 0..3 {
        let w = lu.solve(&v)?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v = w / Complex64::new(norm, 0.0);
    }
    let residual = (&ac * &v - &v * lambda).norm();
    (residual <= 1e-9 * scale).then(|| normalize_phase(v))
}

/// Unit norm, largest-magnitude component made real positive.
fn normalize_phase(v: CVector) -> CVector {
    let norm = v.norm();
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let pivot = v[best];
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    v.map(|z| z * phase / norm)
}

/// Eigenvalues ascending and orthonormal eigenvectors (as columns) of a symmetric matrix.
/// The input is symmetrized after the asymmetry check.
pub fn symmetric_eig(p: &Matrix, sym_rtol: f64) -> Result<(Vec<f64>, Matrix)> {
    ensure_finite(p)?;
    if !p.is_square() {
        return Err(Error::ShapeMismatch("symmetric matrix must be square".into()));
    }
    let asym = (p - p.transpose()).norm();
    if asym > sym_rtol * p.norm() {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = (p + p.transpose()) * 0.5;
    let n = sym.nrows();
    if let Ok(evd) = real_to_faer(&sym).self_adjoint_eigen(faer::Side::Lower) {
        let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
        let u = evd.U();
        let vectors = Matrix::from_fn(n, n, |i, j| u[(i, j)]);
        return Ok((values, vectors));
    }
    let se = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| se.eigenvalues[x].total_cmp(&se.eigenvalues[y]));
    let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| se.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok((values, vectors))
}

/// Sign counts of the eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InertiaTriple {
    pub negatives: usize,
    pub zeros: usize,
    pub positives: usize,
}

/// Eigenvalues `< −tol`, within `±tol`, `> tol`.
pub fn inertia(p: &Matrix, tol: f64) -> Result<InertiaTriple> {
    let (values, _) = symmetric_eig(p, DEFAULT_SYMMETRY_RTOL)?;
    let mut out = InertiaTriple {
        negatives: 0,
        zeros: 0,
        positives: 0,
    };
    for v in values {
        if v < -tol {
            out.negatives += 1;
        } else if v > tol {
            out.positives += 1;
        } else {
            out.zeros += 1;
        }
    }
    Ok(out)
}

/// Single-linkage clusters of `eigs` at distance `radius`, each entry
/// replaced by the mean of its cluster.
pub fn cluster_means(eigs: &[Complex64], radius: f64) -> Vec<Complex64> {
    let n = eigs.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= radius {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| root(&mut label, i)).collect();
    let mut sums = vec![(Complex64::new(0.0, 0.0), 0usize); n];
    for (i, &r) in roots.iter().enumerate() {
        sums[r].0 += eigs[i];
        sums[r].1 += 1;
    }
    roots.iter().map(|&r| sums[r].0 / sums[r].1 as f64).collect()
}

/// [`matched_max_distance`] after replacing both sides by their
/// [`cluster_means`]. Eigenvalues of a Jordan block of size `k` computed in
/// floating point scatter by about `ε^{1/k}`, while their mean stays
/// accurate to `O(ε)`; this compares defective spectra at that accuracy.
pub fn clustered_max_distance(a: &[Complex64], b: &[Complex64], radius: f64) -> f64 {
    matched_max_distance(&cluster_means(a, radius), &cluster_means(b, radius))
}

/// Each entry of the smaller set is matched to a distinct entry of the larger
/// one so that the largest matched distance is minimal (bottleneck matching).
/// Returns that distance; `0` when the smaller set is empty.
pub fn matched_max_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return 0.0;
    }
    let dist = |i: usize, j: usize| (small[i] - large[j]).norm();
    let mut thresholds: Vec<f64> = (0..small.len())
        .flat_map(|i| (0..large.len()).map(move |j| (i, j)))
        .map(|(i, j)| dist(i, j))
        .collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let saturates = |thr: f64| -> bool {
        let adj: Vec<Vec<usize>> = (0..small.len())
            .map(|i| (0..large.len()).filter(|&j| dist(i, j) <= thr).collect())
            .collect();
        let mut owner = vec![usize::MAX; large.len()];
        for i in 0..small.len() {
            let mut seen = vec![false; large.len()];
            if !augment(i, &adj, &mut owner, &mut seen) {
                return false;
            }
        }
        true
    };

    let (mut lo, mut hi) = (0, thresholds.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if saturates(thresholds[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    thresholds[lo]
}

fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [usize], seen: &mut [bool]) -> bool {
    for &j in &adj[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if owner[j] == usize::MAX || augment(owner[j], adj, owner, seen) {
            owner[j] = i;
            return true;
        }
    }
    false
}

/// Condition number (2-norm) of a complex matrix, `inf` when singular.
pub fn condition_number(a: &CMatrix) -> f64 {
    let s: Vec<f64> = complex_to_faer(a)
        .singular_values()
        .unwrap_or_else(|_| a.clone().svd(false, false).singular_values.iter().copied().collect());
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// JSON form `{rows, cols, data}` with `data` flat row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(a: &Matrix) -> Self {
        MatrixJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.transpose().iter().copied().collect(),
        }
    }
}

impl TryFrom<MatrixJson> for Matrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Matrix> {
        if j.data.len() != j.rows * j.cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {}x{} matrix",
                j.data.len(),
                j.rows,
                j.cols
            )));
        }
        let a = Matrix::from_row_slice(j.rows, j.cols, &j.data);
        ensure_finite(&a)?;
        Ok(a)
    }
}

/// `#[serde(with = "crate::numerics::matrix_serde")]` for `Matrix` fields.
pub mod matrix_serde {
    use super::{Matrix, MatrixJson};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Matrix, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        Matrix::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// One row per line, comma separated, no header.
pub fn matrix_to_csv(a: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..a.nrows() {
        let row: Vec<String> = a.row(i).iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("line {}: {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "line {} has {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let a = Matrix::from_row_slice(rows.len(), cols, &flat);
    ensure_finite(&a)?;
    Ok(a)
}
