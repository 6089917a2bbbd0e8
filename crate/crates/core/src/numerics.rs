//! Shared numeric kernels: singular value decompositions, pseudoinverses,
//! rank estimators, a bracketing univariate minimizer and central finite
//! differences.
//!
//! Every function here is pure. Matrices are dense `nalgebra` matrices; the
//! problems in this crate never exceed a few hundred rows or columns.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Default relative threshold used to count singular values as nonzero.
pub const DEFAULT_RANK_TOL: f64 = 1e-3;

/// Spectra whose largest singular value is at most this are reported as
/// the zero matrix: rank 0 and no condition number. Runs that collapse to
/// the zero solution decay geometrically towards it and would otherwise
/// show full relative rank.
pub const NEGLIGIBLE_NORM: f64 = 1e-12;

/// A thin singular value decomposition `A = U diag(s) Vᵀ` with the
/// singular values sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v_t: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.v_t
    }

    pub fn largest(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::input(format!("{what} has a non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

/// Thin SVD of `matrix`, sorted by decreasing singular value.
pub fn spectral_decompose(matrix: &Matrix) -> Result<Svd> {
    ensure_finite(matrix, "matrix")?;
    let (m, n) = matrix.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: Matrix::zeros(m, 0), singular_values: Vec::new(), v_t: Matrix::zeros(0, n) });
    }
    let svd = SVD::try_new(matrix.clone(), true, true, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::input("singular value decomposition did not converge"))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut su = Matrix::zeros(m, k);
    let mut sv = Matrix::zeros(k, n);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_row(dst, &v_t.row(src));
        s.push(svd.singular_values[src].max(0.0));
    }
    Ok(Svd { u: su, singular_values: s, v_t: sv })
}

/// Singular values only, sorted non-increasing.
pub fn singular_values(matrix: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(matrix, "matrix")?;
    if matrix.nrows().min(matrix.ncols()) == 0 {
        return Ok(Vec::new());
    }
    let mut s: Vec<f64> = matrix.singular_values().iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Moore–Penrose pseudoinverse. Singular values below `rel_tol · σ₁` are
/// treated as zero.
pub fn pseudoinverse(matrix: &Matrix, rel_tol: f64) -> Result<Matrix> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::input(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let svd = spectral_decompose(matrix)?;
    let (m, n) = matrix.shape();
    let cutoff = rel_tol * svd.largest();
    let mut out = Matrix::zeros(n, m);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_j u_jᵀ / s
            let v = svd.v_t.row(j).transpose();
            let u = svd.u.column(j);
            out.ger(1.0 / s, &v, &u, 1.0);
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix; eigenvalues sorted
/// non-increasing with eigenvectors as matching columns.
pub fn symmetric_eigen(matrix: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure_finite(matrix, "matrix")?;
    if !matrix.is_square() {
        return Err(Error::shape("symmetric_eigen", format!("expected square, got {:?}", matrix.shape())));
    }
    let n = matrix.nrows();
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vecs = Matrix::zeros(n, n);
    let vals = order
        .iter()
        .enumerate()
        .map(|(dst, &src)| {
            vecs.set_column(dst, &eig.eigenvectors.column(src));
            eig.eigenvalues[src]
        })
        .collect();
    Ok((vals, vecs))
}

/// Continuous rank estimator applied to a singular-value spectrum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankEstimator {
    /// `exp(H(p))` with `p_i = σ_i / Σσ_j`.
    #[default]
    SpectralEntropy,
    /// `Σσ_i² / σ₁²`.
    Stable,
}

impl RankEstimator {
    pub fn estimate(self, singular_values: &[f64]) -> f64 {
        let total: f64 = singular_values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        match self {
            RankEstimator::SpectralEntropy => {
                let h: f64 = singular_values
                    .iter()
                    .filter(|&&s| s > 0.0)
                    .map(|&s| {
                        let p = s / total;
                        -p * p.ln()
                    })
                    .sum();
                h.exp()
            }
            RankEstimator::Stable => {
                let top = singular_values[0];
                singular_values.iter().map(|s| s * s).sum::<f64>() / (top * top)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub singular_values: Vec<f64>,
    pub hard_rank: usize,
    pub effective_rank: f64,
    /// `σ₁ / σ_k` for the caller's `k`; `None` when undefined (zero matrix
    /// or `σ_k = 0`).
    pub condition_number: Option<f64>,
}

/// Hard rank, effective rank and condition number of `matrix`.
pub fn rank_report(matrix: &Matrix, rel_tol: f64, condition_count: usize) -> Result<SpectralReport> {
    rank_report_with(matrix, rel_tol, condition_count, RankEstimator::default())
}

pub fn rank_report_with(
    matrix: &Matrix,
    rel_tol: f64,
    condition_count: usize,
    estimator: RankEstimator,
) -> Result<SpectralReport> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::input(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let s = singular_values(matrix)?;
    if condition_count == 0 || condition_count > s.len() {
        return Err(Error::input(format!(
            "condition_count {condition_count} must lie in 1..={}",
            s.len()
        )));
    }
    Ok(report_from_spectrum(s, rel_tol, condition_count, estimator))
}

pub(crate) fn report_from_spectrum(
    s: Vec<f64>,
    rel_tol: f64,
    condition_count: usize,
    estimator: RankEstimator,
) -> SpectralReport {
    let top = s.first().copied().unwrap_or(0.0);
    if top <= NEGLIGIBLE_NORM {
        return SpectralReport { singular_values: s, hard_rank: 0, effective_rank: 0.0, condition_number: None };
    }
    let hard_rank = s.iter().filter(|&&x| x >= rel_tol * top).count();
    let effective_rank = estimator.estimate(&s);
    let sk = s[condition_count - 1];
    let condition_number = (sk > 0.0).then(|| top / sk);
    SpectralReport { singular_values: s, hard_rank, effective_rank, condition_number }
}

/// Result of [`minimize_univariate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateMin {
    pub argmin: f64,
    pub value: f64,
}

/// Minimizes a curve on `[0, ∞)`.
///
/// The curve is scanned on a geometric grid expanding from `q = 1` in both
/// directions (four points per octave), the best grid point is refined by
/// golden-section search inside its two neighbours, and the result is
/// compared against the boundary value at `q = 0`.
pub fn minimize_univariate<F>(curve: F, rel_tol: f64) -> Result<UnivariateMin>
where
    F: Fn(f64) -> f64,
{
    const PER_OCTAVE: i32 = 4;
    const DOWN_OCTAVES: i32 = 60;
    const UP_OCTAVES: i32 = 40;

    let eval = |q: f64| -> Result<f64> {
        let v = curve(q);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { q })
        }
    };
    let rel_tol = rel_tol.clamp(1e-15, 1e-2);

    let f0 = eval(0.0)?;
    let mut grid: Vec<(f64, f64)> = Vec::new();
    for k in -DOWN_OCTAVES * PER_OCTAVE..=UP_OCTAVES * PER_OCTAVE {
        let q = 2f64.powf(k as f64 / PER_OCTAVE as f64);
        grid.push((q, eval(q)?));
    }
    let (best, _) = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("grid is non-empty");
    let lo = if best == 0 { 0.0 } else { grid[best - 1].0 };
    let hi = grid[(best + 1).min(grid.len() - 1)].0;
    let interior = golden_section(&eval, lo, hi, rel_tol)?;
    let interior = if interior.value <= grid[best].1 { interior } else { UnivariateMin { argmin: grid[best].0, value: grid[best].1 } };

    // The boundary wins unless the interior point is better by more than
    // rounding noise.
    if interior.value < f0 - 4.0 * f64::EPSILON * (1.0 + f0.abs()) {
        Ok(interior)
    } else {
        Ok(UnivariateMin { argmin: 0.0, value: f0 })
    }
}

fn golden_section<F>(eval: &F, mut a: f64, mut b: f64, rel_tol: f64) -> Result<UnivariateMin>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..500 {
        if (b - a).abs() <= rel_tol * (1.0 + 0.5 * (a + b).abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    let (argmin, value) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(UnivariateMin { argmin, value })
}

/// Central-difference gradient of a scalar function of a list of matrices.
pub fn finite_difference_gradient<F>(f: F, point: &[Matrix], step: f64) -> Vec<Matrix>
where
    F: Fn(&[Matrix]) -> f64,
{
    let mut work: Vec<Matrix> = point.to_vec();
    let mut grads: Vec<Matrix> = point.iter().map(|m| Matrix::zeros(m.nrows(), m.ncols())).collect();
    for (idx, grad) in grads.iter_mut().enumerate() {
        for e in 0..point[idx].len() {
            let orig = work[idx][e];
            work[idx][e] = orig + step;
            let plus = f(&work);
            work[idx][e] = orig - step;
            let minus = f(&work);
            work[idx][e] = orig;
            grad[e] = (plus - minus) / (2.0 * step);
        }
    }
    grads
}

/// `a ← a + alpha · b`, entrywise.
pub fn add_scaled(a: &mut Matrix, alpha: f64, b: &Matrix) {
    a.zip_apply(b, |x, y| *x += alpha * y);
}

/// `M ⊗ 1ₙᵀ`: every column of `m` repeated `n` times, class blocks contiguous.
pub fn repeat_columns(m: &Matrix, n: usize) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols() * n, |i, j| m[(i, j / n)])
}

/// Per-class column means of a `d × (K·n)` matrix with contiguous class blocks.
pub fn class_means(h: &Matrix, classes: usize, per_class: usize) -> Matrix {
    let mut out = Matrix::zeros(h.nrows(), classes);
    for c in 0..classes {
        let block = h.columns(c * per_class, per_class);
        for i in 0..h.nrows() {
            out[(i, c)] = block.row(i).sum() / per_class as f64;
        }
    }
    out
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
