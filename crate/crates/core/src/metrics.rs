//! Collapse diagnostics: within-class variability (DNC1), conditioning of
//! the class means (DNC2), per-layer spectra and detection of the
//! triangular-graph Gram pattern.

use serde::{Deserialize, Serialize};

use crate::dufm::ForwardTrace;
use crate::error::{Error, Result};
use crate::graphs::TriangularGraph;
use crate::numerics::{class_means, rank_report_with, singular_values, Matrix, RankEstimator, SpectralReport};

/// How the between-class scatter is centered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    GlobalMean,
    Uncentered,
}

fn check_layout(features: &Matrix, classes: usize, per_class: usize) -> Result<()> {
    if classes == 0 || per_class == 0 {
        return Err(Error::input("classes and samples per class must be positive"));
    }
    if features.ncols() != classes * per_class {
        return Err(Error::shape(
            "features",
            format!("expected {} columns, found {}", classes * per_class, features.ncols()),
        ));
    }
    Ok(())
}

/// `tr(Σ_W) / tr(Σ_B)`, or `None` when every class mean coincides with
/// the centre (`tr(Σ_B) = 0`).
pub fn dnc1_metric(features: &Matrix, classes: usize, per_class: usize) -> Result<Option<f64>> {
    dnc1_metric_with(features, classes, per_class, Centering::GlobalMean)
}

pub fn dnc1_metric_with(
    features: &Matrix,
    classes: usize,
    per_class: usize,
    centering: Centering,
) -> Result<Option<f64>> {
    check_layout(features, classes, per_class)?;
    let means = class_means(features, classes, per_class);
    let mut within = 0.0;
    for c in 0..classes {
        let mu = means.column(c);
        for i in 0..per_class {
            within += (features.column(c * per_class + i) - mu).norm_squared();
        }
    }
    within /= features.ncols() as f64;
    let centre = match centering {
        Centering::GlobalMean => means.column_mean(),
        Centering::Uncentered => nalgebra::DVector::zeros(features.nrows()),
    };
    let between = means.column_iter().map(|m| (m - &centre).norm_squared()).sum::<f64>() / classes as f64;
    if between == 0.0 {
        return Ok(None);
    }
    Ok(Some(within / between))
}

/// `σ_K` counts as zero below this fraction of `σ_1`.
const DNC2_ZERO_TOL: f64 = 1e-12;

/// Conditioning of a `d × K` class-mean matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dnc2 {
    /// `σ_1 / σ_K`; `None` when `σ_K` vanishes (rank-deficient means) or
    /// the matrix is zero.
    pub condition: Option<f64>,
    /// `σ_1` over the smallest singular value above `rel_tol · σ_1`.
    pub condition_nonzero: Option<f64>,
    pub rank_deficient: bool,
}

pub fn dnc2_metric(class_means: &Matrix, rel_tol: f64) -> Result<Dnc2> {
    let k = class_means.ncols();
    if k == 0 {
        return Err(Error::shape("class means", "no columns"));
    }
    let s = singular_values(class_means)?;
    let top = s.first().copied().unwrap_or(0.0);
    if top <= crate::numerics::NEGLIGIBLE_NORM {
        return Ok(Dnc2 { condition: None, condition_nonzero: None, rank_deficient: true });
    }
    let sk = if k <= s.len() { s[k - 1] } else { 0.0 };
    let rank_deficient = sk <= DNC2_ZERO_TOL * top;
    let smallest = s.iter().copied().filter(|&x| x >= rel_tol * top).last().unwrap_or(top);
    Ok(Dnc2 {
        condition: (!rank_deficient).then(|| top / sk),
        condition_nonzero: Some(top / smallest),
        rank_deficient,
    })
}

/// `Mᵀ M` for a `d × K` class-mean matrix.
pub fn gram(class_means: &Matrix) -> Matrix {
    class_means.transpose() * class_means
}

/// Largest `K` for which every column permutation is tried.
pub const EXHAUSTIVE_LIMIT: usize = 10;

/// Normalized distance `‖gram − b (2I + G_π)‖_F / ‖gram‖_F` to the Gram
/// template of an intermediate SRG layer, minimized over the fitted scale
/// `b` and over the
/// permutations explored: all of them for `K ≤ 10`, and for larger `K` the
/// identity plus the best alignment found by matching the thresholded
/// off-diagonal pattern against `G_r`.
pub fn srg_pattern_match(gram: &Matrix, graph: &TriangularGraph) -> Result<f64> {
    let k = graph.classes();
    if gram.shape() != (k, k) {
        return Err(Error::domain(format!(
            "Gram matrix is {:?} but the graph of order {} has {k} vertices",
            gram.shape(),
            graph.order()
        )));
    }
    crate::numerics::ensure_finite(gram, "Gram matrix")?;
    let norm_sq = gram.norm_squared();
    if norm_sq == 0.0 {
        return Ok(0.0);
    }
    let adjacency: Vec<Vec<bool>> =
        (0..k).map(|i| (0..k).map(|j| graph.adjacency()[(i, j)] == 1.0).collect()).collect();
    let sym = (gram + gram.transpose()) * 0.5;
    let mut candidates: Vec<Vec<usize>> = vec![(0..k).collect()];
    if k <= EXHAUSTIVE_LIMIT {
        let (lo, hi) = exhaustive_extremes(&sym, &adjacency);
        candidates.extend([lo, hi]);
    } else if let Some(pi) = align_by_threshold(&sym, &adjacency) {
        candidates.push(pi);
    }
    let best = candidates
        .iter()
        .map(|pi| explicit_residual(&sym, &adjacency, pi))
        .fold(f64::INFINITY, f64::min);
    Ok((best / norm_sq).sqrt())
}

/// `‖g − b (2I + G_π)‖²` at the least-squares `b`, evaluated entrywise so
/// that exact matches give residuals at rounding level.
fn explicit_residual(g: &Matrix, adjacency: &[Vec<bool>], pi: &[usize]) -> f64 {
    let k = g.nrows();
    let template = |i: usize, j: usize| {
        if i == j {
            2.0
        } else if adjacency[pi[i]][pi[j]] {
            1.0
        } else {
            0.0
        }
    };
    let mut inner = 0.0;
    let mut norm = 0.0;
    for i in 0..k {
        for j in 0..k {
            let t = template(i, j);
            inner += g[(i, j)] * t;
            norm += t * t;
        }
    }
    let b = inner / norm;
    let mut res = 0.0;
    for i in 0..k {
        for j in 0..k {
            res += (g[(i, j)] - b * template(i, j)).powi(2);
        }
    }
    res
}

/// Permutations attaining the smallest and largest `S(π) = Σ_{i<j} g_ij
/// [π(i) ~ π(j)]`, by depth-first enumeration with incremental sums. The
/// best template fit maximizes `|tr g + S(π)|`, so one of the two wins.
fn exhaustive_extremes(g: &Matrix, adjacency: &[Vec<bool>]) -> (Vec<usize>, Vec<usize>) {
    struct Search<'a> {
        g: &'a Matrix,
        adj: &'a [Vec<bool>],
        pi: Vec<usize>,
        used: Vec<bool>,
        lo: (f64, Vec<usize>),
        hi: (f64, Vec<usize>),
    }
    impl Search<'_> {
        fn go(&mut self, depth: usize, partial: f64) {
            let k = self.pi.len();
            if depth == k {
                if partial < self.lo.0 {
                    self.lo = (partial, self.pi.clone());
                }
                if partial > self.hi.0 {
                    self.hi = (partial, self.pi.clone());
                }
                return;
            }
            for v in 0..k {
                if self.used[v] {
                    continue;
                }
                let mut add = 0.0;
                for i in 0..depth {
                    if self.adj[self.pi[i]][v] {
                        add += self.g[(i, depth)];
                    }
                }
                self.used[v] = true;
                self.pi[depth] = v;
                self.go(depth + 1, partial + add);
                self.used[v] = false;
            }
        }
    }
    let k = g.nrows();
    let mut s = Search { g, adj: adjacency, pi: vec![0; k], used: vec![false; k], lo: (f64::INFINITY, Vec::new()), hi: (f64::NEG_INFINITY, Vec::new()) };
    s.go(0, 0.0);
    (s.lo.1, s.hi.1)
}

/// Splits the off-diagonal entries at their widest gap, treats the group
/// farther from zero as edges, and searches for a graph isomorphism onto
/// `G_r` by backtracking. Gives up after a fixed budget of steps.
fn align_by_threshold(g: &Matrix, adjacency: &[Vec<bool>]) -> Option<Vec<usize>> {
    let k = g.nrows();
    let mut vals: Vec<f64> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| g[(i, j)]).collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    let (gap_at, _) = vals.windows(2).enumerate().max_by(|a, b| (a.1[1] - a.1[0]).total_cmp(&(b.1[1] - b.1[0])))?;
    let cut = 0.5 * (vals[gap_at] + vals[gap_at + 1]);
    let low_mean = vals[..=gap_at].iter().sum::<f64>() / (gap_at + 1) as f64;
    let high_mean = vals[gap_at + 1..].iter().sum::<f64>() / (vals.len() - gap_at - 1) as f64;
    let edges_high = high_mean.abs() >= low_mean.abs();
    let observed: Vec<Vec<bool>> = (0..k)
        .map(|i| (0..k).map(|j| i != j && ((g[(i, j)] > cut) == edges_high)).collect())
        .collect();

    let mut pi = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut budget = 2_000_000usize;
    fn extend(
        i: usize,
        obs: &[Vec<bool>],
        adj: &[Vec<bool>],
        pi: &mut [usize],
        used: &mut [bool],
        budget: &mut usize,
    ) -> bool {
        let k = pi.len();
        if i == k {
            return true;
        }
        for v in 0..k {
            if used[v] {
                continue;
            }
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            if (0..i).all(|j| obs[i][j] == adj[v][pi[j]]) {
                pi[i] = v;
                used[v] = true;
                if extend(i + 1, obs, adj, pi, used, budget) {
                    return true;
                }
                used[v] = false;
            }
        }
        false
    }
    extend(0, &observed, adjacency, &mut pi, &mut used, &mut budget).then_some(pi)
}

/// Settings for [`layer_reports`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub rank_tol: f64,
    pub estimator: RankEstimator,
    pub centering: Centering,
    /// Compute the SRG pattern residual when `K` is triangular.
    pub pattern: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            rank_tol: crate::numerics::DEFAULT_RANK_TOL,
            estimator: RankEstimator::default(),
            centering: Centering::default(),
            pattern: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub dnc1: Option<f64>,
    pub dnc2: Dnc2,
    /// Spectrum of the post-activation means `M_l`.
    pub spectral: SpectralReport,
    /// Spectrum of the pre-activation means `M̃_l`; `None` for `l = 1`.
    pub spectral_pre: Option<SpectralReport>,
    #[serde(skip)]
    pub gram: Matrix,
    pub srg_match_error: Option<f64>,
}

fn report_for(m: &Matrix, classes: usize, opts: &ReportOptions) -> Result<SpectralReport> {
    let count = classes.min(m.nrows()).max(1);
    rank_report_with(m, opts.rank_tol, count, opts.estimator)
}

/// One report per layer `l = 1..=L`.
pub fn layer_reports(trace: &ForwardTrace, opts: &ReportOptions) -> Result<Vec<LayerReport>> {
    let k = trace.classes;
    let graph = match crate::graphs::triangular_root(k) {
        Some(r) if opts.pattern && r >= crate::graphs::MIN_ORDER => Some(TriangularGraph::new(r)?),
        _ => None,
    };
    (1..=trace.layers())
        .map(|l| {
            let m = trace.mean(l);
            let g = gram(m);
            Ok(LayerReport {
                layer: l,
                dnc1: dnc1_metric_with(trace.features(l), k, trace.per_class, opts.centering)?,
                dnc2: dnc2_metric(m, opts.rank_tol)?,
                spectral: report_for(m, k, opts)?,
                spectral_pre: if l >= 2 { Some(report_for(trace.pre_mean(l), k, opts)?) } else { None },
                srg_match_error: match &graph {
                    Some(gr) => Some(srg_pattern_match(&g, gr)?),
                    None => None,
                },
                gram: g,
            })
        })
        .collect()
}
