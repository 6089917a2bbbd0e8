//! Full-batch gradient descent on the DUFM objective, with periodic
//! collapse diagnostics and parallel sweeps over configurations.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{block_diagonal_curve_loss, loss_curve_dnc, loss_curve_srg, srg_order};
use crate::dufm::{forward, loss_and_gradients, SmoothingConfig};
use crate::error::{Error, Result};
use crate::metrics::{dnc1_metric, dnc2_metric, layer_reports, LayerReport, ReportOptions};
use crate::numerics::{add_scaled, rank_report_with, Matrix, RankEstimator, DEFAULT_RANK_TOL};
use crate::problem::{ProblemSpec, Provenance, SolutionBundle};

/// Default condition-number threshold for declaring a DNC solution.
pub const DEFAULT_COND_TOL: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Stop once the gradient norm stays below this value…
    pub grad_tol: f64,
    /// …for this many consecutive log points.
    pub patience: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self { grad_tol: 1e-9, patience: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub spec: ProblemSpec,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Weight entries are drawn with standard deviation
    /// `init_scale / √fan_in`.
    pub init_scale: f64,
    /// Standard deviation of the entries of `H_1`, which has no fan-in;
    /// defaults to `init_scale`.
    pub h1_scale: Option<f64>,
    pub smoothing: SmoothingConfig,
    pub log_every: usize,
    pub convergence: Convergence,
    pub rank_tol: f64,
    pub estimator: RankEstimator,
}

impl Default for TrainConfig {
    /// The four-layer, ten-class setting: 50 samples per class, width 30,
    /// all weight decays 0.004, learning rate 0.5.
    fn default() -> Self {
        Self {
            spec: ProblemSpec::uniform(10, 50, 4, 30, 0.004),
            learning_rate: 0.5,
            steps: 100_000,
            seed: 0,
            init_scale: 1.0,
            h1_scale: None,
            smoothing: SmoothingConfig::RELU,
            log_every: 1000,
            convergence: Convergence::default(),
            rank_tol: DEFAULT_RANK_TOL,
            estimator: RankEstimator::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input(format!("learning rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if self.steps < 1 || self.log_every < 1 {
            return Err(Error::input("steps and log_every must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::input("init_scale must be finite and non-negative"));
        }
        if let Some(h) = self.h1_scale {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::input("h1_scale must be finite and non-negative"));
            }
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::input("rank_tol must lie in (0, 1)"));
        }
        SmoothingConfig::new(self.smoothing.epsilon)?;
        Ok(())
    }
}

/// Gaussian initialization: `W_l` entries with standard deviation
/// `init_scale / √d_l`, `H_1` entries with standard deviation `h1_scale`.
pub fn init_solution(spec: &ProblemSpec, seed: u64, init_scale: f64, h1_scale: f64) -> Result<SolutionBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |m: &mut Matrix, std: f64| -> Result<()> {
        if std == 0.0 {
            return Ok(());
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::input(e.to_string()))?;
        // column-major fill keeps the draw order independent of nalgebra internals
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)] = normal.sample(&mut rng);
            }
        }
        Ok(())
    };
    let mut bundle = SolutionBundle::zeros(spec, Provenance::Trained);
    fill(&mut bundle.h1, h1_scale)?;
    for (i, w) in bundle.weights.iter_mut().enumerate() {
        fill(w, init_scale / (spec.dim(i + 1) as f64).sqrt())?;
    }
    Ok(bundle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub total: f64,
    pub fit: f64,
    pub reg: f64,
    pub grad_norm: f64,
    /// DNC1 metric of `H_1..H_L`; NaN when undefined.
    pub dnc1: Vec<f64>,
    /// Hard rank of `M_1..M_L`.
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub config: TrainConfig,
    pub records: Vec<HistoryRecord>,
    #[serde(skip)]
    pub final_bundle: Option<SolutionBundle>,
    pub final_reports: Vec<LayerReport>,
    pub loss_dnc: f64,
    pub loss_srg: Option<f64>,
    pub converged: bool,
    pub steps_run: usize,
    /// Logged steps at which the loss rose by more than `1e-9` relative.
    pub loss_increases: usize,
}

impl TrainingHistory {
    pub fn final_record(&self) -> &HistoryRecord {
        self.records.last().expect("at least the initial record")
    }

    pub fn final_loss(&self) -> f64 {
        self.final_record().total
    }

    /// Hard ranks of the intermediate layers `2..=L-1` at the end of
    /// training.
    pub fn intermediate_ranks(&self) -> Vec<usize> {
        let ranks = &self.final_record().ranks;
        ranks[1..ranks.len() - 1].to_vec()
    }

    /// Final DNC1 metric at layer `l`.
    pub fn final_dnc1(&self, l: usize) -> f64 {
        self.final_record().dnc1[l - 1]
    }

    pub fn bundle(&self) -> &SolutionBundle {
        self.final_bundle.as_ref().expect("history produced by train carries the final bundle")
    }
}

/// Closed-form baselines: the optimal DNC loss and, when a construction
/// exists, the optimal SRG loss.
pub fn baselines(spec: &ProblemSpec) -> Result<(f64, Option<f64>)> {
    let dnc = loss_curve_dnc(spec)?.minimize()?.value;
    let srg = if spec.layers < 3 {
        None
    } else if srg_order(spec.classes).is_ok() {
        Some(loss_curve_srg(spec)?.minimize()?.value)
    } else if spec.classes >= crate::constructions::MIN_GENERAL_CLASSES {
        Some(block_diagonal_curve_loss(spec)?)
    } else {
        None
    };
    Ok((dnc, srg))
}

fn record(
    step: usize,
    trace: &crate::dufm::ForwardTrace,
    grad_norm: f64,
    config: &TrainConfig,
) -> Result<HistoryRecord> {
    let k = trace.classes;
    let mut dnc1 = Vec::with_capacity(trace.layers());
    let mut ranks = Vec::with_capacity(trace.layers());
    for l in 1..=trace.layers() {
        dnc1.push(dnc1_metric(trace.features(l), k, trace.per_class)?.unwrap_or(f64::NAN));
        let m = trace.mean(l);
        ranks.push(rank_report_with(m, config.rank_tol, 1, config.estimator)?.hard_rank);
    }
    Ok(HistoryRecord { step, total: trace.total_loss, fit: trace.fit_loss, reg: trace.reg_total(), grad_norm, dnc1, ranks })
}

/// Plain gradient descent `x ← x − η ∇L` on `H_1` and every `W_l`.
pub fn train(config: &TrainConfig) -> Result<TrainingHistory> {
    config.validate()?;
    let spec = &config.spec;
    let (loss_dnc, loss_srg) = baselines(spec)?;
    let mut bundle =
        init_solution(spec, config.seed, config.init_scale, config.h1_scale.unwrap_or(config.init_scale))?;
    let lr = config.learning_rate;
    let mut records = Vec::new();
    let mut below = 0usize;
    let mut converged = false;
    let steps_run;
    let mut loss_increases = 0;
    let mut step = 0;
    loop {
        let (trace, grad) = loss_and_gradients(&bundle, spec, config.smoothing)?;
        if !trace.total_loss.is_finite() {
            return Err(Error::Divergence { step, loss: trace.total_loss });
        }
        let grad_norm = grad.norm();
        if step % config.log_every == 0 || step == config.steps {
            let rec = record(step, &trace, grad_norm, config)?;
            if let Some(prev) = records.last() {
                let prev: &HistoryRecord = prev;
                if rec.total > prev.total + 1e-9 * prev.total.abs().max(1.0) {
                    loss_increases += 1;
                }
            }
            records.push(rec);
            if grad_norm < config.convergence.grad_tol {
                below += 1;
                if below >= config.convergence.patience {
                    converged = true;
                }
            } else {
                below = 0;
            }
        }
        if converged || step == config.steps {
            steps_run = step;
            break;
        }
        add_scaled(&mut bundle.h1, -lr, &grad.h1);
        for (w, g) in bundle.weights.iter_mut().zip(&grad.weights) {
            add_scaled(w, -lr, g);
        }
        step += 1;
    }
    let trace = forward(&bundle, spec, config.smoothing)?;
    let opts = ReportOptions { rank_tol: config.rank_tol, estimator: config.estimator, ..Default::default() };
    let final_reports = layer_reports(&trace, &opts)?;
    Ok(TrainingHistory {
        config: config.clone(),
        records,
        final_bundle: Some(bundle),
        final_reports,
        loss_dnc,
        loss_srg,
        converged,
        steps_run,
        loss_increases,
    })
}

/// True iff every layer `2..=L` has class means of full rank `K` with
/// condition number at most `cond_tol`.
pub fn detect_dnc(bundle: &SolutionBundle, spec: &ProblemSpec, rank_tol: f64, cond_tol: f64) -> Result<bool> {
    let trace = forward(bundle, spec, SmoothingConfig::RELU)?;
    let k = spec.classes;
    for l in 2..=spec.layers {
        let m = trace.mean(l);
        if m.nrows() < k {
            return Ok(false);
        }
        let report = rank_report_with(m, rank_tol, k, RankEstimator::default())?;
        if report.hard_rank != k {
            return Ok(false);
        }
        match dnc2_metric(m, rank_tol)?.condition {
            Some(c) if c <= cond_tol => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Relative spread of `λ_{W_l} ‖W_l‖²` around the first layer's value.
pub fn balance_error(bundle: &SolutionBundle, spec: &ProblemSpec) -> f64 {
    let terms: Vec<f64> = bundle
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| spec.lambda(i + 1) * w.norm_squared())
        .collect();
    let base = terms[0];
    if base == 0.0 {
        return if terms.iter().all(|&t| t == 0.0) { 0.0 } else { f64::INFINITY };
    }
    terms.iter().map(|t| (t - base).abs() / base).fold(0.0, f64::max)
}

/// One configuration of a sweep together with a label for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: usize,
    pub point: usize,
    pub label: String,
    pub repeat: usize,
    pub seed: u64,
    pub final_loss: f64,
    /// Hard ranks of `M_1..M_L`; empty for diverged runs.
    pub ranks: Vec<usize>,
    pub mean_intermediate_rank: f64,
    pub dnc_detected: bool,
    pub diverged: bool,
    pub runtime_secs: f64,
}

/// Seed of run `index` derived from the master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Settings shared by all runs of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub repeats: usize,
    pub master_seed: u64,
    pub rank_tol: f64,
    pub cond_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { repeats: 1, master_seed: 0, rank_tol: DEFAULT_RANK_TOL, cond_tol: DEFAULT_COND_TOL }
    }
}

fn run_one(point_index: usize, point: &SweepPoint, repeat: usize, run: usize, opts: &SweepOptions) -> Result<SweepRow> {
    let seed = derive_seed(opts.master_seed, run);
    let config = TrainConfig { seed, ..point.config.clone() };
    let started = Instant::now();
    let base = SweepRow {
        run,
        point: point_index,
        label: point.label.clone(),
        repeat,
        seed,
        final_loss: f64::NAN,
        ranks: Vec::new(),
        mean_intermediate_rank: f64::NAN,
        dnc_detected: false,
        diverged: false,
        runtime_secs: 0.0,
    };
    match train(&config) {
        Ok(h) => {
            let inter = h.intermediate_ranks();
            let mean = if inter.is_empty() { f64::NAN } else { inter.iter().sum::<usize>() as f64 / inter.len() as f64 };
            Ok(SweepRow {
                final_loss: h.final_loss(),
                ranks: h.final_record().ranks.clone(),
                mean_intermediate_rank: mean,
                dnc_detected: detect_dnc(h.bundle(), &config.spec, opts.rank_tol, opts.cond_tol)?,
                runtime_secs: started.elapsed().as_secs_f64(),
                ..base
            })
        }
        Err(Error::Divergence { loss, .. }) => Ok(SweepRow {
            final_loss: loss,
            diverged: true,
            runtime_secs: started.elapsed().as_secs_f64(),
            ..base
        }),
        Err(e) => Err(e),
    }
}

/// Runs every point `repeats` times in parallel. Run `i` (points outer,
/// repeats inner) uses seed `derive_seed(master_seed, i)`; rows come back
/// in run order. Divergent runs are recorded, not fatal.
pub fn sweep(points: &[SweepPoint], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(Error::input("a sweep needs at least one configuration"));
    }
    if opts.repeats == 0 {
        return Err(Error::input("repeats must be at least 1"));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..points.len())
        .flat_map(|p| (0..opts.repeats).map(move |r| (p, r)))
        .enumerate()
        .map(|(run, (p, r))| (run, p, r))
        .collect();
    jobs.par_iter().map(|&(run, p, r)| run_one(p, &points[p], r, run, opts)).collect()
}

/// Per-point aggregate of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub point: usize,
    pub label: String,
    pub runs: usize,
    pub diverged: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_rank: f64,
    pub std_rank: f64,
    pub dnc_probability: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

/// Mean and (population) standard deviation per point over non-diverged
/// runs; the DNC probability counts diverged runs as failures.
pub fn aggregate(rows: &[SweepRow]) -> Vec<SweepAggregate> {
    let mut points: Vec<usize> = rows.iter().map(|r| r.point).collect();
    points.sort_unstable();
    points.dedup();
    points
        .into_iter()
        .map(|p| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.point == p).collect();
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| !r.diverged).collect();
            let (mean_loss, std_loss) = mean_std(&ok.iter().map(|r| r.final_loss).collect::<Vec<_>>());
            let (mean_rank, std_rank) = mean_std(&ok.iter().map(|r| r.mean_intermediate_rank).collect::<Vec<_>>());
            SweepAggregate {
                point: p,
                label: group[0].label.clone(),
                runs: group.len(),
                diverged: group.len() - ok.len(),
                mean_loss,
                std_loss,
                mean_rank,
                std_rank,
                dnc_probability: group.iter().filter(|r| r.dnc_detected).count() as f64 / group.len() as f64,
            }
        })
        .collect()
}

/// Number of adjacent pairs where `xs` goes the wrong way (`increasing`
/// selects the expected direction); NaN entries are skipped.
pub fn count_inversions(xs: &[f64], increasing: bool) -> usize {
    let vals: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    vals.windows(2).filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] }).count()
}
