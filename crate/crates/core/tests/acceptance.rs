//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers to run a subset,
//! e.g. `cargo test --test acceptance -- 1 3 9`.

use std::io::Write;
use std::time::Instant;

use dnc_lab::constructions::{
    build_dnc, build_srg, compare_srg_dnc, grid_points, compare_grid, log_log_slope, loss_curve_dnc, loss_curve_srg,
    predicted_exponent, LambdaPolicy,
};
use dnc_lab::dufm::{
    dnc1_distance_bound, forward, gradients, loss, max_within_class_distance, SmoothingConfig,
};
use dnc_lab::graphs::TriangularGraph;
use dnc_lab::metrics::{gram, srg_pattern_match};
use dnc_lab::numerics::finite_difference_gradient;
use dnc_lab::trainer::{
    aggregate, count_inversions, init_solution, sweep, train, SweepOptions, SweepPoint, TrainConfig,
};
use dnc_lab::verify::{run_suite, VerifyOptions};
use dnc_lab::{Matrix, ProblemSpec, SolutionBundle};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "SRG beats DNC on the desk grid", srg_beats_dnc),
    (2, "constructions attain their closed-form curves", constructions_match_curves),
    (3, "closed forms match numerical oracles", closed_forms_match_oracles),
    (4, "loss-ratio exponent", ratio_exponent),
    (5, "ten-class four-layer training", ten_class_training),
    (6, "weight-decay and width trends", sweep_trends),
    (7, "analytic gradients", gradient_check),
    (8, "smoothed-activation machinery", smoothing_machinery),
    (9, "SRG pattern detection", pattern_detection),
];

fn desk_grid() -> Vec<ProblemSpec> {
    let mut specs = Vec::new();
    let fixed = [LambdaPolicy::Fixed { lambda: 0.004 }];
    for p in grid_points(&[4, 5, 6, 7, 8, 9], &[4, 5, 6], &fixed, 1) {
        specs.push(p.spec());
    }
    for p in grid_points(&[5, 6, 7, 8, 9], &[3], &fixed, 1) {
        specs.push(p.spec());
    }
    specs
}

fn srg_beats_dnc() -> Outcome {
    let started = Instant::now();
    let mut losses = Vec::new();
    for spec in desk_grid() {
        match compare_srg_dnc(&spec) {
            Ok(c) if c.srg_wins && c.loss_srg < c.loss_dnc => {}
            Ok(c) => losses.push(format!("K={} L={}: {:.6e} vs {:.6e}", c.classes, c.layers, c.loss_srg, c.loss_dnc)),
            Err(e) => losses.push(format!("K={} L={}: {e}", spec.classes, spec.layers)),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let n = desk_grid().len();
    if losses.is_empty() && secs < 10.0 {
        Outcome::new(true, format!("{n}/{n} configurations strictly favour SRG in {secs:.2}s"))
    } else {
        Outcome::new(false, format!("{} losing configurations ({secs:.2}s): {}", losses.len(), losses.join("; ")))
    }
}

fn constructions_match_curves() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    for spec in desk_grid() {
        let result = (|| -> dnc_lab::Result<f64> {
            let srg = loss_curve_srg(&spec)?.minimize()?;
            let dnc = loss_curve_dnc(&spec)?.minimize()?;
            let s = forward(&build_srg(&spec, srg.argmin)?, &spec, SmoothingConfig::RELU)?.total_loss;
            let d = forward(&build_dnc(&spec, dnc.argmin)?, &spec, SmoothingConfig::RELU)?.total_loss;
            Ok(((s - srg.value).abs() / srg.value).max((d - dnc.value).abs() / dnc.value))
        })();
        match result {
            Ok(dev) => worst = worst.max(dev),
            Err(e) => errors.push(format!("K={} L={}: {e}", spec.classes, spec.layers)),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let passed = errors.is_empty() && worst <= 1e-8 && secs < 30.0;
    Outcome::new(passed, format!("max relative gap {worst:.2e} (tolerance 1e-8) in {secs:.2}s {}", errors.join("; ")))
}

fn closed_forms_match_oracles() -> Outcome {
    let started = Instant::now();
    let opts = VerifyOptions { seed: 2024, instances: 50, orders: (4..=12).collect(), ..Default::default() };
    match run_suite(&opts) {
        Ok(report) => {
            let secs = started.elapsed().as_secs_f64();
            let failed: Vec<&str> = report.failed().map(|c| c.id.as_str()).collect();
            let detail = report
                .checks
                .iter()
                .map(|c| format!("{} {:.1e}", c.id, c.max_deviation))
                .collect::<Vec<_>>()
                .join(", ");
            Outcome::new(
                report.passed && secs < 60.0,
                format!("{} checks, failed [{}] in {secs:.1}s: {detail}", report.checks.len(), failed.join(", ")),
            )
        }
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn ratio_exponent() -> Outcome {
    let started = Instant::now();
    // Holding Kλ fixed keeps the DNC loss away from both the zero solution
    // and the perfect fit as K grows; see the guide's chapter on the ratio.
    let policy = LambdaPolicy::ClassScaled { base: 0.004, reference: 10 };
    let orders: Vec<usize> = (5..=12).collect();
    let mut parts = Vec::new();
    let mut passed = true;
    for layers in [4, 5] {
        let rows = match compare_grid(&grid_points(&orders, &[layers], &[policy], 1)) {
            Ok(r) => r,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let slope = match log_log_slope(&rows) {
            Ok(s) => s,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let predicted = predicted_exponent(layers);
        let rel = (slope - predicted).abs() / predicted.abs();
        passed &= rel <= 0.3;
        parts.push(format!("L={layers}: slope {slope:.4} vs {predicted:.4} ({:.0}% off)", rel * 100.0));
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(passed && secs < 10.0, format!("{} in {secs:.2}s", parts.join(", ")))
}

fn ten_class_training() -> Outcome {
    let started = Instant::now();
    let base = TrainConfig::default();
    let mut below = 0;
    let mut ranked = 0;
    let mut collapsed = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let cfg = TrainConfig { seed, ..base.clone() };
        match train(&cfg) {
            Ok(h) => {
                let inter = h.intermediate_ranks();
                let shared = inter.windows(2).all(|w| w[0] == w[1]);
                let in_range = inter.iter().all(|r| (5..=8).contains(r));
                let dnc1 = h.final_dnc1(cfg.spec.layers);
                below += usize::from(h.final_loss() < h.loss_dnc);
                ranked += usize::from(shared && in_range);
                collapsed += usize::from(dnc1 < 1e-2);
                lines.push(format!("seed {seed}: loss {:.4} ranks {inter:?} dnc1 {dnc1:.1e}", h.final_loss()));
            }
            Err(e) => lines.push(format!("seed {seed}: {e}")),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(
        below >= 8 && ranked >= 8 && collapsed >= 8,
        format!(
            "below DNC {below}/10, shared rank in [5,8] {ranked}/10, layer-L DNC1 < 1e-2 {collapsed}/10 in {secs:.0}s ({})",
            lines.join("; ")
        ),
    )
}

/// Steps per run and condition-number tolerance of the width sweep.
const WIDTH_STEPS: usize = 30_000;
const WIDTH_COND_TOL: f64 = 1.5;
/// Steps per run of the weight-decay sweep.
const DECAY_STEPS: usize = 30_000;

fn sweep_trends() -> Outcome {
    let started = Instant::now();
    // One sample per class: the trends concern the class means only, and the
    // collapsed optimum does not depend on n.
    let base = TrainConfig { log_every: 1000, ..TrainConfig::default() };

    let decays: Vec<f64> = (-10..=-4).map(|e| 2f64.powi(e)).collect();
    let decay_points: Vec<SweepPoint> = decays
        .iter()
        .map(|&l| SweepPoint {
            label: format!("lambda=2^{}", l.log2()),
            config: TrainConfig { spec: ProblemSpec::uniform(15, 1, 4, 30, l), steps: DECAY_STEPS, ..base.clone() },
        })
        .collect();
    let widths = [20usize, 40, 80, 160, 320];
    let width_points: Vec<SweepPoint> = widths
        .iter()
        .map(|&w| SweepPoint {
            label: format!("width={w}"),
            config: TrainConfig {
                spec: ProblemSpec::uniform(10, 1, 4, w, 0.004),
                steps: WIDTH_STEPS,
                // keeps the column norm of H_1 at its width-30 value
                h1_scale: Some((30.0 / w as f64).sqrt()),
                ..base.clone()
            },
        })
        .collect();

    let decay = sweep(&decay_points, &SweepOptions { repeats: 5, master_seed: 11, ..Default::default() });
    let width = sweep(
        &width_points,
        &SweepOptions { repeats: 5, master_seed: 12, cond_tol: WIDTH_COND_TOL, ..Default::default() },
    );
    let (decay, width) = match (decay, width) {
        (Ok(d), Ok(w)) => (aggregate(&d), aggregate(&w)),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, e.to_string()),
    };
    let ranks: Vec<f64> = decay.iter().map(|a| a.mean_rank).collect();
    let probs: Vec<f64> = width.iter().map(|a| a.dnc_probability).collect();
    let rank_inv = count_inversions(&ranks, false);
    let prob_inv = count_inversions(&probs, true);
    let secs = started.elapsed().as_secs_f64();
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        rank_inv <= 1 && prob_inv <= 1 && ranks.iter().all(|r| r.is_finite()),
        format!(
            "mean rank over lambda 2^-10..2^-4 [{}] ({rank_inv} inversions); DNC probability over widths {widths:?} [{}] ({prob_inv} inversions) in {secs:.0}s",
            fmt(&ranks),
            fmt(&probs)
        ),
    )
}

fn random_bundle(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> SolutionBundle {
    let mut b = init_solution(spec, rng.random(), 1.0, 1.0).expect("valid spec");
    // shift H_1 so that a good share of pre-activations is positive
    b.h1.iter_mut().for_each(|x| *x += 0.3);
    b
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let smoothing = SmoothingConfig::new(1e-3).expect("valid epsilon");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for i in 0..20 {
        let layers = 2 + i % 3;
        let classes = 2 + i % 3;
        let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=6)).collect();
        let spec = ProblemSpec {
            widths,
            lambda_w: (0..layers).map(|_| rng.random_range(1e-3..5e-2)).collect(),
            ..ProblemSpec::uniform(classes, 1 + i % 2, layers, 1, 0.01)
        };
        let bundle = random_bundle(&spec, &mut rng);
        let analytic = gradients(&bundle, &spec, smoothing).expect("finite").variables();
        let f = |vars: &[Matrix]| {
            let b = SolutionBundle::from_variables(vars.to_vec(), bundle.provenance);
            loss(&b, &spec, smoothing).expect("finite")
        };
        let numeric = finite_difference_gradient(f, &bundle.variables(), 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&x, &y) in a.iter().zip(n.iter()) {
                if x.abs() > 1e-8 {
                    worst = worst.max((x - y).abs() / x.abs());
                    checked += 1;
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-5 && secs < 30.0,
        format!("max relative error {worst:.2e} over {checked} entries of 20 bundles in {secs:.2}s"),
    )
}

/// Independent evaluation of `6ε√(D(L+1)) / ((L+1)^{L+1} λ_H ∏λ_W √n)`.
fn bound_by_hand(layers: u32, width: f64, per_class: f64, lambdas: &[f64], epsilon: f64) -> f64 {
    let depth = f64::from(layers + 1);
    let mut denominator = per_class.sqrt();
    for _ in 0..=layers {
        denominator *= depth;
    }
    for l in lambdas {
        denominator *= l;
    }
    6.0 * epsilon * (width * depth).sqrt() / denominator
}

const TRAINED_EPSILONS: [f64; 3] = [1e-1, 1e-2, 1e-3];
const DISTANCE_FLOOR: f64 = 1e-10;

fn smoothing_machinery() -> Outcome {
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut passed = true;

    // bound evaluator
    let sets: [(usize, usize, usize, Vec<f64>, f64); 3] = [
        (4, 30, 1, vec![0.004; 5], 1e-3),
        (3, 12, 4, vec![0.01, 0.02, 0.05, 0.1], 0.05),
        (2, 7, 9, vec![0.2, 0.1, 0.3], 0.5),
    ];
    let mut bound_dev: f64 = 0.0;
    for (layers, width, n, lambdas, eps) in &sets {
        let spec = ProblemSpec {
            lambda_h1: lambdas[0],
            lambda_w: lambdas[1..].to_vec(),
            ..ProblemSpec::uniform(3, *n, *layers, *width, 0.0)
        };
        let hand = bound_by_hand(*layers as u32, *width as f64, *n as f64, lambdas, *eps);
        match dnc1_distance_bound(&spec, *eps, *width) {
            Ok(b) => bound_dev = bound_dev.max((b - hand).abs() / hand),
            Err(e) => {
                passed = false;
                notes.push(e.to_string());
            }
        }
    }
    passed &= bound_dev <= 1e-12;
    notes.push(format!("bound vs hand formula {bound_dev:.1e}"));

    // smoother properties
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut smoother_ok = true;
    for _ in 0..200 {
        let eps: f64 = 10f64.powf(rng.random_range(-4.0..1.0));
        let s = SmoothingConfig::new(eps).expect("valid epsilon");
        for _ in 0..50 {
            let x = rng.random_range(0.0..eps);
            if x == 0.0 {
                continue;
            }
            let h = s.activate(x);
            let d = s.derivative(x);
            smoother_ok &= h <= x && h >= 0.0;
            smoother_ok &= d > 0.0 && d <= 4.0 / 3.0 * (1.0 + 1e-12);
        }
        // C¹ at both joints: one-sided difference quotients agree with the
        // neighbouring pieces
        let step = eps * 1e-6;
        let left0 = (s.activate(0.0) - s.activate(-step)) / step;
        let right0 = (s.activate(step) - s.activate(0.0)) / step;
        let left_eps = (s.activate(eps) - s.activate(eps - step)) / step;
        let right_eps = (s.activate(eps + step) - s.activate(eps)) / step;
        smoother_ok &= left0.abs() < 1e-5 && right0.abs() < 1e-5;
        smoother_ok &= (left_eps - 1.0).abs() < 1e-5 && (right_eps - 1.0).abs() < 1e-5;
        smoother_ok &= (s.activate(eps) - eps).abs() <= 1e-15 * eps.max(1.0);
    }
    passed &= smoother_ok;
    notes.push(format!("smoother properties {}", if smoother_ok { "hold" } else { "violated" }));

    // trained within-class distance as the smoothing shrinks; distances at
    // round-off level count as zero so that exactly collapsed runs tie
    let mut table = vec![Vec::new(); TRAINED_EPSILONS.len()];
    for seed in 0..3u64 {
        for (i, eps) in TRAINED_EPSILONS.into_iter().enumerate() {
            let cfg = TrainConfig {
                spec: ProblemSpec::uniform(4, 5, 3, 30, 0.004),
                smoothing: SmoothingConfig::new(eps).expect("valid epsilon"),
                steps: 30_000,
                seed,
                ..TrainConfig::default()
            };
            let d = train(&cfg).and_then(|h| {
                let t = forward(h.bundle(), &cfg.spec, cfg.smoothing)?;
                max_within_class_distance(&t, cfg.spec.layers)
            });
            match d {
                Ok(d) => table[i].push(if d < DISTANCE_FLOOR { 0.0 } else { d }),
                Err(e) => {
                    passed = false;
                    notes.push(format!("seed {seed}, eps {eps}: {e}"));
                }
            }
        }
    }
    let means: Vec<f64> = table.iter().map(|ds| ds.iter().sum::<f64>() / ds.len().max(1) as f64).collect();
    let inversions = count_inversions(&means, false);
    passed &= inversions <= 1;
    let fmt = |ds: &[f64]| ds.iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>().join(" ");
    notes.push(format!(
        "layer-L distance over eps 1e-1,1e-2,1e-3: mean [{}] ({inversions} inversions), per eps [{}]",
        fmt(&means),
        table.iter().map(|ds| fmt(ds)).collect::<Vec<_>>().join("; ")
    ));
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(passed, format!("{} in {secs:.0}s", notes.join("; ")))
}

fn permute_columns(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, perm[j])])
}

fn pattern_detection() -> Outcome {
    let started = Instant::now();
    let mut constructed: f64 = 0.0;
    let mut permuted: f64 = 0.0;
    let mut errors = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for r in 4..=7 {
        for layers in 3..=5 {
            let k = r * (r - 1) / 2;
            let spec = ProblemSpec::uniform(k, 1, layers, k, 0.004);
            let result = (|| -> dnc_lab::Result<()> {
                let graph = TriangularGraph::new(r)?;
                let q = loss_curve_srg(&spec)?.minimize()?.argmin.max(1.0);
                let trace = forward(&build_srg(&spec, q)?, &spec, SmoothingConfig::RELU)?;
                for l in 2..layers {
                    let g = gram(trace.mean(l));
                    constructed = constructed.max(srg_pattern_match(&g, &graph)?);
                    if k <= 10 {
                        for _ in 0..5 {
                            let mut perm: Vec<usize> = (0..k).collect();
                            perm.shuffle(&mut rng);
                            let pg = gram(&permute_columns(trace.mean(l), &perm));
                            permuted = permuted.max(srg_pattern_match(&pg, &graph)?);
                        }
                    }
                }
                Ok(())
            })();
            if let Err(e) = result {
                errors.push(format!("r={r} L={layers}: {e}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(
        errors.is_empty() && constructed <= 1e-10 && permuted <= 1e-8,
        format!("constructed {constructed:.1e} (tol 1e-10), permuted {permuted:.1e} (tol 1e-8) in {secs:.2}s {}", errors.join("; ")),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let outcome = run();
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {id} [{status}] {name}: {}", outcome.detail);
        let _ = out.flush();
        if !outcome.passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
