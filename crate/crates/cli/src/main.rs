//! `dnc-lab`: closed-form SRG and DNC constructions, loss comparisons, the
//! lemma suite, full-batch training, sweeps and report rendering.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numeric failure (including a
//! failed verification), 3 divergence.

mod values;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dnc_lab::constructions::{
    build_block_parts, build_dnc, build_srg_general, compare_grid, comparisons_to_csv, grid_points,
    gram_spectrum_final, gram_spectrum_intermediate, log_log_slope, loss_curve_dnc, loss_curve_srg,
    predicted_exponent, srg_order, Comparison, GeneralVariant, LambdaPolicy,
};
use dnc_lab::dufm::{forward, SmoothingConfig};
use dnc_lab::metrics::{gram, layer_reports, ReportOptions};
use dnc_lab::persistence::{matrix_to_csv, store_bundle, write_atomic};
use dnc_lab::report::{
    aggregates_to_csv, history_to_csv, parse_history_csv, parse_sweep_csv, plot_data, spectra_snapshot, summary,
    sweep_timing_csv, sweep_to_csv, HistoryTable, LayerSpectrum,
};
use dnc_lab::trainer::{
    aggregate, count_inversions, sweep, train, SweepOptions, SweepPoint, TrainConfig, DEFAULT_COND_TOL,
};
use dnc_lab::verify::{run_suite, CheckId, Fault, VerifyOptions};
use dnc_lab::{Error, ProblemSpec};

/// Environment variable naming the output directory when `--out` is absent.
const OUT_ENV: &str = "DNC_LAB_OUT";
const DEFAULT_OUT: &str = "dnc-lab-out";

#[derive(Parser)]
#[command(name = "dnc-lab", version, about = "Deep unconstrained features model lab")]
struct Cli {
    /// Output directory (default: $DNC_LAB_OUT, then ./dnc-lab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an SRG or DNC solution and export its matrices, Grams and losses.
    Construct(ConstructArgs),
    /// Compare the optimal SRG and DNC losses over a grid.
    Compare(CompareArgs),
    /// Check the closed forms against independent numerical oracles.
    Verify(VerifyArgs),
    /// Train with full-batch gradient descent.
    Train(TrainArgs),
    /// Train a grid of configurations with repeats.
    Sweep(SweepArgs),
    /// Re-render plot data and summaries from a stored history or sweep.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// Number of classes.
    #[arg(long = "K")]
    classes: Option<usize>,
    /// Samples per class.
    #[arg(long = "n")]
    per_class: Option<usize>,
    /// Number of layers.
    #[arg(long = "L")]
    layers: Option<usize>,
    /// Width of every layer.
    #[arg(long)]
    width: Option<usize>,
    /// Regularization weight of every layer and of the features.
    #[arg(long)]
    lambda: Option<f64>,
}

impl SpecArgs {
    /// Applies the flags on top of `base`. Changing the depth or the width
    /// makes all widths uniform; changing the depth alone keeps the first
    /// weight decay for every layer.
    fn apply(&self, base: &ProblemSpec) -> ProblemSpec {
        let mut spec = base.clone();
        if let Some(k) = self.classes {
            spec.classes = k;
        }
        if let Some(n) = self.per_class {
            spec.per_class = n;
        }
        if self.layers.is_some() || self.width.is_some() {
            let layers = self.layers.unwrap_or(spec.layers);
            let width = self.width.or(spec.widths.first().copied()).unwrap_or(spec.classes);
            spec.widths = vec![width; layers];
            if layers != spec.layers {
                let first = spec.lambda_w.first().copied().unwrap_or(spec.lambda_h1);
                spec.lambda_w = vec![first; layers];
            }
            spec.layers = layers;
        }
        if let Some(l) = self.lambda {
            spec.lambda_h1 = l;
            spec.lambda_w = vec![l; spec.layers];
        }
        spec
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Srg,
    Dnc,
}

#[derive(Args)]
struct ConstructArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, value_enum, default_value = "srg")]
    family: FamilyArg,
    /// Scale of the solution; the curve minimizer when absent.
    #[arg(long)]
    q: Option<f64>,
    /// General-K variant for non-triangular K: 1 block-diagonal, 2 truncated.
    #[arg(long)]
    variant: Option<u8>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyArg {
    /// The same weight for every K.
    Fixed,
    /// Weight `lambda · reference / K`.
    ClassScaled,
}

#[derive(Args)]
struct CompareArgs {
    /// Graph orders r (K = r(r-1)/2), e.g. `4..9` or `5,7`.
    #[arg(long = "r-range", default_value = "4..9")]
    orders: String,
    /// Depths, e.g. `4..6`.
    #[arg(long = "L-range", default_value = "4")]
    layers: String,
    /// Regularization weights, e.g. `0.004` or `0.001,0.004,0.016`.
    #[arg(long, default_value = "0.004")]
    lambda: String,
    #[arg(long, value_enum, default_value = "fixed")]
    policy: PolicyArg,
    /// Reference class count of the class-scaled policy.
    #[arg(long, default_value_t = 10)]
    reference: usize,
    /// Samples per class.
    #[arg(long = "n", default_value_t = 1)]
    per_class: usize,
    /// Fit the log-log slope of the loss ratio against K per depth.
    #[arg(long)]
    slope: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances for the matrix checks.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Graph orders, e.g. `4..12` or `5`.
    #[arg(long = "r", default_value = "4..12")]
    orders: String,
    /// Run only this check (repeatable).
    #[arg(long)]
    only: Vec<String>,
    /// Corrupt one closed form on purpose.
    #[arg(long, hide = true)]
    fault: Option<String>,
}

#[derive(Args, Clone, Default)]
struct TrainOverrides {
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    h1_scale: Option<f64>,
    /// Smoothing width of the activation (0 for the exact ReLU).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    rank_tol: Option<f64>,
}

impl TrainOverrides {
    /// Defaults, then the config file, then the flags.
    fn resolve(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Failure::input(format!("invalid config {}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        cfg.spec = self.spec.apply(&cfg.spec);
        if let Some(x) = self.lr {
            cfg.learning_rate = x;
        }
        if let Some(x) = self.steps {
            cfg.steps = x;
        }
        if let Some(x) = self.seed {
            cfg.seed = x;
        }
        if let Some(x) = self.init_scale {
            cfg.init_scale = x;
        }
        if let Some(x) = self.h1_scale {
            cfg.h1_scale = Some(x);
        }
        if let Some(x) = self.epsilon {
            cfg.smoothing = SmoothingConfig::new(x)?;
        }
        if let Some(x) = self.log_every {
            cfg.log_every = x;
        }
        if let Some(x) = self.rank_tol {
            cfg.rank_tol = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Vary {
    WeightDecay,
    Width,
    LearningRate,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long, value_enum)]
    vary: Vary,
    /// Values, e.g. `2^-10..2^-4` or `20,40,80,160,320`.
    #[arg(long)]
    values: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Condition-number threshold of DNC detection.
    #[arg(long, default_value_t = DEFAULT_COND_TOL)]
    cond_tol: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// A history CSV written by `train` or a sweep CSV written by `sweep`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Spectra snapshot for the singular-value panel (default: spectra.json
    /// next to the input).
    #[arg(long)]
    spectra: Option<PathBuf>,
}

/// A failed command: message and exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => 3,
            Error::Evaluation { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    master_seed: Option<u64>,
    version: &'a str,
    outputs: Vec<String>,
    wall_clock_secs: f64,
}

/// Collects the files a command writes, relative to the output directory.
struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn new(flag: Option<PathBuf>) -> Self {
        let dir = flag
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Self { dir, written: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        self.write(name, &(text + "\n"))
    }

    fn manifest<C: Serialize>(
        &mut self,
        command: &str,
        config: &C,
        seed: Option<u64>,
        started: Instant,
    ) -> Result<(), Failure> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let manifest = RunManifest {
            command,
            config,
            master_seed: seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = Output::new(cli.out);
    let result = match cli.command {
        Command::Construct(a) => construct(a, &mut out),
        Command::Compare(a) => compare(a, &mut out),
        Command::Verify(a) => verify(a, &mut out),
        Command::Train(a) => train_cmd(a, &mut out),
        Command::Sweep(a) => sweep_cmd(a, &mut out),
        Command::Report(a) => report(a, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[derive(Serialize)]
struct PartLoss {
    provenance: &'static str,
    classes: usize,
    weight: f64,
    q: f64,
    loss: f64,
}

#[derive(Serialize)]
struct LossBreakdown {
    family: FamilyArg,
    provenance: &'static str,
    q: Option<f64>,
    fit: f64,
    /// `W_1..W_L`, then `H_1`.
    reg: Vec<f64>,
    total: f64,
    curve: Option<f64>,
    parts: Vec<PartLoss>,
    parts_weighted_sum: Option<f64>,
}

fn construct(args: ConstructArgs, out: &mut Output) -> Result<(), Failure> {
    let started = Instant::now();
    let defaults = SpecArgs {
        classes: Some(10),
        per_class: Some(1),
        layers: Some(4),
        width: None,
        lambda: Some(0.004),
    };
    let mut spec = defaults.apply(&ProblemSpec::uniform(10, 1, 4, 10, 0.004));
    spec = args.spec.apply(&spec);
    if args.spec.width.is_none() {
        let variant2 = args.variant == Some(2) && srg_order(spec.classes).is_err();
        let width = if variant2 { dnc_lab::constructions::covering_classes(spec.classes) } else { spec.classes };
        spec.widths = vec![width; spec.layers];
    }
    spec.validate_for_construction()?;

    let triangular = srg_order(spec.classes).is_ok();
    let (bundle, q, curve) = match args.family {
        FamilyArg::Dnc => {
            let c = loss_curve_dnc(&spec)?;
            let q = match args.q {
                Some(q) => q,
                None => c.minimize()?.argmin,
            };
            (build_dnc(&spec, q)?, Some(q), Some(c.evaluate(q)))
        }
        FamilyArg::Srg if triangular => {
            let c = loss_curve_srg(&spec)?;
            let q = match args.q {
                Some(q) => q,
                None => c.minimize()?.argmin,
            };
            (dnc_lab::constructions::build_srg(&spec, q)?, Some(q), Some(c.evaluate(q)))
        }
        FamilyArg::Srg => {
            let variant = match args.variant {
                Some(v) => GeneralVariant::from_index(v)?,
                None => {
                    return Err(Failure::input(format!(
                        "K = {} is not a triangular number; pass --variant 1 or --variant 2",
                        spec.classes
                    )))
                }
            };
            (build_srg_general(&spec, variant, args.q, None)?, args.q, None)
        }
    };

    let trace = forward(&bundle, &spec, SmoothingConfig::RELU)?;
    let mut parts = Vec::new();
    let mut weighted = None;
    if bundle.provenance == dnc_lab::Provenance::SrgGeneralBlockdiag {
        let built = build_block_parts(&spec, args.q, None)?;
        weighted = Some(built.iter().map(|p| p.weight * p.loss).sum::<f64>());
        parts = built
            .iter()
            .map(|p| PartLoss {
                provenance: p.provenance.as_str(),
                classes: p.spec.classes,
                weight: p.weight,
                q: p.q,
                loss: p.loss,
            })
            .collect();
    }

    out.write("matrices/H1.csv", &matrix_to_csv(&bundle.h1))?;
    for (i, w) in bundle.weights.iter().enumerate() {
        out.write(&format!("matrices/W{}.csv", i + 1), &matrix_to_csv(w))?;
    }
    for l in 1..=spec.layers {
        out.write(&format!("means/M{l}.csv"), &matrix_to_csv(trace.mean(l)))?;
        out.write(&format!("gram/M{l}.csv"), &matrix_to_csv(&gram(trace.mean(l))))?;
    }
    for l in 2..=spec.layers + 1 {
        out.write(&format!("pre_means/M{l}.csv"), &matrix_to_csv(trace.pre_mean(l)))?;
    }
    let opts = ReportOptions { pattern: triangular, ..Default::default() };
    let reports = layer_reports(&trace, &opts)?;
    out.write_json("spectra.json", &reports)?;
    let breakdown = LossBreakdown {
        family: args.family,
        provenance: bundle.provenance.as_str(),
        q,
        fit: trace.fit_loss,
        reg: trace.reg_losses.clone(),
        total: trace.total_loss,
        curve,
        parts,
        parts_weighted_sum: weighted,
    };
    out.write_json("loss.json", &breakdown)?;
    store_bundle(&bundle, &spec, &out.dir.join("bundle.json"))?;
    out.written.push("bundle.json".into());
    out.manifest("construct", &spec, None, started)?;

    println!("provenance: {}", bundle.provenance.as_str());
    if let Some(q) = q {
        println!("q: {q:.12e}");
    }
    println!("loss: {:.12e} (fit {:.6e}, reg {:.6e})", trace.total_loss, trace.fit_loss, trace.reg_total());
    if let Some(w) = weighted {
        println!("parts: weighted sum {w:.12e}, difference {:.3e}", (w - trace.total_loss).abs());
    }
    for r in &reports {
        let pre = r.spectral_pre.as_ref().map(|s| s.hard_rank.to_string()).unwrap_or_else(|| "-".into());
        println!("layer {}: rank(M) {}  rank(M~) {}", r.layer, r.spectral.hard_rank, pre);
    }
    println!("written to {}", out.dir.display());
    Ok(())
}

#[derive(Serialize)]
struct SlopeFit {
    layers: usize,
    policy: LambdaPolicy,
    slope: f64,
    predicted: f64,
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    rows: &'a [Comparison],
    slopes: &'a [SlopeFit],
}

fn compare(args: CompareArgs, out: &mut Output) -> Result<(), Failure> {
    let started = Instant::now();
    let orders = values::parse_usize_list(&args.orders).map_err(Failure::input)?;
    let layers = values::parse_usize_list(&args.layers).map_err(Failure::input)?;
    let lambdas = values::parse_f64_list(&args.lambda).map_err(Failure::input)?;
    let policies: Vec<LambdaPolicy> = lambdas
        .iter()
        .map(|&l| match args.policy {
            PolicyArg::Fixed => LambdaPolicy::Fixed { lambda: l },
            PolicyArg::ClassScaled => LambdaPolicy::ClassScaled { base: l, reference: args.reference },
        })
        .collect();
    let points = grid_points(&orders, &layers, &policies, args.per_class);
    let rows = compare_grid(&points)?;
    let mut slopes = Vec::new();
    if args.slope {
        for &policy in &policies {
            for &l in &layers {
                let sel: Vec<Comparison> = rows
                    .iter()
                    .zip(&points)
                    .filter(|(_, p)| p.layers == l && p.lambda == policy)
                    .map(|(c, _)| c.clone())
                    .collect();
                slopes.push(SlopeFit { layers: l, policy, slope: log_log_slope(&sel)?, predicted: predicted_exponent(l) });
            }
        }
    }
    out.write("compare.csv", &comparisons_to_csv(&rows))?;
    out.write_json("compare.json", &CompareOutput { rows: &rows, slopes: &slopes })?;
    out.manifest("compare", &points, None, started)?;

    for c in &rows {
        let mut flags = Vec::new();
        if !c.theorem_regime {
            flags.push("outside regime");
        }
        if c.degenerate {
            flags.push("degenerate");
        }
        println!(
            "K={:>3} L={} lambda={:.3e}  srg {:.6e}  dnc {:.6e}  ratio {:.4}  {}{}",
            c.classes,
            c.layers,
            c.lambda,
            c.loss_srg,
            c.loss_dnc,
            c.ratio,
            if c.srg_wins { "srg wins" } else { "dnc wins" },
            if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(", ")) }
        );
    }
    for s in &slopes {
        println!("L={}: slope {:.4} (predicted {:.4})", s.layers, s.slope, s.predicted);
    }
    Ok(())
}

fn verify(args: VerifyArgs, out: &mut Output) -> Result<(), Failure> {
    let orders = values::parse_usize_list(&args.orders).map_err(Failure::input)?;
    let only = args
        .only
        .iter()
        .map(|s| s.parse::<CheckId>())
        .collect::<Result<Vec<_>, _>>()?;
    let fault = args.fault.as_deref().map(str::parse::<Fault>).transpose()?;
    let opts = VerifyOptions { seed: args.seed, instances: args.instances, orders: orders.clone(), only, fault };
    let report = run_suite(&opts)?;
    out.write_json("verify.json", &report)?;

    let spectra_wanted = opts.only.is_empty()
        || opts.only.iter().any(|c| matches!(c, CheckId::GramIntermediate | CheckId::GramFinal));
    if orders.len() == 1 && spectra_wanted {
        let r = orders[0];
        if opts.only.is_empty() || opts.only.contains(&CheckId::GramIntermediate) {
            println!("intermediate Gram spectrum, r = {r}, per unit alpha:");
            for e in gram_spectrum_intermediate(r, 1.0)? {
                println!("  {:.12} x{}", e.value, e.multiplicity);
            }
        }
        if opts.only.is_empty() || opts.only.contains(&CheckId::GramFinal) {
            println!("last-layer Gram spectrum, r = {r}, per unit alpha:");
            for e in gram_spectrum_final(r, 1.0)? {
                println!("  {:.12} x{}", e.value, e.multiplicity);
            }
        }
    }
    for c in &report.checks {
        println!(
            "{:<20} {:>4} instances  max deviation {:.3e}  tolerance {:.0e}  {}",
            c.id.as_str(),
            c.instances,
            c.max_deviation,
            c.tolerance,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        let names: Vec<&str> = report.failed().map(|c| c.id.as_str()).collect();
        Err(Failure::numeric(format!("verification failed: {}", names.join(", "))))
    }
}

fn write_plots(out: &mut Output, table: &HistoryTable, spectra: Option<&[LayerSpectrum]>) -> Result<(), Failure> {
    let plots = plot_data(table, spectra);
    for (name, contents) in plots.files() {
        out.write(name, contents)?;
    }
    Ok(())
}

fn train_cmd(args: TrainArgs, out: &mut Output) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = args.train.resolve()?;
    let history = match train(&cfg) {
        Ok(h) => h,
        Err(e) => {
            if let Error::Divergence { .. } = e {
                out.manifest("train", &cfg, Some(cfg.seed), started)?;
            }
            return Err(e.into());
        }
    };
    let table = HistoryTable::from_history(&history);
    let spectra = spectra_snapshot(&history.final_reports);
    out.write("history.csv", &history_to_csv(&table))?;
    out.write_json("history.json", &history)?;
    out.write_json("spectra.json", &spectra)?;
    store_bundle(history.bundle(), &cfg.spec, &out.dir.join("bundle.json"))?;
    out.written.push("bundle.json".into());
    write_plots(out, &table, Some(&spectra))?;
    out.manifest("train", &cfg, Some(cfg.seed), started)?;
    print!("{}", summary(&table));
    println!("written to {}", out.dir.display());
    Ok(())
}

/// Configuration recorded in the manifest of a sweep.
#[derive(Serialize)]
struct SweepManifest<'a> {
    vary: Vary,
    values: &'a [f64],
    repeats: usize,
    cond_tol: f64,
    base: &'a TrainConfig,
}

fn sweep_cmd(args: SweepArgs, out: &mut Output) -> Result<(), Failure> {
    let started = Instant::now();
    let base = args.train.resolve()?;
    let values = values::parse_f64_list(&args.values).map_err(Failure::input)?;
    let base_width = base.spec.widths.first().copied().unwrap_or(base.spec.classes);
    let base_h1 = base.h1_scale.unwrap_or(base.init_scale);
    let mut points = Vec::with_capacity(values.len());
    for &v in &values {
        let mut cfg = base.clone();
        let label = match args.vary {
            Vary::WeightDecay => {
                cfg.spec.lambda_h1 = v;
                cfg.spec.lambda_w = vec![v; cfg.spec.layers];
                format!("lambda={v:e}")
            }
            Vary::Width => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Failure::input(format!("width must be a positive integer, got {v}")));
                }
                let w = v as usize;
                cfg.spec.widths = vec![w; cfg.spec.layers];
                // Keeps the column norm of H_1 independent of the width.
                cfg.h1_scale = Some(base_h1 * (base_width as f64 / w as f64).sqrt());
                format!("width={w}")
            }
            Vary::LearningRate => {
                cfg.learning_rate = v;
                format!("lr={v:e}")
            }
        };
        cfg.validate()?;
        points.push(SweepPoint { label, config: cfg });
    }
    let opts = SweepOptions { repeats: args.repeats, master_seed: base.seed, rank_tol: base.rank_tol, cond_tol: args.cond_tol };
    let rows = sweep(&points, &opts)?;
    let aggs = aggregate(&rows);
    out.write("sweep.csv", &sweep_to_csv(&rows)?)?;
    out.write("sweep_aggregate.csv", &aggregates_to_csv(&aggs)?)?;
    out.write("sweep_timing.csv", &sweep_timing_csv(&rows))?;
    let manifest = SweepManifest { vary: args.vary, values: &values, repeats: args.repeats, cond_tol: args.cond_tol, base: &base };
    out.manifest("sweep", &manifest, Some(base.seed), started)?;

    for a in &aggs {
        println!(
            "{:<18} loss {:.6e} ± {:.2e}  rank {:.2} ± {:.2}  P(dnc) {:.2}  diverged {}/{}",
            a.label, a.mean_loss, a.std_loss, a.mean_rank, a.std_rank, a.dnc_probability, a.diverged, a.runs
        );
    }
    let ranks: Vec<f64> = aggs.iter().map(|a| a.mean_rank).collect();
    let losses: Vec<f64> = aggs.iter().map(|a| a.mean_loss).collect();
    println!("inversions: rank {}  loss {}", count_inversions(&ranks, true), count_inversions(&losses, true));
    println!("written to {}", out.dir.display());
    Ok(())
}

fn looks_like_sweep(text: &str) -> bool {
    text.lines().find(|l| !l.starts_with('#')).is_some_and(|h| h.starts_with("run,"))
}

fn report(args: ReportArgs, out: &mut Output) -> Result<(), Failure> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.input.display())))?;
    if looks_like_sweep(&text) {
        let rows = parse_sweep_csv(&text)?;
        let aggs = aggregate(&rows);
        out.write("sweep_aggregate.csv", &aggregates_to_csv(&aggs)?)?;
        out.manifest("report", &args.input, None, started)?;
        println!("{} runs, {} points", rows.len(), aggs.len());
    } else {
        let table = parse_history_csv(&text)?;
        let spectra_path = args.spectra.clone().or_else(|| sibling(&args.input, "spectra.json"));
        let spectra: Option<Vec<LayerSpectrum>> = match spectra_path {
            Some(p) if p.exists() => {
                let text = std::fs::read_to_string(&p).map_err(Error::from)?;
                Some(serde_json::from_str(&text).map_err(|e| Failure::input(format!("invalid {}: {e}", p.display())))?)
            }
            _ => None,
        };
        write_plots(out, &table, spectra.as_deref())?;
        out.manifest("report", &args.input, None, started)?;
        print!("{}", summary(&table));
    }
    println!("written to {}", out.dir.display());
    Ok(())
}

fn sibling(path: &Path, name: &str) -> Option<PathBuf> {
    path.parent().map(|d| d.join(name))
}
