//! Numerical certification of the closed forms the constructions rely on.
//!
//! Every check compares a closed form against an oracle that does not use
//! it: pseudoinverse least-norm solutions, a symmetric eigensolver,
//! gradient descent on the ridge objective and alternating minimum-norm
//! updates for the factorization problems. Test matrices are rebuilt here
//! from the graph definition rather than taken from the builders.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constructions::{
    expand_spectrum, gram_spectrum_final, gram_spectrum_intermediate, intermediate_weight_norm,
    min_norm_row_value, penultimate_weight_norm, ridge_optimal_last_layer, ridge_value_from_spectrum,
    schatten_factorization, variational_split,
};
use crate::error::{Error, Result};
use crate::graphs::{SpectrumEntry, TriangularGraph};
use crate::numerics::{frobenius_sq, pseudoinverse, relu, singular_values, symmetric_eigen, Matrix};

const PINV_TOL: f64 = 1e-12;
/// How far an iterative oracle may undercut a claimed minimum.
const DESCENT_SLACK: f64 = 1e-6;

/// The individual checks of the suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckId {
    /// Minimum-norm row value under a triangular-graph constraint.
    MinNormRow,
    /// `‖W_l‖²` between two intermediate SRG layers.
    WeightIntermediate,
    /// `‖W_{L-1}‖²` into the last SRG layer.
    WeightPenultimate,
    /// Gram spectrum of an intermediate SRG layer.
    GramIntermediate,
    /// Gram spectrum of the last SRG layer.
    GramFinal,
    /// Optimal ridge value for the last layer.
    Ridge,
    /// Two-factor variational form of the nuclear norm.
    Variational,
    /// Balanced deep factorization cost.
    Schatten,
}

impl CheckId {
    pub const ALL: [CheckId; 8] = [
        CheckId::MinNormRow,
        CheckId::WeightIntermediate,
        CheckId::WeightPenultimate,
        CheckId::GramIntermediate,
        CheckId::GramFinal,
        CheckId::Ridge,
        CheckId::Variational,
        CheckId::Schatten,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckId::MinNormRow => "min-norm-row",
            CheckId::WeightIntermediate => "weight-intermediate",
            CheckId::WeightPenultimate => "weight-penultimate",
            CheckId::GramIntermediate => "gram-intermediate",
            CheckId::GramFinal => "gram-final",
            CheckId::Ridge => "ridge",
            CheckId::Variational => "variational",
            CheckId::Schatten => "schatten",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            CheckId::MinNormRow => "minimum-norm row value vs pseudoinverse solution",
            CheckId::WeightIntermediate => "intermediate weight norm vs pseudoinverse map",
            CheckId::WeightPenultimate => "penultimate weight norm vs pseudoinverse map",
            CheckId::GramIntermediate => "intermediate Gram spectrum vs eigensolver",
            CheckId::GramFinal => "last-layer Gram spectrum vs eigensolver",
            CheckId::Ridge => "ridge optimum vs gradient descent",
            CheckId::Variational => "nuclear-norm split vs alternating minimization",
            CheckId::Schatten => "balanced factorization vs alternating minimization",
        }
    }

    /// Largest deviation accepted.
    pub fn tolerance(&self) -> f64 {
        match self {
            CheckId::MinNormRow | CheckId::WeightIntermediate | CheckId::WeightPenultimate => 1e-8,
            CheckId::GramIntermediate | CheckId::GramFinal => 1e-9,
            CheckId::Ridge | CheckId::Schatten => 1e-6,
            CheckId::Variational => 1e-8,
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = CheckId::ALL.iter().map(|c| c.as_str()).collect();
                Error::input(format!("unknown check {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Deliberate corruptions of a closed form, used to show that the suite
/// catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Moves one eigenvalue from the zero eigenspace into the middle one of
    /// the intermediate Gram spectrum.
    GramIntermediateMultiplicity,
    /// Scales the ridge closed form by `1 + 1e-3`.
    RidgeScale,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram-intermediate-multiplicity" => Ok(Fault::GramIntermediateMultiplicity),
            "ridge-scale" => Ok(Fault::RidgeScale),
            _ => Err(Error::input(format!(
                "unknown fault {s:?}; expected gram-intermediate-multiplicity or ridge-scale"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances for the matrix checks.
    pub instances: usize,
    /// Graph orders for the graph checks.
    pub orders: Vec<usize>,
    /// Run only these checks (all when empty).
    pub only: Vec<CheckId>,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, instances: 50, orders: (4..=12).collect(), only: Vec::new(), fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: CheckId,
    pub description: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Instances whose deviation exceeded the tolerance.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max)
    }
}

struct Tally {
    id: CheckId,
    instances: usize,
    max_deviation: f64,
    failures: Vec<String>,
}

impl Tally {
    fn new(id: CheckId) -> Self {
        Self { id, instances: 0, max_deviation: 0.0, failures: Vec::new() }
    }

    fn record(&mut self, instance: String, deviation: f64) {
        self.instances += 1;
        // NaN counts as a failure.
        if !(deviation <= self.id.tolerance()) {
            self.failures.push(format!("{instance}: deviation {deviation:.3e}"));
        }
        self.max_deviation = if deviation.is_nan() { f64::NAN } else { self.max_deviation.max(deviation) };
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            id: self.id,
            description: self.id.description().to_string(),
            instances: self.instances,
            max_deviation: self.max_deviation,
            tolerance: self.id.tolerance(),
            passed: self.failures.is_empty() && self.instances > 0,
            failures: self.failures,
        }
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `T_r` straight from its definition: column `{a, b}` carries `1/√(r-1)`
/// in rows `a` and `b`, columns in lexicographic order.
fn incidence(r: usize) -> Matrix {
    let mut t = Matrix::zeros(r, r * (r - 1) / 2);
    let v = 1.0 / ((r - 1) as f64).sqrt();
    let mut col = 0;
    for a in 0..r {
        for b in a + 1..r {
            t[(a, col)] = v;
            t[(b, col)] = v;
            col += 1;
        }
    }
    t
}

/// Pre-activation last-layer means: rows are `√α` times the normalized
/// rows of `A T_r`, where row `{a, b}` of `A` is `-1` at `a, b` and `+1`
/// elsewhere.
fn last_pre_means(r: usize, alpha: f64) -> Matrix {
    let t = incidence(r);
    let k = t.ncols();
    let mut a = Matrix::from_element(k, r, 1.0);
    let mut row = 0;
    for i in 0..r {
        for j in i + 1..r {
            a[(row, i)] = -1.0;
            a[(row, j)] = -1.0;
            row += 1;
        }
    }
    let mut m = a * t;
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    m * alpha.sqrt()
}

fn spectrum_deviation(spectrum: &[SpectrumEntry], gram: &Matrix) -> Result<f64> {
    let expected = expand_spectrum(spectrum);
    let (mut eig, _) = symmetric_eigen(gram)?;
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig.len() != expected.len() {
        return Ok(f64::INFINITY);
    }
    Ok(eig.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn inject(fault: Option<Fault>, id: CheckId, mut spectrum: Vec<SpectrumEntry>) -> Vec<SpectrumEntry> {
    if fault == Some(Fault::GramIntermediateMultiplicity) && id == CheckId::GramIntermediate {
        spectrum[1].multiplicity += 1;
        spectrum[2].multiplicity -= 1;
    }
    spectrum
}

fn check_min_norm_row(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut tally = Tally::new(CheckId::MinNormRow);
    for &r in &opts.orders {
        let graph = TriangularGraph::new(r)?;
        let t = incidence(r);
        for trial in 0..3 {
            let alpha: f64 = rng.random_range(0.1..5.0);
            // Canonical A: √α times the first r unit vectors in r+2 rows.
            let mut a = Matrix::zeros(r + 2, r);
            for i in 0..r {
                a[(i, i)] = alpha.sqrt();
            }
            let z = gaussian(rng, t.ncols(), 1);
            let constraint = (&a * &t).transpose();
            let w = pseudoinverse(&constraint, PINV_TOL)? * &z;
            let oracle = frobenius_sq(&w);
            let value = min_norm_row_value(z.as_slice(), alpha, &graph)?;
            tally.record(format!("r={r} trial={trial}"), rel_dev(value, oracle));
        }
    }
    Ok(tally.finish())
}

fn check_weights(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<(CheckResult, CheckResult)> {
    let mut inter = Tally::new(CheckId::WeightIntermediate);
    let mut pen = Tally::new(CheckId::WeightPenultimate);
    for &r in &opts.orders {
        let t = incidence(r);
        let (a0, a1): (f64, f64) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let m = &t * a0.sqrt();
        let pinv = pseudoinverse(&m, PINV_TOL)?;
        let w = (&t * a1.sqrt()) * &pinv;
        inter.record(format!("r={r}"), rel_dev(intermediate_weight_norm(a0, a1, r)?, frobenius_sq(&w)));
        let w = last_pre_means(r, a1) * &pinv;
        pen.record(format!("r={r}"), rel_dev(penultimate_weight_norm(a0, a1, r)?, frobenius_sq(&w)));
    }
    Ok((inter.finish(), pen.finish()))
}

fn check_grams(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<(CheckResult, CheckResult)> {
    let mut inter = Tally::new(CheckId::GramIntermediate);
    let mut fin = Tally::new(CheckId::GramFinal);
    for &r in &opts.orders {
        let alpha: f64 = rng.random_range(0.5..2.0);
        let m = incidence(r) * alpha.sqrt();
        let spectrum = inject(opts.fault, CheckId::GramIntermediate, gram_spectrum_intermediate(r, alpha)?);
        inter.record(format!("r={r}"), spectrum_deviation(&spectrum, &(m.transpose() * &m))?);
        let m = relu(&last_pre_means(r, alpha));
        let spectrum = gram_spectrum_final(r, alpha)?;
        fin.record(format!("r={r}"), spectrum_deviation(&spectrum, &(m.transpose() * &m))?);
    }
    Ok((inter.finish(), fin.finish()))
}

/// Gradient descent on the ridge objective with step `1/Lipschitz` until
/// the gradient vanishes.
fn ridge_by_descent(means: &Matrix, lambda: f64) -> f64 {
    let k = means.ncols() as f64;
    let top = singular_values(means).ok().and_then(|s| s.first().copied()).unwrap_or(0.0);
    let step = 1.0 / (top * top / k + lambda);
    let target = Matrix::identity(means.ncols(), means.ncols());
    let mut w = Matrix::zeros(means.ncols(), means.nrows());
    for _ in 0..200_000 {
        let grad = (&w * means - &target) * means.transpose() / k + &w * lambda;
        if grad.norm() < 1e-13 {
            break;
        }
        w -= grad * step;
    }
    let fit = &w * means - target;
    frobenius_sq(&fit) / (2.0 * k) + 0.5 * lambda * frobenius_sq(&w)
}

fn check_ridge(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut tally = Tally::new(CheckId::Ridge);
    let scale = if opts.fault == Some(Fault::RidgeScale) { 1.0 + 1e-3 } else { 1.0 };
    for i in 0..opts.instances {
        let (d, k) = (rng.random_range(2..14), rng.random_range(2..10));
        let lambda = rng.random_range(0.05..0.5);
        let means = gaussian(rng, d, k);
        let (_, value) = ridge_optimal_last_layer(&means, lambda)?;
        let s2: Vec<f64> = singular_values(&means)?.iter().map(|s| s * s).collect();
        let closed = ridge_value_from_spectrum(&s2, k, lambda) * scale;
        let oracle = ridge_by_descent(&means, lambda);
        let dev = (closed - oracle).abs().max((value - oracle).abs());
        tally.record(format!("instance {i} ({d}x{k}, lambda={lambda:.3})"), dev);
    }
    Ok(tally.finish())
}

/// Block-coordinate descent over a factor chain: each factor in turn is
/// replaced by the minimum-norm factor that keeps the product equal to `c`.
/// Starts from a random feasible chain and never increases the cost.
fn factor_chain_descent(c: &Matrix, lambdas: &[f64], rng: &mut ChaCha8Rng, sweeps: usize) -> Result<f64> {
    let m = c.nrows();
    let depth = lambdas.len();
    let mut factors: Vec<Matrix> = (0..depth - 1).map(|_| gaussian(rng, m, m)).collect();
    let prefix = factors.iter().fold(Matrix::identity(m, m), |acc, f| acc * f);
    factors.push(pseudoinverse(&prefix, PINV_TOL)? * c);
    let cost = |fs: &[Matrix]| fs.iter().zip(lambdas).map(|(f, l)| 0.5 * l * frobenius_sq(f)).sum::<f64>();
    for _ in 0..sweeps {
        for i in 0..depth {
            let left = factors[..i].iter().fold(Matrix::identity(m, m), |acc, f| acc * f);
            let right = factors[i + 1..].iter().fold(Matrix::identity(factors[i].ncols(), factors[i].ncols()), |acc, f| acc * f);
            factors[i] = pseudoinverse(&left, PINV_TOL)? * c * pseudoinverse(&right, PINV_TOL)?;
        }
    }
    Ok(cost(&factors))
}

fn check_variational(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut tally = Tally::new(CheckId::Variational);
    for i in 0..opts.instances {
        let (rows, cols) = (rng.random_range(2..8), rng.random_range(2..8));
        let (la, lb) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let c = gaussian(rng, rows, cols);
        let split = variational_split(&c, la, lb)?;
        let nuclear: f64 = singular_values(&c)?.iter().sum();
        let closed = (la * lb).sqrt() * nuclear;
        let product_err = (&split.a * &split.b - &c).amax();
        let descent = factor_chain_descent(&c, &[la, lb], rng, 2000)?;
        // Being beaten by descent is allowed up to DESCENT_SLACK, rescaled so
        // that exactly that much counts as one tolerance.
        let beaten_by = (split.value - descent).max(0.0);
        let dev = rel_dev(split.value, closed)
            .max(product_err)
            .max(beaten_by * CheckId::Variational.tolerance() / DESCENT_SLACK);
        tally.record(format!("instance {i} ({rows}x{cols})"), dev);
    }
    Ok(tally.finish())
}

fn check_schatten(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut tally = Tally::new(CheckId::Schatten);
    let runs = (opts.instances / 10).max(1);
    for i in 0..runs {
        // Rank-2 target, depth 4.
        let c = gaussian(rng, 5, 2) * gaussian(rng, 2, 4);
        let lambdas: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..2.0)).collect();
        let f = schatten_factorization(&c, &lambdas)?;
        let product = f.factors.iter().skip(1).fold(f.factors[0].clone(), |acc, m| acc * m);
        let mut dev = (product - &c).amax();
        for _ in 0..5 {
            let descent = factor_chain_descent(&c, &lambdas, rng, 300)?;
            dev = dev.max(f.cost - descent);
        }
        tally.record(format!("instance {i}"), dev);
    }
    Ok(tally.finish())
}

/// Runs the selected checks. Every check draws from its own stream derived
/// from `seed`, so selecting a subset does not change the instances.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.orders.iter().any(|&r| r < crate::graphs::MIN_ORDER) {
        return Err(Error::domain(format!("graph orders must be at least {}", crate::graphs::MIN_ORDER)));
    }
    if opts.instances == 0 {
        return Err(Error::input("instances must be at least 1"));
    }
    let wanted = |id: CheckId| opts.only.is_empty() || opts.only.contains(&id);
    let stream = |salt: u64| ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut checks = Vec::new();
    if wanted(CheckId::MinNormRow) {
        checks.push(check_min_norm_row(opts, &mut stream(1))?);
    }
    if wanted(CheckId::WeightIntermediate) || wanted(CheckId::WeightPenultimate) {
        let (a, b) = check_weights(opts, &mut stream(2))?;
        checks.extend([a, b].into_iter().filter(|c| wanted(c.id)));
    }
    if wanted(CheckId::GramIntermediate) || wanted(CheckId::GramFinal) {
        let (a, b) = check_grams(opts, &mut stream(3))?;
        checks.extend([a, b].into_iter().filter(|c| wanted(c.id)));
    }
    if wanted(CheckId::Ridge) {
        checks.push(check_ridge(opts, &mut stream(4))?);
    }
    if wanted(CheckId::Variational) {
        checks.push(check_variational(opts, &mut stream(5))?);
    }
    if wanted(CheckId::Schatten) {
        checks.push(check_schatten(opts, &mut stream(6))?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { options: opts.clone(), checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { instances: 10, orders: vec![4, 5, 7], ..Default::default() }
    }

    #[test]
    fn quick_suite_passes() {
        let report = run_suite(&quick()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{} {:?}", c.id, c.failures);
        }
        assert_eq!(report.checks.len(), CheckId::ALL.len());
    }

    #[test]
    fn multiplicity_fault_is_caught_by_name() {
        let opts = VerifyOptions { fault: Some(Fault::GramIntermediateMultiplicity), ..quick() };
        let report = run_suite(&opts).unwrap();
        let failed: Vec<CheckId> = report.failed().map(|c| c.id).collect();
        assert_eq!(failed, vec![CheckId::GramIntermediate]);
    }

    #[test]
    fn only_restricts_and_keeps_instances() {
        let all = run_suite(&quick()).unwrap();
        let one = run_suite(&VerifyOptions { only: vec![CheckId::GramFinal], ..quick() }).unwrap();
        assert_eq!(one.checks.len(), 1);
        let same = all.checks.iter().find(|c| c.id == CheckId::GramFinal).unwrap();
        assert_eq!(&one.checks[0], same);
    }

    #[test]
    fn names_round_trip() {
        for id in CheckId::ALL {
            assert_eq!(id.as_str().parse::<CheckId>().unwrap(), id);
        }
        assert!("lemma".parse::<CheckId>().is_err());
    }

    #[test]
    fn reference_matrices_match_the_graph_module() {
        for r in 4..8 {
            let g = TriangularGraph::new(r).unwrap();
            assert!((incidence(r) - g.incidence()).amax() < 1e-15);
        }
    }
}
