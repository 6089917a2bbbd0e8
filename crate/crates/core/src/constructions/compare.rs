//! SRG against DNC at the optimum of each closed-form curve, over single
//! specs and grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::alpha::srg_order;
use super::builders::block_diagonal_curve_loss;
use super::curves::{loss_curve_dnc, loss_curve_srg};
use crate::error::{Error, Result};
use crate::graphs::{binomial2, triangular_root};
use crate::problem::ProblemSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub classes: usize,
    /// Order of the complete graph; `None` for non-triangular `K`.
    pub order: Option<usize>,
    pub layers: usize,
    pub lambda: f64,
    pub per_class: usize,
    /// `None` when the general-`K` block construction was used.
    pub q_srg: Option<f64>,
    pub q_dnc: f64,
    pub loss_srg: f64,
    pub loss_dnc: f64,
    pub ratio: f64,
    pub srg_wins: bool,
    /// `(K ≥ 6 and L ≥ 4) or (K ≥ 10 and L = 3)`.
    pub theorem_regime: bool,
    /// Both curves are minimized at `q = 0`, so both families collapse to
    /// the zero solution and tie at `1/2`.
    pub degenerate: bool,
}

pub fn in_theorem_regime(classes: usize, layers: usize) -> bool {
    (classes >= 6 && layers >= 4) || (classes >= 10 && layers == 3)
}

/// Minimizes both curves and compares their values.
pub fn compare_srg_dnc(spec: &ProblemSpec) -> Result<Comparison> {
    spec.validate_for_construction()?;
    let dnc = loss_curve_dnc(spec)?.minimize()?;
    let (order, q_srg, loss_srg) = if srg_order(spec.classes).is_ok() {
        let m = loss_curve_srg(spec)?.minimize()?;
        (triangular_root(spec.classes), Some(m.argmin), m.value)
    } else {
        (None, None, block_diagonal_curve_loss(spec)?)
    };
    Ok(Comparison {
        classes: spec.classes,
        order,
        layers: spec.layers,
        lambda: spec.lambda(spec.layers),
        per_class: spec.per_class,
        q_srg,
        q_dnc: dnc.argmin,
        loss_srg,
        loss_dnc: dnc.value,
        ratio: loss_srg / dnc.value,
        srg_wins: loss_srg < dnc.value,
        theorem_regime: in_theorem_regime(spec.classes, spec.layers),
        degenerate: dnc.argmin == 0.0 && q_srg.is_none_or(|q| q == 0.0),
    })
}

/// How the regularization weight is chosen for each class count of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaPolicy {
    /// The same weight for every `K`.
    Fixed { lambda: f64 },
    /// `λ(K) = base · reference / K`, which keeps `K λ` — and with it the
    /// optimal DNC loss — constant across the grid.
    ClassScaled { base: f64, reference: usize },
}

impl LambdaPolicy {
    pub fn lambda(&self, classes: usize) -> f64 {
        match *self {
            LambdaPolicy::Fixed { lambda } => lambda,
            LambdaPolicy::ClassScaled { base, reference } => base * reference as f64 / classes as f64,
        }
    }
}

/// One cell of a comparison grid over triangular class counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub order: usize,
    pub layers: usize,
    pub lambda: LambdaPolicy,
    pub per_class: usize,
}

impl GridPoint {
    pub fn spec(&self) -> ProblemSpec {
        let k = binomial2(self.order);
        ProblemSpec::uniform(k, self.per_class, self.layers, k, self.lambda.lambda(k))
    }
}

/// Cartesian grid over orders, depths and policies, ordered by
/// `(policy, layers, order)`.
pub fn grid_points(orders: &[usize], layers: &[usize], policies: &[LambdaPolicy], per_class: usize) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &lambda in policies {
        for &l in layers {
            for &order in orders {
                out.push(GridPoint { order, layers: l, lambda, per_class });
            }
        }
    }
    out
}

/// Runs every comparison in parallel; results keep the order of `points`.
pub fn compare_grid(points: &[GridPoint]) -> Result<Vec<Comparison>> {
    points.par_iter().map(|p| compare_srg_dnc(&p.spec())).collect()
}

pub const COMPARISON_HEADER: &str = "K,r,L,lambda,n,q_srg,q_dnc,loss_srg,loss_dnc,ratio,srg_wins";

fn opt(x: Option<f64>) -> String {
    x.map(crate::persistence::format_f64).unwrap_or_default()
}

/// Comparison table as CSV (17 significant digits).
pub fn comparisons_to_csv(rows: &[Comparison]) -> String {
    use crate::persistence::format_f64 as f;
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for c in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.classes,
            c.order.map(|r| r.to_string()).unwrap_or_default(),
            c.layers,
            f(c.lambda),
            c.per_class,
            opt(c.q_srg),
            f(c.q_dnc),
            f(c.loss_srg),
            f(c.loss_dnc),
            f(c.ratio),
            c.srg_wins
        ));
    }
    out
}

/// Least-squares slope of `ln(ratio)` against `ln(K)`.
pub fn log_log_slope(rows: &[Comparison]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::input("a slope needs at least two points"));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|c| ((c.classes as f64).ln(), c.ratio.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("slope needs at least two distinct class counts"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// The exponent `(3 − L) / (2(L + 1))` of the asymptotic loss ratio.
pub fn predicted_exponent(layers: usize) -> f64 {
    (3.0 - layers as f64) / (2.0 * (layers as f64 + 1.0))
}
