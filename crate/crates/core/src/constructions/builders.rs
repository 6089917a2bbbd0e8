//! Explicit SRG and DNC solutions, and the two general-`K` SRG variants.

use serde::{Deserialize, Serialize};

use super::alpha::{dnc_alpha_schedule, srg_alpha_schedule, srg_order};
use super::curves::{loss_curve_dnc, loss_curve_srg};
use super::lemmas::{ridge_optimal_last_layer, variational_split};
use crate::dufm::{forward, SmoothingConfig};
use crate::error::{Error, Result};
use crate::graphs::{binomial2, lexicographic_pairs, TriangularGraph, MIN_ORDER};
use crate::numerics::{pseudoinverse, relu, repeat_columns, Matrix};
use crate::problem::{ProblemSpec, Provenance, SolutionBundle};

/// Singular values below this fraction of the largest are dropped when
/// pseudo-inverting the exactly low-rank mean matrices.
const PINV_TOL: f64 = 1e-10;

/// Smallest class count handled by the general-`K` builders.
pub const MIN_GENERAL_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralVariant {
    /// SRG block for the largest triangular number below `K`, DNC block
    /// for the remaining classes.
    BlockDiagonal,
    /// SRG for the smallest triangular number above `K`, with the classes
    /// of highest fit loss removed.
    Truncated,
}

impl GeneralVariant {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(GeneralVariant::BlockDiagonal),
            2 => Ok(GeneralVariant::Truncated),
            _ => Err(Error::input(format!("variant must be 1 or 2, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            GeneralVariant::BlockDiagonal => 1,
            GeneralVariant::Truncated => 2,
        }
    }
}

fn embed(block: &Matrix, rows: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, block.ncols());
    out.view_mut((0, 0), (block.nrows(), block.ncols())).copy_from(block);
    out
}

/// Assembles `H_1 = M_1 ⊗ 𝟏ₙᵀ` and `W_1` from `M̃_2` by the variational
/// split, zero-padding the inner dimension to `d_1`.
fn first_layer(spec: &ProblemSpec, m2: &Matrix) -> Result<(Matrix, Matrix)> {
    let split = variational_split(m2, spec.lambda(1), spec.per_class as f64 * spec.lambda_h1)?;
    let d1 = spec.dim(1);
    let inner = split.b.nrows();
    if inner > d1 {
        return Err(Error::domain(format!("width d_1 = {d1} is below the rank budget {inner}")));
    }
    let m1 = embed(&split.b, d1);
    let mut w1 = Matrix::zeros(spec.dim(2), d1);
    w1.view_mut((0, 0), (split.a.nrows(), inner)).copy_from(&split.a);
    Ok((repeat_columns(&m1, spec.per_class), w1))
}

/// Chains `H_1, W_1, …, W_L` from the mean matrices: `means[l-2]` is `M_l`
/// and `pre[l-2]` is `M̃_l` for `l = 2..=L`.
fn assemble(spec: &ProblemSpec, pre: &[Matrix], means: &[Matrix], provenance: Provenance) -> Result<SolutionBundle> {
    let layers = spec.layers;
    let (h1, w1) = first_layer(spec, &pre[0])?;
    let mut weights = vec![w1];
    for l in 2..layers {
        let pinv = pseudoinverse(&means[l - 2], PINV_TOL)?;
        weights.push(&pre[l - 1] * pinv);
    }
    let (wl, _) = ridge_optimal_last_layer(&means[layers - 2], spec.lambda(layers))?;
    weights.push(wl);
    let bundle = SolutionBundle { h1, weights, provenance };
    bundle.check_shapes(spec)?;
    Ok(bundle)
}

/// Pre-activation mean matrices `M̃_2..M̃_L` of the SRG solution at `q`.
pub fn srg_pre_means(spec: &ProblemSpec, q: f64) -> Result<Vec<Matrix>> {
    spec.validate_for_construction()?;
    let schedule = srg_alpha_schedule(spec, q)?;
    let r = srg_order(spec.classes)?;
    let graph = TriangularGraph::new(r)?;
    let t = graph.incidence();
    let layers = spec.layers;
    let mut pre = Vec::with_capacity(layers - 1);
    for l in 2..layers {
        pre.push(embed(&(t * schedule.alpha(l).sqrt()), spec.dim(l)));
    }
    // Rows of A_L T_r: each vertex pair (a, b) weights a and b with -1 and
    // every other vertex with +1.
    let k = spec.classes;
    let mut signs = Matrix::from_element(k, r, 1.0);
    for (row, &(a, b)) in lexicographic_pairs(r).iter().enumerate() {
        signs[(row, a)] = -1.0;
        signs[(row, b)] = -1.0;
    }
    let mut last = signs * t;
    for mut row in last.row_iter_mut() {
        let norm = row.norm();
        row.scale_mut(schedule.last().sqrt() / norm);
    }
    pre.push(embed(&last, spec.dim(layers)));
    Ok(pre)
}

/// The SRG solution at scale `q`. Intermediate means are `√α_l T_r`
/// embedded in `d_l` rows; `M̃_L` stacks the unit-normalized rows of
/// `A_L T_r` scaled by `√α_L`.
pub fn build_srg(spec: &ProblemSpec, q: f64) -> Result<SolutionBundle> {
    let pre = srg_pre_means(spec, q)?;
    let means: Vec<Matrix> = pre.iter().map(relu).collect();
    assemble(spec, &pre, &means, Provenance::Srg)
}

/// The DNC solution at scale `q`: `M_l = √α_l [I_K; 0]` at every layer.
pub fn build_dnc(spec: &ProblemSpec, q: f64) -> Result<SolutionBundle> {
    spec.validate_for_construction()?;
    let schedule = dnc_alpha_schedule(spec, q)?;
    let k = spec.classes;
    let means: Vec<Matrix> = (2..=spec.layers)
        .map(|l| embed(&(Matrix::identity(k, k) * schedule.alpha(l).sqrt()), spec.dim(l)))
        .collect();
    assemble(spec, &means, &means, Provenance::Dnc)
}

/// SRG solution at the minimizer of its loss curve.
pub fn build_srg_optimal(spec: &ProblemSpec) -> Result<(SolutionBundle, f64)> {
    let q = loss_curve_srg(spec)?.minimize()?.argmin;
    Ok((build_srg(spec, q)?, q))
}

/// DNC solution at the minimizer of its loss curve.
pub fn build_dnc_optimal(spec: &ProblemSpec) -> Result<(SolutionBundle, f64)> {
    let q = loss_curve_dnc(spec)?.minimize()?.argmin;
    Ok((build_dnc(spec, q)?, q))
}

/// One block of the block-diagonal general-`K` solution, posed as a
/// standalone problem.
#[derive(Clone, Debug)]
pub struct BlockPart {
    pub provenance: Provenance,
    /// The sub-problem: `K_P` classes, widths `K_P` and every
    /// regularization weight multiplied by `K / K_P`.
    pub spec: ProblemSpec,
    /// `K_P / K`, the share of the total loss.
    pub weight: f64,
    pub q: f64,
    pub bundle: SolutionBundle,
    /// Loss of the sub-problem at `bundle`.
    pub loss: f64,
}

/// Splits `K` into an SRG block of `r(r-1)/2` classes, `r` the largest
/// order with `r(r-1)/2 ≤ K`, and a DNC block for the rest.
pub fn block_split(classes: usize) -> Result<(usize, usize)> {
    if classes < MIN_GENERAL_CLASSES {
        return Err(Error::domain(format!(
            "general-K constructions need K >= {MIN_GENERAL_CLASSES}, got {classes}"
        )));
    }
    let mut r = MIN_ORDER;
    while binomial2(r + 1) <= classes {
        r += 1;
    }
    Ok((binomial2(r), classes - binomial2(r)))
}

/// Smallest triangular class count `≥ K` with order at least 4.
pub fn covering_classes(classes: usize) -> usize {
    let mut r = MIN_ORDER;
    while binomial2(r) < classes {
        r += 1;
    }
    binomial2(r)
}

/// The sub-problems of the block-diagonal variant.
pub fn block_part_specs(spec: &ProblemSpec) -> Result<Vec<(Provenance, ProblemSpec, f64)>> {
    let (srg_k, dnc_k) = block_split(spec.classes)?;
    let k = spec.classes as f64;
    let mut parts = Vec::new();
    for (prov, kp) in [(Provenance::Srg, srg_k), (Provenance::Dnc, dnc_k)] {
        if kp == 0 {
            continue;
        }
        let sub = spec.with_classes(kp, kp).scaled_regularization(k / kp as f64);
        parts.push((prov, sub, kp as f64 / k));
    }
    Ok(parts)
}

/// Builds the parts of the block-diagonal variant. A `None` scale picks the
/// curve minimizer of that part.
pub fn build_block_parts(spec: &ProblemSpec, q_srg: Option<f64>, q_dnc: Option<f64>) -> Result<Vec<BlockPart>> {
    let mut parts = Vec::new();
    for (provenance, sub, weight) in block_part_specs(spec)? {
        let (bundle, q) = match provenance {
            Provenance::Srg => match q_srg {
                Some(q) => (build_srg(&sub, q)?, q),
                None => build_srg_optimal(&sub)?,
            },
            _ => match q_dnc {
                Some(q) => (build_dnc(&sub, q)?, q),
                None => build_dnc_optimal(&sub)?,
            },
        };
        let loss = forward(&bundle, &sub, SmoothingConfig::RELU)?.total_loss;
        parts.push(BlockPart { provenance, spec: sub, weight, q, bundle, loss });
    }
    Ok(parts)
}

fn block_diagonal(blocks: &[&Matrix], rows: usize, cols: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        if r0 + b.nrows() > rows || c0 + b.ncols() > cols {
            return Err(Error::domain(format!("blocks do not fit into a {rows} x {cols} matrix")));
        }
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    Ok(out)
}

fn assemble_blocks(spec: &ProblemSpec, parts: &[BlockPart]) -> Result<SolutionBundle> {
    let layers = spec.layers;
    let h1_blocks: Vec<&Matrix> = parts.iter().map(|p| &p.bundle.h1).collect();
    let h1 = block_diagonal(&h1_blocks, spec.dim(1), spec.samples())?;
    let mut weights = Vec::with_capacity(layers);
    for l in 1..=layers {
        let blocks: Vec<&Matrix> = parts.iter().map(|p| &p.bundle.weights[l - 1]).collect();
        weights.push(block_diagonal(&blocks, spec.dim(l + 1), spec.dim(l))?);
    }
    let bundle = SolutionBundle { h1, weights, provenance: Provenance::SrgGeneralBlockdiag };
    bundle.check_shapes(spec)?;
    Ok(bundle)
}

/// Relative tolerance under which two class fit losses count as tied.
const TIE_TOL: f64 = 1e-12;

/// Classes to drop: the `count` highest fit losses, ties resolved towards
/// the lowest index.
pub fn classes_to_drop(class_losses: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..class_losses.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (class_losses[a], class_losses[b]);
        if (x - y).abs() <= TIE_TOL * x.abs().max(y.abs()) {
            a.cmp(&b)
        } else {
            y.total_cmp(&x)
        }
    });
    let mut out: Vec<usize> = order.into_iter().take(count).collect();
    out.sort_unstable();
    out
}

/// General-`K` SRG solution. `q_srg` and `q_dnc` fix the scales of the SRG
/// and DNC parts; `None` picks each part's curve minimizer. The truncated
/// variant ignores `q_dnc`.
pub fn build_srg_general(
    spec: &ProblemSpec,
    variant: GeneralVariant,
    q_srg: Option<f64>,
    q_dnc: Option<f64>,
) -> Result<SolutionBundle> {
    spec.validate_for_construction()?;
    if srg_order(spec.classes).is_ok() {
        let q = match q_srg {
            Some(q) => q,
            None => loss_curve_srg(spec)?.minimize()?.argmin,
        };
        return build_srg(spec, q);
    }
    block_split(spec.classes)?;
    match variant {
        GeneralVariant::BlockDiagonal => {
            let parts = build_block_parts(spec, q_srg, q_dnc)?;
            assemble_blocks(spec, &parts)
        }
        GeneralVariant::Truncated => build_truncated(spec, q_srg),
    }
}

fn build_truncated(spec: &ProblemSpec, q_srg: Option<f64>) -> Result<SolutionBundle> {
    let covering = covering_classes(spec.classes);
    if let Some((l, d)) = spec.widths.iter().enumerate().find(|(_, &d)| d < covering) {
        return Err(Error::domain(format!(
            "the truncated variant needs widths >= {covering}, but d_{} = {d}",
            l + 1
        )));
    }
    let big = ProblemSpec { classes: covering, ..spec.clone() };
    let full = match q_srg {
        Some(q) => build_srg(&big, q)?,
        None => build_srg_optimal(&big)?.0,
    };
    let trace = forward(&full, &big, SmoothingConfig::RELU)?;
    let dropped = classes_to_drop(&trace.class_fit_losses(), covering - spec.classes);
    let kept: Vec<usize> = (0..covering).filter(|c| !dropped.contains(c)).collect();
    let n = spec.per_class;
    let columns: Vec<usize> = kept.iter().flat_map(|&c| (c * n)..(c * n + n)).collect();
    let h1 = full.h1.select_columns(&columns);
    let mut weights = full.weights;
    let last = weights.pop().expect("at least two layers");
    weights.push(last.select_rows(&kept));
    let bundle = SolutionBundle { h1, weights, provenance: Provenance::SrgGeneralTruncated };
    bundle.check_shapes(spec)?;
    Ok(bundle)
}

/// Loss of the block-diagonal variant as `Σ_P (K_P/K) · L_P` with every
/// part at its own curve minimizer, without building matrices.
pub fn block_diagonal_curve_loss(spec: &ProblemSpec) -> Result<f64> {
    let mut total = 0.0;
    for (provenance, sub, weight) in block_part_specs(spec)? {
        let curve = match provenance {
            Provenance::Srg => loss_curve_srg(&sub)?,
            _ => loss_curve_dnc(&sub)?,
        };
        total += weight * curve.minimize()?.value;
    }
    Ok(total)
}
