//! Per-layer scale schedules `α_2, …, α_L` of the two families.

use serde::{Deserialize, Serialize};

use super::lemmas::final_denominator;
use crate::error::{Error, Result};
use crate::graphs::{triangular_root, MIN_ORDER};
use crate::problem::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Srg,
    Dnc,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Srg => "srg",
            Family::Dnc => "dnc",
        }
    }
}

/// `α_l` for `l = 2..=L` at one value of the free scale `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub alphas: Vec<f64>,
    pub q: f64,
    pub family: Family,
}

impl AlphaSchedule {
    /// `α_l`, `l = 2..=L`.
    pub fn alpha(&self, l: usize) -> f64 {
        self.alphas[l - 2]
    }

    pub fn last(&self) -> f64 {
        *self.alphas.last().expect("non-empty schedule")
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::input(format!("q must be finite and non-negative, got {q}")));
    }
    Ok(())
}

/// Complete-graph order `r` with `K = r(r-1)/2`, or a domain error.
pub fn srg_order(classes: usize) -> Result<usize> {
    match triangular_root(classes) {
        Some(r) if r >= MIN_ORDER => Ok(r),
        _ => Err(Error::domain(format!(
            "K = {classes} is not of the form r(r-1)/2 with r >= {MIN_ORDER}; use the general-K builder"
        ))),
    }
}

fn check_srg_depth(spec: &ProblemSpec) -> Result<()> {
    if spec.layers < 3 {
        return Err(Error::domain(format!("the SRG construction needs L >= 3, got {}", spec.layers)));
    }
    Ok(())
}

/// `p = √(n λ_{H_1} λ_{W_1}) (√2 + √((r-1)(r-2)))`, the cost per unit `q`
/// of each of the `L` balanced terms.
pub fn srg_p(spec: &ProblemSpec, r: usize) -> f64 {
    let rf = r as f64;
    (spec.per_class as f64 * spec.lambda_h1 * spec.lambda(1)).sqrt()
        * (2f64.sqrt() + ((rf - 1.0) * (rf - 2.0)).sqrt())
}

/// The SRG schedule: `α_2 = q²`,
/// `α_{l+1}/α_l = p q / (r λ_{W_l})` for `2 ≤ l ≤ L-2` and
/// `α_L/α_{L-1} = 4((r-2)(r-3)+2) p q / (r²(r-1)² λ_{W_{L-1}})`.
pub fn srg_alpha_schedule(spec: &ProblemSpec, q: f64) -> Result<AlphaSchedule> {
    spec.validate()?;
    check_srg_depth(spec)?;
    check_q(q)?;
    let r = srg_order(spec.classes)?;
    let rf = r as f64;
    let p = srg_p(spec, r);
    let layers = spec.layers;
    let mut alphas = vec![q * q];
    for l in 2..=layers - 2 {
        let prev = alphas[l - 2];
        alphas.push(prev * p * q / (rf * spec.lambda(l)));
    }
    let prev = *alphas.last().expect("alpha_2");
    let ratio = 4.0 * final_denominator(r) * p * q / (rf * rf * (rf - 1.0).powi(2) * spec.lambda(layers - 1));
    alphas.push(prev * ratio);
    Ok(AlphaSchedule { alphas, q, family: Family::Srg })
}

/// The DNC schedule: `α_2 = (λ_{W_{L-1}} q)² / (n λ_{H_1} λ_{W_1})` and
/// `α_{l+1} = α_l λ_{W_{L-1}} q / λ_{W_l}`, which makes every one of the
/// `L` balanced regularization terms equal to `K λ_{W_{L-1}} q / 2` and
/// gives `α_L = C q^L`.
pub fn dnc_alpha_schedule(spec: &ProblemSpec, q: f64) -> Result<AlphaSchedule> {
    spec.validate()?;
    check_q(q)?;
    let lead = spec.lambda(spec.layers - 1);
    let mut alphas = vec![(lead * q).powi(2) / (spec.per_class as f64 * spec.lambda_h1 * spec.lambda(1))];
    for l in 2..spec.layers {
        let prev = alphas[l - 2];
        alphas.push(prev * lead * q / spec.lambda(l));
    }
    Ok(AlphaSchedule { alphas, q, family: Family::Dnc })
}

/// `C = λ_{W_{L-1}}^{L-1} / (n λ_{H_1} ∏_{i=1}^{L-2} λ_{W_i})`, so that the
/// DNC schedule has `α_L = C q^L`.
pub fn dnc_last_coefficient(spec: &ProblemSpec) -> f64 {
    let layers = spec.layers;
    let lead = spec.lambda(layers - 1);
    let denom: f64 = (1..=layers - 2).map(|i| spec.lambda(i)).product::<f64>() * spec.per_class as f64 * spec.lambda_h1;
    lead.powi(layers as i32 - 1) / denom
}
