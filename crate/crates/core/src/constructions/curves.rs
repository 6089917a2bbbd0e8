//! Loss of each construction as a function of the single free scale `q`.
//!
//! For both families the regularization of `H_1, W_1, …, W_{L-1}` is
//! balanced and linear in `q`, and the last layer contributes a ridge term
//! that only depends on the spectrum of `M_Lᵀ M_L`.

use serde::Serialize;

use super::alpha::{dnc_last_coefficient, srg_order, srg_p, Family};
use super::lemmas::{final_denominator, gram_spectrum_final};
use crate::error::{Error, Result};
use crate::numerics::{minimize_univariate, UnivariateMin};
use crate::problem::ProblemSpec;

/// Relative tolerance handed to the univariate minimizer.
pub const CURVE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormCurve {
    pub family: Family,
    pub spec: ProblemSpec,
    order: Option<usize>,
}

/// The two pieces of a curve value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveTerms {
    /// Fit loss plus `λ_{W_L}/2 ‖W_L‖²` at the ridge optimum.
    pub ridge: f64,
    /// Regularization of `H_1` and `W_1..W_{L-1}`.
    pub linear: f64,
}

impl CurveTerms {
    pub fn total(&self) -> f64 {
        self.ridge + self.linear
    }
}

/// `L_SRG(q) = λ/2 Σ_i m_i/(μ_i(α_L) + Kλ) + (L/2) p q` with `λ = λ_{W_L}`
/// and `μ_i` the spectrum of the last SRG layer.
pub fn loss_curve_srg(spec: &ProblemSpec) -> Result<ClosedFormCurve> {
    spec.validate()?;
    if spec.layers < 3 {
        return Err(Error::domain(format!("the SRG curve needs L >= 3, got {}", spec.layers)));
    }
    let r = srg_order(spec.classes)?;
    Ok(ClosedFormCurve { family: Family::Srg, spec: spec.clone(), order: Some(r) })
}

/// `L_DNC(q) = λ/2 · K/(C q^L + Kλ) + (L/2) K λ_{W_{L-1}} q` with
/// `λ = λ_{W_L}`.
pub fn loss_curve_dnc(spec: &ProblemSpec) -> Result<ClosedFormCurve> {
    spec.validate()?;
    Ok(ClosedFormCurve { family: Family::Dnc, spec: spec.clone(), order: None })
}

impl ClosedFormCurve {
    pub fn order(&self) -> Option<usize> {
        self.order
    }

    /// `α_L` as a function of `q`.
    pub fn last_alpha(&self, q: f64) -> f64 {
        let spec = &self.spec;
        let layers = spec.layers as i32;
        match self.family {
            Family::Dnc => dnc_last_coefficient(spec) * q.powi(layers),
            Family::Srg => {
                let r = self.order.expect("srg curve has an order");
                let rf = r as f64;
                let p = srg_p(spec, r);
                let inter: f64 = (2..=spec.layers - 2).map(|l| p / (rf * spec.lambda(l))).product();
                let last = 4.0 * final_denominator(r) * p
                    / (rf * rf * (rf - 1.0).powi(2) * spec.lambda(spec.layers - 1));
                inter * last * q.powi(layers)
            }
        }
    }

    pub fn terms(&self, q: f64) -> CurveTerms {
        let spec = &self.spec;
        let k = spec.classes as f64;
        let lam = spec.lambda(spec.layers);
        let kl = k * lam;
        let alpha = self.last_alpha(q);
        let half_l = spec.layers as f64 / 2.0;
        match self.family {
            Family::Dnc => CurveTerms {
                ridge: 0.5 * lam * k / (alpha + kl),
                linear: half_l * k * spec.lambda(spec.layers - 1) * q,
            },
            Family::Srg => {
                let r = self.order.expect("srg curve has an order");
                let spectrum = gram_spectrum_final(r, alpha).expect("validated order");
                let ridge = 0.5 * lam * spectrum.iter().map(|e| e.multiplicity as f64 / (e.value + kl)).sum::<f64>();
                CurveTerms { ridge, linear: half_l * srg_p(spec, r) * q }
            }
        }
    }

    pub fn evaluate(&self, q: f64) -> f64 {
        self.terms(q).total()
    }

    pub fn minimize(&self) -> Result<UnivariateMin> {
        minimize_univariate(|q| self.evaluate(q), CURVE_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_zero_is_half() {
        for r in 4..=9 {
            for layers in 3..=6 {
                let spec = ProblemSpec::uniform(r * (r - 1) / 2, 1, layers, 30, 0.004);
                assert!((loss_curve_srg(&spec).unwrap().evaluate(0.0) - 0.5).abs() < 1e-14);
                assert!((loss_curve_dnc(&spec).unwrap().evaluate(0.0) - 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn grows_linearly() {
        let spec = ProblemSpec::uniform(10, 1, 4, 10, 0.004);
        for curve in [loss_curve_srg(&spec).unwrap(), loss_curve_dnc(&spec).unwrap()] {
            let a = curve.evaluate(1e6);
            let b = curve.evaluate(2e6);
            assert!(b > a && (b / a - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn srg_beats_dnc_on_the_reference_spec() {
        let spec = ProblemSpec::uniform(10, 1, 4, 10, 0.004);
        let s = loss_curve_srg(&spec).unwrap().minimize().unwrap();
        let d = loss_curve_dnc(&spec).unwrap().minimize().unwrap();
        assert!(s.value < d.value, "{} vs {}", s.value, d.value);
        assert!(s.argmin > 0.0 && d.argmin > 0.0);
    }

    #[test]
    fn srg_needs_triangular_classes() {
        assert!(loss_curve_srg(&ProblemSpec::uniform(11, 1, 4, 11, 0.004)).is_err());
        assert!(loss_curve_srg(&ProblemSpec::uniform(10, 1, 2, 10, 0.004)).is_err());
        assert!(loss_curve_dnc(&ProblemSpec::uniform(11, 1, 2, 11, 0.004)).is_ok());
    }
}
