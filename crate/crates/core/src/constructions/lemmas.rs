//! Closed forms for the building blocks of the constructions: minimum-norm
//! interpolating weights, Gram spectra of the SRG mean matrices, the
//! ridge-optimal last layer and balanced (Schatten) factorizations.

use crate::error::{Error, Result};
use crate::graphs::{binomial2, SpectrumEntry, TriangularGraph, MIN_ORDER};
use crate::numerics::{frobenius_sq, spectral_decompose, Matrix};

fn positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

fn non_negative(name: &str, x: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("{name} must be non-negative and finite, got {x}")));
    }
    Ok(())
}

fn check_order(r: usize) -> Result<()> {
    if r < MIN_ORDER {
        return Err(Error::domain(format!("order r must be at least {MIN_ORDER}, got {r}")));
    }
    Ok(())
}

/// `(r-2)(r-3) + 2`, twice the squared norm of a row of `A_L T_r` times
/// `(r-1)/4`; shows up in every last-layer formula.
pub(crate) fn final_denominator(r: usize) -> f64 {
    let r = r as f64;
    (r - 2.0) * (r - 3.0) + 2.0
}

/// Minimal `‖w‖²` subject to `zᵀ = wᵀ A T_r` with `AᵀA = α I`:
///
/// ```text
/// (r-1)² / (α (r-2)²) · zᵀ T_rᵀ (I − (3r-4)/(4(r-1)²) 𝟏𝟏ᵀ) T_r z
/// ```
pub fn min_norm_row_value(z: &[f64], alpha: f64, graph: &TriangularGraph) -> Result<f64> {
    positive("alpha", alpha)?;
    if z.len() != graph.classes() {
        return Err(Error::shape("z", format!("expected {} entries, found {}", graph.classes(), z.len())));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("z has a non-finite entry"));
    }
    let r = graph.order() as f64;
    let tz = graph.incidence() * nalgebra::DVector::from_column_slice(z);
    let sum = tz.sum();
    let quad = tz.norm_squared() - (3.0 * r - 4.0) / (4.0 * (r - 1.0).powi(2)) * sum * sum;
    Ok(((r - 1.0).powi(2) / (alpha * (r - 2.0).powi(2)) * quad).max(0.0))
}

/// `‖W_l‖²_F = r α_{l+1} / α_l` for the minimum-norm map between two
/// intermediate SRG mean matrices.
pub fn intermediate_weight_norm(alpha_l: f64, alpha_next: f64, r: usize) -> Result<f64> {
    positive("alpha_l", alpha_l)?;
    non_negative("alpha_next", alpha_next)?;
    Ok(r as f64 * alpha_next / alpha_l)
}

/// `‖W_{L-1}‖²_F = r²(r-1)² / (4((r-2)(r-3)+2)) · α_L / α_{L-1}`.
pub fn penultimate_weight_norm(alpha_prev: f64, alpha_last: f64, r: usize) -> Result<f64> {
    positive("alpha_prev", alpha_prev)?;
    non_negative("alpha_L", alpha_last)?;
    check_order(r)?;
    let rf = r as f64;
    Ok(rf * rf * (rf - 1.0).powi(2) / (4.0 * final_denominator(r)) * alpha_last / alpha_prev)
}

/// Eigenvalues of `M_lᵀ M_l` for an intermediate SRG layer.
pub fn gram_spectrum_intermediate(r: usize, alpha: f64) -> Result<Vec<SpectrumEntry>> {
    check_order(r)?;
    non_negative("alpha", alpha)?;
    let rf = r as f64;
    Ok(vec![
        SpectrumEntry { value: 2.0 * alpha, multiplicity: 1 },
        SpectrumEntry { value: (rf - 2.0) / (rf - 1.0) * alpha, multiplicity: r - 1 },
        SpectrumEntry { value: 0.0, multiplicity: r * (r - 3) / 2 },
    ])
}

/// Eigenvalues of `M_Lᵀ M_L` where `M_L = σ(M̃_L)` is the last SRG layer.
pub fn gram_spectrum_final(r: usize, alpha: f64) -> Result<Vec<SpectrumEntry>> {
    check_order(r)?;
    non_negative("alpha", alpha)?;
    let rf = r as f64;
    let d = final_denominator(r);
    Ok(vec![
        // Top eigenvalue from `M_LᵀM_L = a·11ᵀ + b·I + c·G_r`; the often-quoted
        // (r−2)(5r−19) agrees with it only for r ∈ {4, 5}.
        SpectrumEntry { value: ((rf - 2.0) * (rf - 3.0)).powi(2) / 2.0 * alpha / d, multiplicity: 1 },
        SpectrumEntry { value: 2.0 * (rf - 3.0).powi(2) * alpha / d, multiplicity: r - 1 },
        SpectrumEntry { value: 2.0 * alpha / d, multiplicity: r * (r - 3) / 2 },
    ])
}

/// `Σ multiplicity · value`.
pub fn spectrum_trace(spectrum: &[SpectrumEntry]) -> f64 {
    spectrum.iter().map(|e| e.multiplicity as f64 * e.value).sum()
}

/// The spectrum expanded into a non-increasing list.
pub fn expand_spectrum(spectrum: &[SpectrumEntry]) -> Vec<f64> {
    let mut out: Vec<f64> =
        spectrum.iter().flat_map(|e| std::iter::repeat_n(e.value, e.multiplicity)).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Ridge-optimal last layer for collapsed features with class means `M_L`
/// (`d_L × K`):
///
/// ```text
/// argmin_W 1/(2K) ‖W M_L − I_K‖² + λ/2 ‖W‖²  =  M_Lᵀ (M_L M_Lᵀ + λK I)⁻¹
/// ```
///
/// Returns the minimizer and the objective evaluated at it.
pub fn ridge_optimal_last_layer(means: &Matrix, lambda: f64) -> Result<(Matrix, f64)> {
    positive("lambda", lambda)?;
    let k = means.ncols();
    if k == 0 {
        return Err(Error::shape("M_L", "no class columns"));
    }
    crate::numerics::ensure_finite(means, "M_L")?;
    // Push-through identity: Mᵀ(MMᵀ + λK I)⁻¹ = (MᵀM + λK I)⁻¹Mᵀ, so only a
    // K × K system is solved.
    let kl = lambda * k as f64;
    let mut gram = means.transpose() * means;
    for i in 0..k {
        gram[(i, i)] += kl;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::input("ridge system is not positive definite"))?;
    let w = chol.solve(&means.transpose());
    let value = ridge_objective(&w, means, lambda);
    Ok((w, value))
}

/// `1/(2K) ‖W M − I‖² + λ/2 ‖W‖²`.
pub fn ridge_objective(w: &Matrix, means: &Matrix, lambda: f64) -> f64 {
    let k = means.ncols();
    let mut fit = w * means;
    for i in 0..k {
        fit[(i, i)] -= 1.0;
    }
    frobenius_sq(&fit) / (2.0 * k as f64) + 0.5 * lambda * frobenius_sq(w)
}

/// Minimum of the ridge objective from the squared singular values of
/// `M_L`: `λ/2 Σ_{i=1}^{K} 1/(σ_i² + Kλ)`, where missing singular values
/// (when `d_L < K`) count as zero.
pub fn ridge_value_from_spectrum(squared_singular_values: &[f64], classes: usize, lambda: f64) -> f64 {
    let kl = classes as f64 * lambda;
    let listed: f64 = squared_singular_values.iter().take(classes).map(|s2| 1.0 / (s2 + kl)).sum();
    let missing = classes.saturating_sub(squared_singular_values.len()) as f64 / kl;
    0.5 * lambda * (listed + missing)
}

/// Result of [`variational_split`]: `A B = C` at minimal
/// `λ_A/2 ‖A‖² + λ_B/2 ‖B‖²`.
#[derive(Clone, Debug)]
pub struct Split {
    pub a: Matrix,
    pub b: Matrix,
    pub value: f64,
}

/// Balanced factorization `A = γ_A U Σ^{1/2}`, `B = γ_B Σ^{1/2} Vᵀ` with
/// `γ_A = (λ_B/λ_A)^{1/4}` and `γ_B = (λ_A/λ_B)^{1/4}`. The inner dimension
/// is `min(rows, cols)` of `C`. The minimum equals `√(λ_A λ_B) ‖C‖_*`.
pub fn variational_split(c: &Matrix, lambda_a: f64, lambda_b: f64) -> Result<Split> {
    positive("lambda_A", lambda_a)?;
    positive("lambda_B", lambda_b)?;
    let svd = spectral_decompose(c)?;
    let gamma_a = (lambda_b / lambda_a).powf(0.25);
    let gamma_b = (lambda_a / lambda_b).powf(0.25);
    let mut a = svd.u.clone();
    let mut b = svd.v_t.clone();
    for (j, &s) in svd.singular_values.iter().enumerate() {
        let root = s.sqrt();
        a.column_mut(j).scale_mut(gamma_a * root);
        b.row_mut(j).scale_mut(gamma_b * root);
    }
    let value = 0.5 * lambda_a * frobenius_sq(&a) + 0.5 * lambda_b * frobenius_sq(&b);
    Ok(Split { a, b, value })
}

/// Result of [`schatten_factorization`].
#[derive(Clone, Debug)]
pub struct Factorization {
    /// Factors in product order: `factors[0] · factors[1] ⋯ = C`.
    pub factors: Vec<Matrix>,
    /// `Σ λ_i/2 ‖factors[i]‖²`.
    pub cost: f64,
}

/// Balanced depth-`d` factorization of `C`: with `C = U Σ Vᵀ`, the factors
/// are `c_1 U Σ^{1/d}`, `c_i Σ^{1/d}`, …, `c_d Σ^{1/d} Vᵀ` with
/// `c_i² = (∏λ)^{1/d} / λ_i`. Its cost is `d/2 (∏λ)^{1/d} Σ σ^{2/d}`, the
/// variational form of the Schatten `2/d` quasi-norm.
pub fn schatten_factorization(c: &Matrix, lambdas: &[f64]) -> Result<Factorization> {
    let depth = lambdas.len();
    if depth < 2 {
        return Err(Error::input(format!("factorization depth must be at least 2, got {depth}")));
    }
    for (i, &l) in lambdas.iter().enumerate() {
        positive(&format!("lambda_{}", i + 1), l)?;
    }
    let svd = spectral_decompose(c)?;
    let k = svd.singular_values.len();
    let geo = lambdas.iter().map(|l| l.ln()).sum::<f64>() / depth as f64;
    let scale = |i: usize| (0.5 * (geo - lambdas[i].ln())).exp();
    let root: Vec<f64> = svd.singular_values.iter().map(|s| s.powf(1.0 / depth as f64)).collect();

    let mut factors = Vec::with_capacity(depth);
    for i in 0..depth {
        let f = if i == 0 {
            let mut u = svd.u.clone();
            for (j, &s) in root.iter().enumerate() {
                u.column_mut(j).scale_mut(s * scale(i));
            }
            u
        } else if i + 1 == depth {
            let mut v = svd.v_t.clone();
            for (j, &s) in root.iter().enumerate() {
                v.row_mut(j).scale_mut(s * scale(i));
            }
            v
        } else {
            Matrix::from_fn(k, k, |a, b| if a == b { root[a] * scale(i) } else { 0.0 })
        };
        factors.push(f);
    }
    let cost = factors.iter().zip(lambdas).map(|(f, l)| 0.5 * l * frobenius_sq(f)).sum();
    Ok(Factorization { factors, cost })
}

/// Number of classes served by the SRG construction of order `r`.
pub fn srg_classes(r: usize) -> usize {
    binomial2(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, nuclear_norm, symmetric_eigen};

    #[test]
    fn spectra_for_order_five() {
        let inter = gram_spectrum_intermediate(5, 1.0).unwrap();
        assert_eq!(expand_spectrum(&inter), vec![2.0, 0.75, 0.75, 0.75, 0.75, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let fin = gram_spectrum_final(5, 1.0).unwrap();
        assert_eq!((fin[0].value, fin[0].multiplicity), (2.25, 1));
        assert_eq!((fin[1].value, fin[1].multiplicity), (1.0, 4));
        assert_eq!((fin[2].value, fin[2].multiplicity), (0.25, 5));
        assert!((spectrum_trace(&fin) - 7.5).abs() < 1e-15);
        assert!(expand_spectrum(&gram_spectrum_final(6, 0.0).unwrap()).iter().all(|&x| x == 0.0));
        for r in 4..=12 {
            let total: usize = gram_spectrum_final(r, 1.0).unwrap().iter().map(|e| e.multiplicity).sum();
            assert_eq!(total, binomial2(r));
        }
    }

    #[test]
    fn weight_norm_formulas() {
        assert_eq!(intermediate_weight_norm(1.0, 1.0, 5).unwrap(), 5.0);
        assert_eq!(intermediate_weight_norm(2.0, 0.0, 5).unwrap(), 0.0);
        assert!((penultimate_weight_norm(1.0, 1.0, 5).unwrap() - 12.5).abs() < 1e-14);
        assert_eq!(penultimate_weight_norm(1.0, 0.0, 5).unwrap(), 0.0);
        assert!(matches!(intermediate_weight_norm(0.0, 1.0, 5), Err(Error::Domain(_))));
        assert!(penultimate_weight_norm(-1.0, 1.0, 5).is_err());
    }

    #[test]
    fn min_norm_row_value_on_a_graph_row() {
        let g = TriangularGraph::new(6).unwrap();
        assert_eq!(min_norm_row_value(&vec![0.0; 15], 2.0, &g).unwrap(), 0.0);
        let gamma = 1.7;
        let z: Vec<f64> = g.incidence().row(0).iter().map(|x| gamma * x).collect();
        let v = min_norm_row_value(&z, 0.8, &g).unwrap();
        assert!((v - gamma * gamma / 0.8).abs() < 1e-12);
        assert!(min_norm_row_value(&z, 0.0, &g).is_err());
    }

    #[test]
    fn ridge_examples() {
        // all singular values one, K = 2, λ = 0.5
        let m = Matrix::identity(2, 2);
        let (_, v) = ridge_optimal_last_layer(&m, 0.5).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!((ridge_value_from_spectrum(&[1.0, 1.0], 2, 0.5) - 0.25).abs() < 1e-15);
        let z = Matrix::zeros(4, 3);
        let (w, v) = ridge_optimal_last_layer(&z, 0.1).unwrap();
        assert_eq!(w, Matrix::zeros(3, 4));
        assert!((v - 0.5).abs() < 1e-15);
        assert!(ridge_optimal_last_layer(&z, 0.0).is_err());
    }

    #[test]
    fn ridge_matches_the_wide_form() {
        let m = Matrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let (w, v) = ridge_optimal_last_layer(&m, 0.03).unwrap();
        let mut outer = &m * m.transpose();
        for i in 0..6 {
            outer[(i, i)] += 0.03 * 4.0;
        }
        let wide = m.transpose() * outer.try_inverse().unwrap();
        assert!(max_abs_diff(&w, &wide) < 1e-12);
        let (eig, _) = symmetric_eigen(&(m.transpose() * &m)).unwrap();
        assert!((v - ridge_value_from_spectrum(&eig, 4, 0.03)).abs() < 1e-13);
    }

    #[test]
    fn variational_examples() {
        let s = variational_split(&Matrix::zeros(3, 2), 1.0, 2.0).unwrap();
        assert_eq!(s.value, 0.0);
        let s = variational_split(&Matrix::identity(3, 3), 1.0, 1.0).unwrap();
        assert!((s.value - 3.0).abs() < 1e-14);
        let c = Matrix::from_fn(5, 3, |i, j| (i as f64 - j as f64 * 0.7).sin());
        let s = variational_split(&c, 0.3, 2.0).unwrap();
        let err = max_abs_diff(&(&s.a * &s.b), &c);
        assert!(err < 1e-12, "{err}");
        let nuc = nuclear_norm(&c).unwrap();
        assert!((s.value - (0.6f64).sqrt() * nuc).abs() < 1e-12, "{} {}", s.value, nuc);
        // balance: both terms equal
        assert!((0.3 * frobenius_sq(&s.a) - 2.0 * frobenius_sq(&s.b)).abs() < 1e-12);
    }

    #[test]
    fn schatten_examples() {
        let f = schatten_factorization(&Matrix::zeros(3, 3), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.cost, 0.0);
        let c = Matrix::from_fn(4, 3, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1 + if i == j { 1.0 } else { 0.0 });
        let two = schatten_factorization(&c, &[1.0, 1.0]).unwrap();
        assert!((two.cost - nuclear_norm(&c).unwrap()).abs() < 1e-12);
        let lambdas = [0.5, 2.0, 1.0, 3.0];
        let four = schatten_factorization(&c, &lambdas).unwrap();
        let product = four.factors.iter().skip(1).fold(four.factors[0].clone(), |acc, f| acc * f);
        assert!(max_abs_diff(&product, &c) < 1e-12);
        let s = crate::numerics::singular_values(&c).unwrap();
        let expected = 2.0 * 3.0f64.powf(0.25) * s.iter().map(|x| x.sqrt()).sum::<f64>();
        assert!((four.cost - expected).abs() < 1e-12);
        assert!(schatten_factorization(&c, &[1.0]).is_err());
    }
}
