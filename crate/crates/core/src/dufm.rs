//! The L-layer DUFM objective
//!
//! ```text
//! 1/(2N) ‖W_L σ(W_{L-1} … σ(W_1 H_1)) − Y‖²_F + Σ_l λ_{W_l}/2 ‖W_l‖²_F + λ_{H_1}/2 ‖H_1‖²_F
//! ```
//!
//! with labels `Y = I_K ⊗ 𝟏ₙᵀ`, evaluated with per-layer traces, exact
//! gradients and an optional C¹ smoothing of the ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{add_scaled, class_means, frobenius_sq, singular_values, Matrix};
use crate::problem::{ProblemSpec, SolutionBundle};

/// ReLU, or its C¹ relaxation when `epsilon > 0`.
///
/// On `(0, ε)` the activation is the cubic `2x²/ε − x³/ε²`, which meets the
/// identity with matching slope at `ε` and the zero function with matching
/// slope at `0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl SmoothingConfig {
    pub const RELU: SmoothingConfig = SmoothingConfig { epsilon: 0.0 };

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::input(format!("smoothing epsilon must be finite and non-negative, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    #[inline]
    pub fn activate(&self, x: f64) -> f64 {
        let eps = self.epsilon;
        if x <= 0.0 {
            0.0
        } else if x >= eps {
            x
        } else {
            let t = x / eps;
            x * t * (2.0 - t)
        }
    }

    /// Derivative; zero at the ReLU kink.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let eps = self.epsilon;
        if x <= 0.0 {
            0.0
        } else if x >= eps {
            1.0
        } else {
            let t = x / eps;
            t * (4.0 - 3.0 * t)
        }
    }
}

/// Everything computed by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `H̃_2, …, H̃_{L+1}`; the last entry is the output `K × N`.
    pub pre_activations: Vec<Matrix>,
    /// `H_1, …, H_L`.
    pub post_activations: Vec<Matrix>,
    /// Class means `M_1, …, M_L` of the post-activations.
    pub means: Vec<Matrix>,
    /// Class means `M̃_2, …, M̃_{L+1}` of the pre-activations.
    pub pre_means: Vec<Matrix>,
    pub fit_loss: f64,
    /// `λ_{W_l}/2 ‖W_l‖²` for `l = 1..=L`, followed by `λ_{H_1}/2 ‖H_1‖²`.
    pub reg_losses: Vec<f64>,
    pub total_loss: f64,
    /// `½‖h̃^{L+1}_j − y_j‖²` for each sample column `j`.
    pub column_fit_losses: Vec<f64>,
    pub classes: usize,
    pub per_class: usize,
}

impl ForwardTrace {
    pub fn layers(&self) -> usize {
        self.post_activations.len()
    }

    /// Post-activation features `H_l`, `l = 1..=L`.
    pub fn features(&self, l: usize) -> &Matrix {
        &self.post_activations[l - 1]
    }

    /// Class-mean matrix `M_l`, `l = 1..=L`.
    pub fn mean(&self, l: usize) -> &Matrix {
        &self.means[l - 1]
    }

    /// Pre-activation class means `M̃_l`, `l = 2..=L+1`.
    pub fn pre_mean(&self, l: usize) -> &Matrix {
        &self.pre_means[l - 2]
    }

    /// Fit loss of each class, summing the column losses of its samples.
    pub fn class_fit_losses(&self) -> Vec<f64> {
        self.column_fit_losses.chunks(self.per_class).map(|c| c.iter().sum()).collect()
    }

    pub fn reg_total(&self) -> f64 {
        self.reg_losses.iter().sum()
    }
}

/// Gradient with respect to `[H_1, W_1, …, W_L]`.
#[derive(Clone, Debug)]
pub struct BundleGradient {
    pub h1: Matrix,
    pub weights: Vec<Matrix>,
}

impl BundleGradient {
    pub fn norm(&self) -> f64 {
        (frobenius_sq(&self.h1) + self.weights.iter().map(frobenius_sq).sum::<f64>()).sqrt()
    }

    pub fn variables(&self) -> Vec<Matrix> {
        std::iter::once(self.h1.clone()).chain(self.weights.iter().cloned()).collect()
    }
}

fn output_residual(out: &Matrix, classes: usize, per_class: usize) -> Matrix {
    let mut r = out.clone();
    for c in 0..classes {
        for i in 0..per_class {
            r[(c, c * per_class + i)] -= 1.0;
        }
    }
    r
}

/// Evaluates the objective and all intermediate features.
pub fn forward(bundle: &SolutionBundle, spec: &ProblemSpec, smoothing: SmoothingConfig) -> Result<ForwardTrace> {
    bundle.check_shapes(spec)?;
    let (k, n, layers) = (spec.classes, spec.per_class, spec.layers);
    let big_n = spec.samples() as f64;

    let mut pre = Vec::with_capacity(layers);
    let mut post = Vec::with_capacity(layers);
    post.push(bundle.h1.clone());
    for l in 1..=layers {
        let z = &bundle.weights[l - 1] * &post[l - 1];
        if l < layers {
            post.push(z.map(|x| smoothing.activate(x)));
        }
        pre.push(z);
    }
    let out = pre.last().expect("at least two layers");
    let residual = output_residual(out, k, n);
    let column_fit_losses: Vec<f64> =
        residual.column_iter().map(|c| 0.5 * c.iter().map(|x| x * x).sum::<f64>()).collect();
    let fit_loss = column_fit_losses.iter().sum::<f64>() / big_n;

    let mut reg_losses: Vec<f64> = bundle
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| 0.5 * spec.lambda_w[i] * frobenius_sq(w))
        .collect();
    reg_losses.push(0.5 * spec.lambda_h1 * frobenius_sq(&bundle.h1));
    let total_loss = fit_loss + reg_losses.iter().sum::<f64>();

    let means = post.iter().map(|h| class_means(h, k, n)).collect();
    let pre_means = pre.iter().map(|h| class_means(h, k, n)).collect();
    Ok(ForwardTrace {
        pre_activations: pre,
        post_activations: post,
        means,
        pre_means,
        fit_loss,
        reg_losses,
        total_loss,
        column_fit_losses,
        classes: k,
        per_class: n,
    })
}

/// Total objective value.
pub fn loss(bundle: &SolutionBundle, spec: &ProblemSpec, smoothing: SmoothingConfig) -> Result<f64> {
    Ok(forward(bundle, spec, smoothing)?.total_loss)
}

/// Exact gradients by backpropagation.
pub fn gradients(bundle: &SolutionBundle, spec: &ProblemSpec, smoothing: SmoothingConfig) -> Result<BundleGradient> {
    let trace = forward(bundle, spec, smoothing)?;
    Ok(backward(bundle, spec, smoothing, &trace))
}

/// Forward pass and gradients together.
pub fn loss_and_gradients(
    bundle: &SolutionBundle,
    spec: &ProblemSpec,
    smoothing: SmoothingConfig,
) -> Result<(ForwardTrace, BundleGradient)> {
    let trace = forward(bundle, spec, smoothing)?;
    let grad = backward(bundle, spec, smoothing, &trace);
    Ok((trace, grad))
}

pub(crate) fn backward(
    bundle: &SolutionBundle,
    spec: &ProblemSpec,
    smoothing: SmoothingConfig,
    trace: &ForwardTrace,
) -> BundleGradient {
    let layers = spec.layers;
    let big_n = spec.samples() as f64;
    let out = trace.pre_activations.last().expect("output layer");
    // dL_fit / dH̃_{L+1}
    let mut g = output_residual(out, spec.classes, spec.per_class) / big_n;
    let mut weights = vec![Matrix::zeros(0, 0); layers];
    for l in (1..=layers).rev() {
        let w = &bundle.weights[l - 1];
        let mut gw = &g * trace.post_activations[l - 1].transpose();
        add_scaled(&mut gw, spec.lambda_w[l - 1], w);
        weights[l - 1] = gw;
        g = w.transpose() * &g;
        if l > 1 {
            // back through H_l = σ(H̃_l), H̃_l is pre_activations[l-2]
            g.zip_apply(&trace.pre_activations[l - 2], |gi, z| *gi *= smoothing.derivative(z));
        }
    }
    add_scaled(&mut g, spec.lambda_h1, &bundle.h1);
    BundleGradient { h1: g, weights }
}

/// Upper bound on the distance between two same-class feature vectors at
/// any layer of a global optimum of the smoothed problem:
/// `6ε√(D(L+1)) / ((L+1)^{L+1} λ̄ √n)` with `λ̄ = λ_{H_1} ∏ λ_{W_l}`.
///
/// Requires every regularization weight to be at most `1/(L+1)`.
pub fn dnc1_distance_bound(spec: &ProblemSpec, epsilon: f64, max_width: usize) -> Result<f64> {
    spec.validate()?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let depth = (spec.layers + 1) as f64;
    let cap = 1.0 / depth;
    if spec.lambda_h1 > cap {
        return Err(Error::domain(format!("lambda_H1 = {} exceeds 1/(L+1) = {cap}", spec.lambda_h1)));
    }
    if let Some((i, x)) = spec.lambda_w.iter().enumerate().find(|(_, &x)| x > cap) {
        return Err(Error::domain(format!("lambda_W{} = {x} exceeds 1/(L+1) = {cap}", i + 1)));
    }
    let lambda_bar = spec.lambda_h1 * spec.lambda_w.iter().product::<f64>();
    Ok(6.0 * epsilon * (max_width as f64 * depth).sqrt()
        / (depth.powf(depth) * lambda_bar * (spec.per_class as f64).sqrt()))
}

/// Bound on `|L_ε − L|`, the change of the objective when `σ` is replaced
/// by `σ_ε` on a fixed bundle. Each activation moves by at most `ε`, so a
/// column's layer-`l+1` feature error obeys `e_{l+1} ≤ ‖W_l‖ e_l + ε√d_{l+1}`
/// starting from `e_2 = ε√d_2`; the fit term then changes by at most
/// `(1/2N) Σ_j e(2‖r_j‖ + e)` with `e = ‖W_L‖ e_L` and `r_j` the exact residual.
pub fn smoothing_loss_gap_bound(bundle: &SolutionBundle, spec: &ProblemSpec, epsilon: f64) -> Result<f64> {
    SmoothingConfig::new(epsilon)?;
    let trace = forward(bundle, spec, SmoothingConfig::RELU)?;
    let layers = spec.layers;
    let mut e = epsilon * (spec.dim(2) as f64).sqrt();
    for l in 2..layers {
        e = operator_norm(&bundle.weights[l - 1])? * e + epsilon * (spec.dim(l + 1) as f64).sqrt();
    }
    let e = operator_norm(&bundle.weights[layers - 1])? * e;
    let residual = output_residual(trace.pre_activations.last().expect("output layer"), spec.classes, spec.per_class);
    let sum: f64 = residual.column_iter().map(|c| e * (2.0 * c.norm() + e)).sum();
    Ok(sum / (2.0 * spec.samples() as f64))
}

fn operator_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Largest distance between two samples of the same class in `H_l`.
pub fn max_within_class_distance(trace: &ForwardTrace, layer: usize) -> Result<f64> {
    if layer < 1 || layer > trace.layers() {
        return Err(Error::input(format!("layer must lie in 1..={}, got {layer}", trace.layers())));
    }
    let h = trace.features(layer);
    let n = trace.per_class;
    let mut best = 0.0f64;
    for c in 0..trace.classes {
        for i in 0..n {
            for j in i + 1..n {
                let d = (h.column(c * n + i) - h.column(c * n + j)).norm();
                best = best.max(d);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, repeat_columns};
    use crate::problem::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bundle(spec: &ProblemSpec, seed: u64) -> SolutionBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = SolutionBundle::zeros(spec, Provenance::Trained);
        b.h1.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        for w in b.weights.iter_mut() {
            w.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        b
    }

    #[test]
    fn zero_bundle_has_half_loss() {
        let spec = ProblemSpec::uniform(5, 3, 3, 6, 0.01);
        let b = SolutionBundle::zeros(&spec, Provenance::Trained);
        let t = forward(&b, &spec, SmoothingConfig::RELU).unwrap();
        assert!((t.total_loss - 0.5).abs() < 1e-15);
        assert!((t.fit_loss - 0.5).abs() < 1e-15);
        let g = gradients(&b, &spec, SmoothingConfig::RELU).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn trace_invariants() {
        let spec = ProblemSpec::uniform(3, 2, 3, 4, 0.05);
        let b = random_bundle(&spec, 1);
        let s = SmoothingConfig::new(0.1).unwrap();
        let t = forward(&b, &spec, s).unwrap();
        for l in 2..=spec.layers {
            let expected = t.pre_activations[l - 2].map(|x| s.activate(x));
            assert_eq!(t.features(l), &expected);
        }
        assert!((t.total_loss - t.fit_loss - t.reg_total()).abs() < 1e-14);
        assert!((t.column_fit_losses.iter().sum::<f64>() / 6.0 - t.fit_loss).abs() < 1e-15);
        assert_eq!(t.class_fit_losses().len(), 3);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = ProblemSpec::uniform(3, 2, 3, 4, 0.05);
        let mut b = random_bundle(&spec, 1);
        b.weights[2] = Matrix::zeros(3, 5);
        let err = forward(&b, &spec, SmoothingConfig::RELU).unwrap_err();
        assert!(err.to_string().contains("W3"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = ProblemSpec { widths: vec![5, 4, 6], ..ProblemSpec::uniform(3, 2, 3, 1, 0.03) };
        let s = SmoothingConfig::new(1e-3).unwrap();
        let b = random_bundle(&spec, 9);
        let g = gradients(&b, &spec, s).unwrap().variables();
        let f = |vars: &[Matrix]| {
            let bb = SolutionBundle::from_variables(vars.to_vec(), Provenance::Trained);
            loss(&bb, &spec, s).unwrap()
        };
        let fd = finite_difference_gradient(f, &b.variables(), 1e-6);
        for (a, n) in g.iter().zip(&fd) {
            for (x, y) in a.iter().zip(n.iter()) {
                assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn smoother_properties() {
        let s = SmoothingConfig::new(0.5).unwrap();
        assert_eq!(s.activate(0.0), 0.0);
        assert!((s.activate(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(s.activate(-1.0), 0.0);
        assert_eq!(s.activate(2.0), 2.0);
        for i in 1..100 {
            let x = 0.5 * i as f64 / 100.0;
            let h = s.activate(x);
            assert!(h > 0.0 && h < x);
            assert!((h - x + x * (x / 0.5 - 1.0).powi(2)).abs() < 1e-15);
            let d = s.derivative(x);
            assert!(d > 0.0 && d <= 4.0 / 3.0 + 1e-15);
        }
        assert!((s.derivative(2.0 / 3.0 * 0.5) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bound_formula() {
        let spec = ProblemSpec::uniform(10, 1, 4, 30, 0.004);
        assert_eq!(dnc1_distance_bound(&spec, 0.0, 30).unwrap(), 0.0);
        let b = dnc1_distance_bound(&spec, 1e-3, 30).unwrap();
        let hand = 6.0 * 1e-3 * (30.0f64 * 5.0).sqrt() / (5f64.powi(5) * 0.004f64.powi(5));
        assert!((b - hand).abs() <= 1e-12 * hand);
        let b2 = dnc1_distance_bound(&spec, 2e-3, 30).unwrap();
        assert!((b2 - 2.0 * b).abs() <= 1e-12 * b2);
        let heavy = ProblemSpec::uniform(10, 1, 4, 30, 0.3);
        let err = dnc1_distance_bound(&heavy, 1e-3, 30).unwrap_err();
        assert!(err.to_string().contains("lambda_H1"));
    }

    #[test]
    fn within_class_distance() {
        let spec = ProblemSpec::uniform(2, 3, 2, 3, 0.01);
        let mut b = random_bundle(&spec, 4);
        let m1 = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3);
        b.h1 = repeat_columns(&m1, 3);
        let t = forward(&b, &spec, SmoothingConfig::RELU).unwrap();
        for l in 1..=2 {
            assert_eq!(max_within_class_distance(&t, l).unwrap(), 0.0);
        }
        b.h1[(1, 4)] += 0.25;
        let t = forward(&b, &spec, SmoothingConfig::RELU).unwrap();
        assert!((max_within_class_distance(&t, 1).unwrap() - 0.25).abs() < 1e-15);

        let single = ProblemSpec::uniform(2, 1, 2, 3, 0.01);
        let t = forward(&random_bundle(&single, 2), &single, SmoothingConfig::RELU).unwrap();
        assert_eq!(max_within_class_distance(&t, 2).unwrap(), 0.0);
    }

    #[test]
    fn smoothing_gap_is_bounded() {
        let spec = ProblemSpec::uniform(4, 3, 4, 7, 0.01);
        for seed in 0..10 {
            let b = random_bundle(&spec, seed);
            let exact = loss(&b, &spec, SmoothingConfig::RELU).unwrap();
            assert_eq!(smoothing_loss_gap_bound(&b, &spec, 0.0).unwrap(), 0.0);
            for eps in [1e-1, 1e-2, 1e-3] {
                let smooth = loss(&b, &spec, SmoothingConfig::new(eps).unwrap()).unwrap();
                let bound = smoothing_loss_gap_bound(&b, &spec, eps).unwrap();
                assert!((smooth - exact).abs() <= bound, "seed {seed} eps {eps}");
            }
        }
    }
}
