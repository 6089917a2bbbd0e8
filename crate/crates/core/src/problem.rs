//! Problem parameterization and the optimization variables of the DUFM
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A deep unconstrained features model instance.
///
/// `widths[l-1]` is `d_l` for `l = 1..=L`; the output dimension `d_{L+1}` is
/// always the number of classes. `lambda_w[l-1]` regularizes `W_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub classes: usize,
    pub per_class: usize,
    pub layers: usize,
    pub widths: Vec<usize>,
    pub lambda_h1: f64,
    pub lambda_w: Vec<f64>,
}

impl ProblemSpec {
    /// Same width and the same regularization weight everywhere.
    pub fn uniform(classes: usize, per_class: usize, layers: usize, width: usize, lambda: f64) -> Self {
        Self {
            classes,
            per_class,
            layers,
            widths: vec![width; layers],
            lambda_h1: lambda,
            lambda_w: vec![lambda; layers],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 {
            return Err(Error::input("at least one class is required"));
        }
        if self.per_class < 1 {
            return Err(Error::input("samples per class must be at least 1"));
        }
        if self.layers < 2 {
            return Err(Error::input(format!("depth must be at least 2, got {}", self.layers)));
        }
        if self.widths.len() != self.layers || self.lambda_w.len() != self.layers {
            return Err(Error::input(format!(
                "expected {} widths and {} weight-decay values, got {} and {}",
                self.layers,
                self.layers,
                self.widths.len(),
                self.lambda_w.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::input("layer widths must be positive"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.lambda_h1) || !self.lambda_w.iter().all(|&x| positive(x)) {
            return Err(Error::input("all regularization weights must be finite and strictly positive"));
        }
        Ok(())
    }

    /// Validation plus the width requirement of the closed-form constructions.
    pub fn validate_for_construction(&self) -> Result<()> {
        self.validate()?;
        if let Some((l, d)) = self.widths.iter().enumerate().find(|(_, &d)| d < self.classes) {
            return Err(Error::domain(format!(
                "width d_{} = {d} is smaller than the number of classes {}",
                l + 1,
                self.classes
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.classes * self.per_class
    }

    /// `d_l` for `l = 1..=L+1`.
    pub fn dim(&self, l: usize) -> usize {
        if l == self.layers + 1 {
            self.classes
        } else {
            self.widths[l - 1]
        }
    }

    /// `λ_{W_l}` for `l = 1..=L`.
    pub fn lambda(&self, l: usize) -> f64 {
        self.lambda_w[l - 1]
    }

    /// Copy with every regularization weight multiplied by `factor`.
    pub fn scaled_regularization(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.lambda_h1 *= factor;
        out.lambda_w.iter_mut().for_each(|x| *x *= factor);
        out
    }

    pub fn with_classes(&self, classes: usize, width: usize) -> Self {
        Self { classes, widths: vec![width; self.layers], ..self.clone() }
    }

    /// Largest regularization weight.
    pub fn max_lambda(&self) -> f64 {
        self.lambda_w.iter().copied().fold(self.lambda_h1, f64::max)
    }
}

/// Where a solution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Srg,
    Dnc,
    SrgGeneralBlockdiag,
    SrgGeneralTruncated,
    Trained,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Srg => "srg",
            Provenance::Dnc => "dnc",
            Provenance::SrgGeneralBlockdiag => "srg_general_blockdiag",
            Provenance::SrgGeneralTruncated => "srg_general_truncated",
            Provenance::Trained => "trained",
        }
    }
}

/// First-layer features `H_1` (`d_1 × N`) and weights `W_1..W_L`, where
/// `W_l` is `d_{l+1} × d_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionBundle {
    pub h1: Matrix,
    pub weights: Vec<Matrix>,
    pub provenance: Provenance,
}

impl SolutionBundle {
    pub fn zeros(spec: &ProblemSpec, provenance: Provenance) -> Self {
        let h1 = Matrix::zeros(spec.dim(1), spec.samples());
        let weights = (1..=spec.layers).map(|l| Matrix::zeros(spec.dim(l + 1), spec.dim(l))).collect();
        Self { h1, weights, provenance }
    }

    pub fn check_shapes(&self, spec: &ProblemSpec) -> Result<()> {
        if self.weights.len() != spec.layers {
            return Err(Error::shape(
                "bundle",
                format!("expected {} weight matrices, found {}", spec.layers, self.weights.len()),
            ));
        }
        if self.h1.shape() != (spec.dim(1), spec.samples()) {
            return Err(Error::shape(
                "H1",
                format!("expected {:?}, found {:?}", (spec.dim(1), spec.samples()), self.h1.shape()),
            ));
        }
        for (i, w) in self.weights.iter().enumerate() {
            let l = i + 1;
            let want = (spec.dim(l + 1), spec.dim(l));
            if w.shape() != want {
                return Err(Error::shape(format!("W{l}"), format!("expected {want:?}, found {:?}", w.shape())));
            }
        }
        Ok(())
    }

    /// All variables as one list: `[H1, W1, …, WL]`.
    pub fn variables(&self) -> Vec<Matrix> {
        std::iter::once(self.h1.clone()).chain(self.weights.iter().cloned()).collect()
    }

    pub fn from_variables(mut vars: Vec<Matrix>, provenance: Provenance) -> Self {
        let h1 = vars.remove(0);
        Self { h1, weights: vars, provenance }
    }
}
