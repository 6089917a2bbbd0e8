//! Complete-graph incidence matrices and triangular graphs.
//!
//! The triangular graph `T(r)` is the line graph of the complete graph on
//! `r` vertices: its vertices are the `r(r-1)/2` edges `(i, j)`, `i < j`,
//! of `K_r`, adjacent when the edges share exactly one endpoint. It is
//! strongly regular with parameters `(r(r-1)/2, 2(r-2), r-2, 4)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Smallest complete-graph order supported by the SRG construction.
pub const MIN_ORDER: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct TriangularGraph {
    order: usize,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    incidence: Matrix,
    #[serde(skip)]
    adjacency: Matrix,
}

/// One eigenvalue together with its multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectrumEntry {
    pub value: f64,
    pub multiplicity: usize,
}

pub fn binomial2(r: usize) -> usize {
    r * r.saturating_sub(1) / 2
}

/// Returns `r` when `k = r(r-1)/2` for some `r ≥ 2`.
pub fn triangular_root(k: usize) -> Option<usize> {
    let r = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).round() as usize;
    (r >= 2 && binomial2(r) == k).then_some(r)
}

/// Edges of `K_r` in lexicographic order.
pub fn lexicographic_pairs(r: usize) -> Vec<(usize, usize)> {
    (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).collect()
}

fn check_order(r: usize) -> Result<()> {
    if r < MIN_ORDER {
        return Err(Error::domain(format!("triangular graph order must be at least {MIN_ORDER}, got {r}")));
    }
    Ok(())
}

impl TriangularGraph {
    pub fn new(r: usize) -> Result<Self> {
        check_order(r)?;
        let edges = lexicographic_pairs(r);
        let k = edges.len();
        let entry = 1.0 / ((r - 1) as f64).sqrt();
        let mut incidence = Matrix::zeros(r, k);
        for (col, &(i, j)) in edges.iter().enumerate() {
            incidence[(i, col)] = entry;
            incidence[(j, col)] = entry;
        }
        let adjacency = Matrix::from_fn(k, k, |e, f| {
            let (a, b) = edges[e];
            let (c, d) = edges[f];
            let shared = [a == c, a == d, b == c, b == d].iter().filter(|&&x| x).count();
            if e != f && shared == 1 {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { order: r, edges, incidence, adjacency })
    }

    /// Order `r` of the underlying complete graph.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of vertices of the triangular graph, i.e. classes `K`.
    pub fn classes(&self) -> usize {
        self.edges.len()
    }

    /// Normalized incidence matrix `T_r` (`r × K`).
    pub fn incidence(&self) -> &Matrix {
        &self.incidence
    }

    /// 0/1 adjacency matrix `G_r` (`K × K`).
    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Adjacency spectrum predicted by strong regularity.
    pub fn predicted_spectrum(&self) -> Vec<SpectrumEntry> {
        let r = self.order;
        vec![
            SpectrumEntry { value: 2.0 * (r as f64 - 2.0), multiplicity: 1 },
            SpectrumEntry { value: r as f64 - 4.0, multiplicity: r - 1 },
            SpectrumEntry { value: -2.0, multiplicity: r * (r - 3) / 2 },
        ]
    }

    /// Strongly-regular parameters measured directly from the adjacency
    /// matrix by counting neighbourhoods. Returns `None` when the graph is
    /// not strongly regular.
    pub fn measured_parameters(&self) -> Option<(usize, usize, usize, usize)> {
        let k = self.classes();
        let adj = |a: usize, b: usize| self.adjacency[(a, b)] == 1.0;
        let degree = (0..k).filter(|&b| adj(0, b)).count();
        let mut lambda = None;
        let mut mu = None;
        for a in 0..k {
            if (0..k).filter(|&b| adj(a, b)).count() != degree {
                return None;
            }
            for b in a + 1..k {
                let common = (0..k).filter(|&c| adj(a, c) && adj(b, c)).count();
                let slot = if adj(a, b) { &mut lambda } else { &mut mu };
                match slot {
                    None => *slot = Some(common),
                    Some(v) if *v != common => return None,
                    _ => {}
                }
            }
        }
        Some((k, degree, lambda.unwrap_or(0), mu.unwrap_or(0)))
    }
}

/// `(v, k, λ, μ) = (r(r-1)/2, 2(r-2), r-2, 4)`.
pub fn srg_parameters(r: usize) -> Result<(usize, usize, usize, usize)> {
    check_order(r)?;
    Ok((binomial2(r), 2 * (r - 2), r - 2, 4))
}

/// Max absolute deviation of `T_r T_rᵀ` from `(r-2)/(r-1) I + 1/(r-1) 𝟏𝟏ᵀ`.
pub fn gram_identity_check(graph: &TriangularGraph) -> f64 {
    let r = graph.order() as f64;
    let t = graph.incidence();
    let gram = t * t.transpose();
    let n = graph.order();
    let expected = Matrix::from_fn(n, n, |i, j| {
        let ones = 1.0 / (r - 1.0);
        if i == j {
            (r - 2.0) / (r - 1.0) + ones
        } else {
            ones
        }
    });
    crate::numerics::max_abs_diff(&gram, &expected)
}
