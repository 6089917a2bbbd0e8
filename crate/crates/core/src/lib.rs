//! A laboratory for the deep unconstrained features model (DUFM).
//!
//! The crate builds the two closed-form families of DUFM solutions — deep
//! neural collapse (DNC), where every layer's class means form an
//! orthogonal frame, and the low-rank strongly-regular-graph (SRG)
//! construction built from triangular graphs — evaluates their loss in
//! closed form, certifies the linear-algebra lemmas they rely on, trains
//! the model with full-batch gradient descent and measures collapse.
//!
//! ```
//! use dnc_lab::problem::ProblemSpec;
//! use dnc_lab::constructions::compare_srg_dnc;
//!
//! let spec = ProblemSpec::uniform(10, 1, 4, 10, 0.004);
//! let cmp = compare_srg_dnc(&spec).unwrap();
//! assert!(cmp.srg_wins);
//! ```

pub mod constructions;
pub mod dufm;
pub mod error;
pub mod graphs;
pub mod metrics;
pub mod numerics;
pub mod persistence;
pub mod problem;
pub mod report;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

/// The guide's chapters, compiled as doc-tests so the snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/constructions.md")]
    mod constructions {}
    #[doc = include_str!("../../../book/src/comparison.md")]
    mod comparison {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
pub use numerics::Matrix;
pub use problem::{ProblemSpec, Provenance, SolutionBundle};
