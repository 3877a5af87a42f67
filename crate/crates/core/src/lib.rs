//! Unsupervised aggregation of predictions from many pre-trained models.
//!
//! The pipeline takes a d x n matrix of predictions (d models, n samples)
//! whose rows share a common rank-one signal under model- and sample-level
//! heteroskedastic noise, and returns
//!
//! * a consensus score per sample (`v_hat`), and
//! * a sparse weight per model (`u_hat`) that ranks the models.
//!
//! Steps: row normalization, bi-whitening by Dyson rank-one variance factors
//! ([`stabilize`]), sparse rank-one recovery by approximate message passing
//! ([`amp`]) and, when the sparsity is unknown, K-fold selection of the
//! sparsity ratio ([`cv`]). [`baselines`], [`state_evolution`], [`synthgen`]
//! and [`eval`] support benchmarking against known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amp;
pub mod baselines;
pub mod cli;
pub mod cv;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod stabilize;
pub mod state_evolution;
pub mod synthgen;

pub use error::{Error, Result};
pub use matrix::{Orientation, PredictionMatrix};

/// `ceil(frac * count)`, treating products within 1e-9 of an integer as that integer.
pub(crate) fn ceil_fraction(frac: f64, count: usize) -> usize {
    let x = frac * count as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}
