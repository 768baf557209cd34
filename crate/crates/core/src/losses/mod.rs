//! Self-supervised objectives over per-modality embeddings.
//!
//! Every loss returns its value together with the gradient with respect to
//! each embedding matrix it consumed, so it can be spliced into a tape with
//! [`crate::autodiff::Tape::scalar_fn`].

mod barlow;
mod cmc;
mod cocoa;
mod complexity;
mod pairwise;
mod similarity;

pub use barlow::{barlow_twins_loss, BARLOW_EPS};
pub use cmc::cmc_loss;
pub use cocoa::{cocoa_loss, cocoa_negative_term, cocoa_positive_term, CocoaHyper};
pub use complexity::{count_formula, CountedMethod};
pub use pairwise::{dcl_loss, hard_dcl_loss, hard_negative_weights, infonce_loss};
pub use similarity::{cosine_sim, OpCounter, SimilarityKind, SimilarityMatrix};

use crate::tensor::Tensor;

/// Loss value plus one gradient per input embedding matrix, in input order.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Tensor>,
    /// Non-fatal numerical observations (e.g. zero-variance dimensions).
    pub diagnostics: Vec<String>,
}

impl LossOutput {
    pub(crate) fn new(value: f64, grads: Vec<Tensor>) -> Self {
        Self {
            value,
            grads,
            diagnostics: Vec::new(),
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> crate::Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(crate::Error::Config(format!(
            "temperature must be positive and finite, got {tau}"
        )))
    }
}
