//! Cross-modality correlation plus intra-modality discriminator.
//!
//! Positives are the aligned readings of one sample across modalities; negatives
//! are distinct samples inside one modality. Pairs are visited once each
//! (similarity is symmetric), so one call costs `N·V(V−1)/2 + V·N(N−1)/2`
//! similarity evaluations instead of the `V(V−1)/2·N²` of all-pairs contrast.

use serde::{Deserialize, Serialize};

use super::similarity::{OpCounter, SimView, SimilarityKind};
use super::{check_tau, LossOutput};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoaHyper {
    /// Temperature dividing every exponent.
    pub tau: f64,
    /// Weight of the discriminator term.
    pub lambda: f64,
}

impl Default for CocoaHyper {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 1.0,
        }
    }
}

impl CocoaHyper {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn views(z: &EmbeddingSet) -> Result<Vec<SimView>> {
    z.views()
        .iter()
        .map(|m| SimView::new(m, SimilarityKind::Cosine))
        .collect()
}

fn zero_grads(z: &EmbeddingSet) -> Vec<Tensor> {
    z.views().iter().map(|m| Tensor::zeros(m.shape())).collect()
}

fn positive_into(
    z: &EmbeddingSet,
    sv: &[SimView],
    tau: f64,
    counter: &mut OpCounter,
    weight: f64,
    grads: &mut [Tensor],
) -> f64 {
    let (v_count, n) = (z.num_views(), z.batch_size());
    let mut value = 0.0;
    for t in 0..n {
        for v in 0..v_count {
            for w in v + 1..v_count {
                let s = sv[v].sim(t, &sv[w], t);
                counter.tick();
                let e = ((1.0 - s) / tau).exp();
                // (v, w) and (w, v) contribute identically
                value += 2.0 * e;
                let coeff = -2.0 * e / tau * weight;
                let (lo, hi) = grads.split_at_mut(w);
                sv[v].add_grad(t, &sv[w], t, s, coeff, lo[v].row_mut(t));
                sv[w].add_grad(t, &sv[v], t, s, coeff, hi[0].row_mut(t));
            }
        }
    }
    value
}

fn negative_into(
    z: &EmbeddingSet,
    sv: &[SimView],
    tau: f64,
    counter: &mut OpCounter,
    weight: f64,
    grads: &mut [Tensor],
) -> f64 {
    let n = z.batch_size();
    // mean over the N(N−1) ordered off-diagonal pairs
    let norm = 1.0 / (n * (n - 1)) as f64;
    let mut value = 0.0;
    for (view, grad) in sv.iter().zip(grads.iter_mut()) {
        for t in 0..n {
            for u in t + 1..n {
                let s = view.sim(t, view, u);
                counter.tick();
                let e = (s / tau).exp();
                value += 2.0 * norm * e;
                let coeff = 2.0 * norm * e / tau * weight;
                view.add_grad(t, view, u, s, coeff, grad.row_mut(t));
                view.add_grad(u, view, t, s, coeff, grad.row_mut(u));
            }
        }
    }
    value
}

fn require_views(z: &EmbeddingSet) -> Result<()> {
    if z.num_views() < 2 {
        return Err(Error::Config(format!(
            "cross-modal term needs at least 2 modalities, got {}",
            z.num_views()
        )));
    }
    Ok(())
}

fn require_batch(z: &EmbeddingSet) -> Result<()> {
    if z.batch_size() < 2 {
        return Err(Error::Config(format!(
            "discriminator term needs a batch of at least 2, got {}",
            z.batch_size()
        )));
    }
    Ok(())
}

/// `Σ_t Σ_{v≠w} exp((1 − S_vw^tt)/τ)` over ordered modality pairs.
pub fn cocoa_positive_term(z: &EmbeddingSet, hyper: &CocoaHyper, counter: &mut OpCounter) -> Result<LossOutput> {
    hyper.validate()?;
    require_views(z)?;
    let sv = views(z)?;
    let mut grads = zero_grads(z);
    let value = positive_into(z, &sv, hyper.tau, counter, 1.0, &mut grads);
    Ok(LossOutput::new(value, grads))
}

/// `Σ_v mean_{t≠t'} exp(S_vv^tt'/τ)`.
pub fn cocoa_negative_term(z: &EmbeddingSet, hyper: &CocoaHyper, counter: &mut OpCounter) -> Result<LossOutput> {
    hyper.validate()?;
    require_batch(z)?;
    let sv = views(z)?;
    let mut grads = zero_grads(z);
    let value = negative_into(z, &sv, hyper.tau, counter, 1.0, &mut grads);
    Ok(LossOutput::new(value, grads))
}

/// Positive term plus `λ` times the negative term.
pub fn cocoa_loss(z: &EmbeddingSet, hyper: &CocoaHyper, counter: &mut OpCounter) -> Result<LossOutput> {
    hyper.validate()?;
    require_views(z)?;
    require_batch(z)?;
    let sv = views(z)?;
    let mut grads = zero_grads(z);
    let pos = positive_into(z, &sv, hyper.tau, counter, 1.0, &mut grads);
    let neg = negative_into(z, &sv, hyper.tau, counter, hyper.lambda, &mut grads);
    Ok(LossOutput::new(pos + hyper.lambda * neg, grads))
}
