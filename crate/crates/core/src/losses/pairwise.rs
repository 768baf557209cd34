//! Two-view objectives: InfoNCE and the debiased variants.
//!
//! Anchor row `t` of one view is positive with row `t` of the other view and
//! negative with every other row of it. All three losses are batch means.

use super::similarity::{chain_cross, OpCounter, SimView, SimilarityKind};
use super::{check_tau, LossOutput};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn prepare(anchor: &Tensor, other: &Tensor, kind: SimilarityKind) -> Result<(SimView, SimView)> {
    if anchor.rank() != 2 || anchor.shape() != other.shape() {
        return Err(Error::Config(format!(
            "views must be equal N×d matrices, got {:?} and {:?}",
            anchor.shape(),
            other.shape()
        )));
    }
    if anchor.rows() < 2 {
        return Err(Error::Config(format!(
            "contrastive loss needs a batch of at least 2, got {}",
            anchor.rows()
        )));
    }
    Ok((SimView::new(anchor, kind)?, SimView::new(other, kind)?))
}

fn finish(a: &SimView, b: &SimView, sims: &[f64], d_sims: &[f64], value: f64, shape: &[usize]) -> LossOutput {
    let mut grad_a = Tensor::zeros(shape);
    let mut grad_b = Tensor::zeros(shape);
    chain_cross(a, b, sims, d_sims, &mut grad_a, &mut grad_b);
    LossOutput::new(value, vec![grad_a, grad_b])
}

/// InfoNCE value and `∂L/∂S` for an `N×N` similarity matrix whose diagonal holds
/// the positives. With `transposed`, anchors index columns instead of rows.
pub(crate) fn infonce_from_sims(sims: &[f64], n: usize, tau: f64, transposed: bool) -> (f64, Vec<f64>) {
    let at = |i: usize, j: usize| if transposed { j * n + i } else { i * n + j };
    let mut d = vec![0.0; n * n];
    let mut value = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    let mut logits = vec![0.0; n];
    for i in 0..n {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = sims[at(i, j)] / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        value += max + denom.ln() - logits[i];
        for j in 0..n {
            let p = (logits[j] - max).exp() / denom;
            let target = if i == j { 1.0 } else { 0.0 };
            d[at(i, j)] += scale * (p - target);
        }
    }
    (value / n as f64, d)
}

/// `mean_t −log( e^{S_tt/τ} / Σ_t' e^{S_tt'/τ} )`.
pub fn infonce_loss(
    anchor: &Tensor,
    other: &Tensor,
    tau: f64,
    kind: SimilarityKind,
    counter: &mut OpCounter,
) -> Result<LossOutput> {
    check_tau(tau)?;
    let (a, b) = prepare(anchor, other, kind)?;
    let sims = a.cross(&b, counter);
    let (value, d) = infonce_from_sims(&sims, a.rows, tau, false);
    Ok(finish(&a, &b, &sims, &d, value, anchor.shape()))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("eps must be positive, got {eps}")))
    }
}

/// Shared body of the debiased losses. `reweigh(negatives)` returns the weighted
/// negative mass `Σ w_i e^{s_i}` and its derivative with respect to each `s_i`.
fn debiased<F>(sims: &[f64], n: usize, tau: f64, eps: f64, mut reweigh: F) -> (f64, Vec<f64>)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n_neg = (n - 1) as f64;
    let mut d = vec![0.0; n * n];
    let mut value = 0.0;
    let mut negs = Vec::with_capacity(n - 1);
    for t in 0..n {
        let s_pos = sims[t * n + t];
        negs.clear();
        negs.extend((0..n).filter(|&u| u != t).map(|u| sims[t * n + u]));
        // neg_mass = Σ w_i e^{s_i}; neg_grad_i = ∂neg_mass/∂s_i
        let (neg_mass, neg_grad) = reweigh(&negs);
        let e_pos = s_pos.exp();
        let raw = (neg_mass / n_neg + e_pos) / tau;
        let clamped = raw < eps;
        let g = if clamped { eps } else { raw };
        let denom = e_pos + n_neg * g;
        value += denom.ln() - s_pos;

        let dg_dpos = if clamped { 0.0 } else { e_pos / tau };
        d[t * n + t] += (e_pos + n_neg * dg_dpos) / denom - 1.0;
        if !clamped {
            let mut k = 0;
            for u in 0..n {
                if u == t {
                    continue;
                }
                let dg = neg_grad[k] / (n_neg * tau);
                d[t * n + u] += n_neg * dg / denom;
                k += 1;
            }
        }
    }
    let inv = 1.0 / n as f64;
    d.iter_mut().for_each(|v| *v *= inv);
    (value * inv, d)
}

/// Debiased contrastive loss in the clamped form
/// `g = max{(1/τ)(mean_neg e^{s⁻} + e^{s⁺}), ε}`, `L = −log(e^{s⁺} / (e^{s⁺} + N_neg·g))`.
pub fn dcl_loss(
    anchor: &Tensor,
    other: &Tensor,
    tau: f64,
    eps: f64,
    kind: SimilarityKind,
    counter: &mut OpCounter,
) -> Result<LossOutput> {
    check_tau(tau)?;
    check_eps(eps)?;
    let (a, b) = prepare(anchor, other, kind)?;
    let sims = a.cross(&b, counter);
    let (value, d) = debiased(&sims, a.rows, tau, eps, |negs| {
        let e: Vec<f64> = negs.iter().map(|s| s.exp()).collect();
        (e.iter().sum(), e)
    });
    Ok(finish(&a, &b, &sims, &d, value, anchor.shape()))
}

/// Hard-negative weights `w_i = β e^{s_i} / Σ_j e^{s_j}` over one anchor's negatives.
pub fn hard_negative_weights(negatives: &[f64], beta: f64) -> Vec<f64> {
    let e: Vec<f64> = negatives.iter().map(|s| s.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| beta * v / z).collect()
}

/// DCL with negatives reweighted towards the hardest ones.
pub fn hard_dcl_loss(
    anchor: &Tensor,
    other: &Tensor,
    tau: f64,
    eps: f64,
    beta: f64,
    kind: SimilarityKind,
    counter: &mut OpCounter,
) -> Result<LossOutput> {
    check_tau(tau)?;
    check_eps(eps)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    let (a, b) = prepare(anchor, other, kind)?;
    let sims = a.cross(&b, counter);
    let (value, d) = debiased(&sims, a.rows, tau, eps, |negs| {
        // Σ w_i e^{s_i} = β Q / Z with Q = Σ e^{2s}, Z = Σ e^{s}
        let e: Vec<f64> = negs.iter().map(|s| s.exp()).collect();
        let z: f64 = e.iter().sum();
        let q: f64 = e.iter().map(|v| v * v).sum();
        let grad = e
            .iter()
            .map(|&ek| beta * (2.0 * ek * ek / z - q * ek / (z * z)))
            .collect();
        (beta * q / z, grad)
    });
    Ok(finish(&a, &b, &sims, &d, value, anchor.shape()))
}
