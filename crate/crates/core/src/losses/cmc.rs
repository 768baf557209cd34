use super::pairwise::infonce_from_sims;
use super::similarity::{chain_cross, OpCounter, SimView, SimilarityKind};
use super::{check_tau, LossOutput};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sum of InfoNCE over every ordered modality pair.
///
/// The `N×N` cross-similarity matrix of an unordered pair is computed once and
/// read row-wise for one direction and column-wise for the other.
pub fn cmc_loss(z: &EmbeddingSet, tau: f64, kind: SimilarityKind, counter: &mut OpCounter) -> Result<LossOutput> {
    check_tau(tau)?;
    let (v_count, n) = (z.num_views(), z.batch_size());
    if v_count < 2 {
        return Err(Error::Config(format!("CMC needs at least 2 modalities, got {v_count}")));
    }
    if n < 2 {
        return Err(Error::Config(format!("CMC needs a batch of at least 2, got {n}")));
    }
    let sv: Vec<SimView> = z
        .views()
        .iter()
        .map(|m| SimView::new(m, kind))
        .collect::<Result<_>>()?;
    let mut grads: Vec<Tensor> = z.views().iter().map(|m| Tensor::zeros(m.shape())).collect();
    let mut value = 0.0;
    for v in 0..v_count {
        for w in v + 1..v_count {
            let sims = sv[v].cross(&sv[w], counter);
            let (fwd, mut d) = infonce_from_sims(&sims, n, tau, false);
            let (bwd, d_t) = infonce_from_sims(&sims, n, tau, true);
            value += fwd + bwd;
            d.iter_mut().zip(&d_t).for_each(|(a, b)| *a += b);
            let (lo, hi) = grads.split_at_mut(w);
            chain_cross(&sv[v], &sv[w], &sims, &d, &mut lo[v], &mut hi[0]);
        }
    }
    Ok(LossOutput::new(value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_two_views() {
        let m = Tensor::new(vec![3, 2], vec![1., 2., 1., 2., 1., 2.]).unwrap();
        let z = EmbeddingSet::new(vec![m.clone(), m]).unwrap();
        let out = cmc_loss(&z, 0.1, SimilarityKind::Cosine, &mut OpCounter::new()).unwrap();
        assert!((out.value - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn counts_n_squared_per_unordered_pair() {
        let m = Tensor::new(vec![4, 2], vec![1., 2., 3., 1., 0.5, 2., 1., 1.]).unwrap();
        let z = EmbeddingSet::new(vec![m.clone(), m.clone(), m]).unwrap();
        let mut c = OpCounter::new();
        cmc_loss(&z, 0.5, SimilarityKind::Cosine, &mut c).unwrap();
        assert_eq!(c.similarity_evaluations, 48);
    }

    #[test]
    fn single_view_rejected() {
        let m = Tensor::new(vec![2, 2], vec![1., 2., 3., 1.]).unwrap();
        let z = EmbeddingSet::new(vec![m]).unwrap();
        assert!(matches!(
            cmc_loss(&z, 0.5, SimilarityKind::Cosine, &mut OpCounter::new()),
            Err(Error::Config(_))
        ));
    }
}
