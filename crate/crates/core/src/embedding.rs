use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-modality embeddings: `V` matrices of shape `N×d`, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    views: Vec<Tensor>,
}

impl EmbeddingSet {
    pub fn new(views: Vec<Tensor>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::Config("embedding set needs at least one modality".into()))?;
        if first.rank() != 2 {
            return Err(Error::Config(format!(
                "embeddings must be N×d matrices, got {:?}",
                first.shape()
            )));
        }
        for (v, m) in views.iter().enumerate() {
            if m.shape() != first.shape() {
                return Err(Error::Config(format!(
                    "modality {v} has shape {:?}, modality 0 has {:?}",
                    m.shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self { views })
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn batch_size(&self) -> usize {
        self.views[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.views[0].cols()
    }

    pub fn view(&self, v: usize) -> &Tensor {
        &self.views[v]
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn views_mut(&mut self) -> &mut [Tensor] {
        &mut self.views
    }

    pub fn into_views(self) -> Vec<Tensor> {
        self.views
    }

    /// `N×(V·d)` matrix with modality blocks in declaration order.
    pub fn concat(&self) -> Tensor {
        let (n, d, v) = (self.batch_size(), self.dim(), self.num_views());
        let mut data = Vec::with_capacity(n * d * v);
        for r in 0..n {
            for view in &self.views {
                data.extend_from_slice(view.row(r));
            }
        }
        Tensor::new(vec![n, v * d], data).expect("non-empty by construction")
    }
}
