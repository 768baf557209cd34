use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel used to compare two embedding vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    /// Normalized dot product, bounded in [-1, 1].
    #[default]
    Cosine,
    /// Raw dot product.
    Dot,
}

/// Counts unique vector-pair similarity evaluations, the unit of cost of a
/// contrastive objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub similarity_evaluations: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn tick(&mut self) {
        self.similarity_evaluations += 1;
    }

    pub fn reset(&mut self) {
        self.similarity_evaluations = 0;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric(
            "cosine similarity of a zero-norm or non-finite vector".into(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Square matrix of pairwise similarities between the rows of one embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub kind: SimilarityKind,
    pub size: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(z: &Tensor, kind: SimilarityKind) -> Result<Self> {
        let view = SimView::new(z, kind)?;
        let n = view.rows;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = view.sim(i, &view, j);
            }
        }
        Ok(Self {
            kind,
            size: n,
            values,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

/// Rows of an embedding matrix prepared for repeated similarity evaluation:
/// unit vectors plus norms under cosine, raw rows under dot.
pub(crate) struct SimView {
    kind: SimilarityKind,
    pub rows: usize,
    pub dim: usize,
    vecs: Vec<f64>,
    norms: Vec<f64>,
}

impl SimView {
    pub fn new(z: &Tensor, kind: SimilarityKind) -> Result<Self> {
        if z.rank() != 2 {
            return Err(Error::Config(format!(
                "expected N×d embeddings, got {:?}",
                z.shape()
            )));
        }
        let (rows, dim) = (z.rows(), z.cols());
        match kind {
            SimilarityKind::Dot => Ok(Self {
                kind,
                rows,
                dim,
                vecs: z.data().to_vec(),
                norms: vec![1.0; rows],
            }),
            SimilarityKind::Cosine => {
                let mut vecs = Vec::with_capacity(rows * dim);
                let mut norms = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = z.row(r);
                    let norm = dot(row, row).sqrt();
                    if !(norm > 0.0) || !norm.is_finite() {
                        return Err(Error::Numeric(format!(
                            "embedding row {r} has zero or non-finite norm"
                        )));
                    }
                    norms.push(norm);
                    vecs.extend(row.iter().map(|v| v / norm));
                }
                Ok(Self {
                    kind,
                    rows,
                    dim,
                    vecs,
                    norms,
                })
            }
        }
    }

    #[inline]
    fn vec(&self, i: usize) -> &[f64] {
        &self.vecs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sim(&self, i: usize, other: &SimView, j: usize) -> f64 {
        dot(self.vec(i), other.vec(j))
    }

    /// Adds `coeff · ∂S(self_i, other_j)/∂self_i` to `out` (row `i` of the gradient).
    #[inline]
    pub fn add_grad(&self, i: usize, other: &SimView, j: usize, s: f64, coeff: f64, out: &mut [f64]) {
        let b = other.vec(j);
        match self.kind {
            SimilarityKind::Dot => {
                for (o, &bv) in out.iter_mut().zip(b) {
                    *o += coeff * bv;
                }
            }
            SimilarityKind::Cosine => {
                let a = self.vec(i);
                let scale = coeff / self.norms[i];
                for ((o, &bv), &av) in out.iter_mut().zip(b).zip(a) {
                    *o += scale * (bv - s * av);
                }
            }
        }
    }

    /// Full `rows × other.rows` similarity matrix; one counter tick per entry.
    pub fn cross(&self, other: &SimView, counter: &mut OpCounter) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                counter.tick();
                out.push(self.sim(i, other, j));
            }
        }
        out
    }
}

/// Accumulates `Σ_{t,t'} dS[t,t'] · ∂S(a_t, b_t')` into both gradient matrices.
pub(crate) fn chain_cross(
    a: &SimView,
    b: &SimView,
    sims: &[f64],
    d_sims: &[f64],
    grad_a: &mut Tensor,
    grad_b: &mut Tensor,
) {
    let n_b = b.rows;
    for i in 0..a.rows {
        for j in 0..n_b {
            let c = d_sims[i * n_b + j];
            if c == 0.0 {
                continue;
            }
            let s = sims[i * n_b + j];
            a.add_grad(i, b, j, s, c, grad_a.row_mut(i));
            b.add_grad(j, a, i, s, c, grad_b.row_mut(j));
        }
    }
}
