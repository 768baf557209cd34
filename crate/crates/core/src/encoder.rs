//! Modality-specific temporal convolutional encoders.
//!
//! Each modality branch is `(conv → ReLU → layer norm) × 3 → temporal mean →
//! projection dense`; one fusion dense layer is shared by all branches and maps
//! every modality into the same embedding space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::batching::{ModalityBatch, ModalitySpec};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Rows encoded per tape during inference.
const INFERENCE_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityChannels {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kernel_sizes: Vec<usize>,
    pub filter_counts: Vec<usize>,
    pub projection_dim: usize,
    pub fusion_dim: usize,
    pub window_length: usize,
    pub modalities: Vec<ModalityChannels>,
}

impl EncoderConfig {
    /// Default architecture (kernels 10/8/4, filters 24/48/20, 32-wide heads) for the given inputs.
    pub fn new(modalities: Vec<ModalityChannels>, window_length: usize) -> Self {
        Self {
            kernel_sizes: vec![10, 8, 4],
            filter_counts: vec![24, 48, 20],
            projection_dim: 32,
            fusion_dim: 32,
            window_length,
            modalities,
        }
    }

    /// Default architecture sized for a dataset's modalities.
    pub fn for_modalities(specs: &[ModalitySpec]) -> Result<Self> {
        let window = specs
            .first()
            .ok_or_else(|| Error::Config("no modalities".into()))?
            .window;
        if let Some(m) = specs.iter().find(|m| m.window != window) {
            return Err(Error::Config(format!(
                "modality {} has window {}, expected {window}",
                m.name, m.window
            )));
        }
        let mods = specs
            .iter()
            .map(|m| ModalityChannels {
                name: m.name.clone(),
                channels: m.channels,
            })
            .collect();
        let cfg = Self::new(mods, window);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Time steps left after the valid convolutions.
    pub fn output_length(&self) -> Option<usize> {
        self.kernel_sizes
            .iter()
            .try_fold(self.window_length, |t, &k| (t >= k).then(|| t - k + 1))
            .filter(|&t| t >= 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() || self.kernel_sizes.len() != self.filter_counts.len() {
            return Err(Error::Config(format!(
                "kernel_sizes {:?} and filter_counts {:?} must be non-empty and equally long",
                self.kernel_sizes, self.filter_counts
            )));
        }
        if self.kernel_sizes.iter().chain(&self.filter_counts).any(|&v| v == 0)
            || self.projection_dim == 0
            || self.fusion_dim == 0
        {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.output_length().is_none() {
            return Err(Error::Config(format!(
                "window {} too short for kernels {:?}",
                self.window_length, self.kernel_sizes
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("encoder needs at least one modality".into()));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.channels == 0 {
                return Err(Error::Config(format!("modality {} has no channels", m.name)));
            }
            if self.modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("duplicate modality {}", m.name)));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let branch = |c_in0: usize| {
            let mut c_in = c_in0;
            let mut total = 0;
            for (&k, &f) in self.kernel_sizes.iter().zip(&self.filter_counts) {
                total += k * c_in * f + f + 2 * f;
                c_in = f;
            }
            total + c_in * self.projection_dim + self.projection_dim
        };
        let branches: usize = self.modalities.iter().map(|m| branch(m.channels)).sum();
        branches + self.projection_dim * self.fusion_dim + self.fusion_dim
    }

    fn tensors_per_branch(&self) -> usize {
        4 * self.kernel_sizes.len() + 2
    }
}

/// Encoder weights: one branch per modality plus the shared fusion layer.
///
/// Tensors are stored flat in a fixed layout: for each branch, per conv layer
/// `kernel, bias, gain, shift`, then `proj.weight, proj.bias`; finally
/// `fusion.weight, fusion.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// Fan-in scaled uniform weights, zero biases and shifts, unit gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        for m in &config.modalities {
            let mut c_in = m.channels;
            for (l, (&k, &f)) in config.kernel_sizes.iter().zip(&config.filter_counts).enumerate() {
                names.push(format!("{}.conv{l}.kernel", m.name));
                tensors.push(Tensor::uniform(&[k, c_in, f], he(k * c_in), &mut rng));
                names.push(format!("{}.conv{l}.bias", m.name));
                tensors.push(Tensor::zeros(&[f]));
                names.push(format!("{}.norm{l}.gain", m.name));
                tensors.push(Tensor::filled(&[f], 1.0));
                names.push(format!("{}.norm{l}.shift", m.name));
                tensors.push(Tensor::zeros(&[f]));
                c_in = f;
            }
            names.push(format!("{}.proj.weight", m.name));
            tensors.push(Tensor::uniform(&[c_in, config.projection_dim], he(c_in), &mut rng));
            names.push(format!("{}.proj.bias", m.name));
            tensors.push(Tensor::zeros(&[config.projection_dim]));
        }
        names.push("fusion.weight".into());
        tensors.push(Tensor::uniform(
            &[config.projection_dim, config.fusion_dim],
            he(config.projection_dim),
            &mut rng,
        ));
        names.push("fusion.bias".into());
        tensors.push(Tensor::zeros(&[config.fusion_dim]));
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking them against `config`.
    pub fn from_parts(config: EncoderConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let template = Self::init(config.clone(), 0)?;
        if named.len() != template.tensors.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                template.tensors.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (tname, tt)) in named.into_iter().zip(template.names.iter().zip(&template.tensors)) {
            if &name != tname || t.shape() != tt.shape() {
                return Err(Error::Validation(format!(
                    "parameter {name} {:?} does not match expected {tname} {:?}",
                    t.shape(),
                    tt.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Hex SHA-256 over parameter names and exact values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            h.update([0]);
            t.hash_into(&mut h);
        }
        format!("{:x}", h.finalize())
    }

    /// Records every parameter as a leaf on `tape`, in layout order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect()
    }

    fn branch_index(&self, name: &str) -> Option<usize> {
        self.config.modalities.iter().position(|m| m.name == name)
    }

    fn check_batch(&self, batch: &ModalityBatch) -> Result<Vec<usize>> {
        batch.validate()?;
        batch
            .modalities
            .iter()
            .map(|m| {
                let b = self.branch_index(&m.name).ok_or_else(|| {
                    Error::Config(format!("modality {} has no encoder branch", m.name))
                })?;
                let expected = [self.config.window_length, self.config.modalities[b].channels];
                if m.data.shape()[1..] != expected {
                    return Err(Error::Config(format!(
                        "modality {}: windows {:?} do not match encoder window×channels {:?}",
                        m.name,
                        &m.data.shape()[1..],
                        expected
                    )));
                }
                Ok(b)
            })
            .collect()
    }

    fn branch_forward(&self, tape: &mut Tape, vars: &[Var], branch: usize, input: Var) -> Result<Var> {
        let base = branch * self.config.tensors_per_branch();
        let mut h = input;
        for l in 0..self.config.kernel_sizes.len() {
            let p = base + 4 * l;
            h = tape.conv1d(h, vars[p], vars[p + 1])?;
            h = tape.relu(h)?;
            h = tape.layer_norm(h, vars[p + 2], vars[p + 3], LAYER_NORM_EPS)?;
        }
        let h = tape.global_avg_pool(h)?;
        let p = base + 4 * self.config.kernel_sizes.len();
        tape.dense(h, vars[p], vars[p + 1])
    }

    fn fusion_vars(&self, vars: &[Var]) -> (Var, Var) {
        let n = vars.len();
        (vars[n - 2], vars[n - 1])
    }

    /// Pre-fusion (projection head) outputs per batch modality, in batch order.
    pub fn forward_projection(&self, tape: &mut Tape, vars: &[Var], batch: &ModalityBatch) -> Result<Vec<Var>> {
        let branches = self.check_batch(batch)?;
        batch
            .modalities
            .iter()
            .zip(branches)
            .map(|(m, b)| {
                let x = tape.constant(m.data.clone());
                self.branch_forward(tape, vars, b, x)
            })
            .collect()
    }

    /// Fused embeddings `N×fusion_dim` per batch modality, in batch order.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &ModalityBatch) -> Result<Vec<Var>> {
        let projected = self.forward_projection(tape, vars, batch)?;
        let (w, b) = self.fusion_vars(vars);
        projected.into_iter().map(|h| tape.dense(h, w, b)).collect()
    }

    fn encode_with<F>(&self, batch: &ModalityBatch, stage: F) -> Result<EmbeddingSet>
    where
        F: Fn(&Self, &mut Tape, &[Var], &ModalityBatch) -> Result<Vec<Var>>,
    {
        self.check_batch(batch)?;
        let n = batch.len();
        let mut views: Vec<Vec<f64>> = vec![Vec::new(); batch.modalities.len()];
        let mut width = 0;
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let chunk = if start == 0 && end == n {
                batch.clone()
            } else {
                batch.select_rows(&rows)?
            };
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let outs = stage(self, &mut tape, &vars, &chunk)?;
            for (buf, v) in views.iter_mut().zip(outs) {
                let t = tape.value(v);
                width = t.cols();
                buf.extend_from_slice(t.data());
            }
            start = end;
        }
        EmbeddingSet::new(
            views
                .into_iter()
                .map(|d| Tensor::new(vec![n, width], d))
                .collect::<Result<_>>()?,
        )
    }

    /// Fused embedding of every modality in the batch, in batch modality order.
    pub fn encode(&self, batch: &ModalityBatch) -> Result<EmbeddingSet> {
        self.encode_with(batch, Self::forward)
    }

    /// Projection-head outputs (before the shared fusion layer).
    pub fn encode_projection(&self, batch: &ModalityBatch) -> Result<EmbeddingSet> {
        self.encode_with(batch, Self::forward_projection)
    }

    /// Per-sample concatenation of the fused embeddings, modality blocks in batch order.
    pub fn encode_concat(&self, batch: &ModalityBatch) -> Result<Tensor> {
        Ok(self.encode(batch)?.concat())
    }
}
