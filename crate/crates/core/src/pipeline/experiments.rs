use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finetune, linear_probe, pretrain, Method, RunMetrics, TrainConfig};
use crate::batching::DatasetSplits;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::count_formula;

const RANDOM_INIT_STREAM: u64 = 0x7000;

/// Randomly initialized encoders on a stream disjoint from pretraining's own init.
pub fn random_encoder(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
    EncoderParams::init(config, seed ^ RANDOM_INIT_STREAM)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Distinct `(method, batch, seed)` triples in sorted order.
    pub fn cells(&self) -> Vec<(Method, usize, u64)> {
        let mut cells: Vec<_> = self
            .methods
            .iter()
            .flat_map(|&m| {
                self.batch_sizes
                    .iter()
                    .flat_map(move |&b| self.seeds.iter().map(move |&s| (m, b, s)))
            })
            .collect();
        cells.sort();
        cells.dedup();
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub batch_size: usize,
    pub seed: u64,
    pub macro_f1: f64,
    pub val_f1: f64,
    /// Similarity evaluations of one loss call, measured during training.
    pub similarity_evaluations: u64,
    pub formula_count: Option<u64>,
    pub pretrain_epochs: usize,
    pub wall_seconds: f64,
}

fn sweep_cell(
    splits: &DatasetSplits,
    encoder: &EncoderConfig,
    base: &TrainConfig,
    (method, batch_size, seed): (Method, usize, u64),
) -> Result<SweepRow> {
    let start = Instant::now();
    let config = TrainConfig {
        method,
        batch_size,
        seed,
        ..base.clone()
    };
    let pre = pretrain(splits, encoder, &config)?;
    let first = pre.metrics.first().expect("at least one epoch");
    let batches = pre.batches_per_epoch[0] as u64;
    let measured = first.similarity_evaluations / batches;
    let views = splits.train.num_modalities();
    let formula = method.counted().map(|m| count_formula(m, views, batch_size));
    if let Some(f) = formula {
        if first.similarity_evaluations != f * batches {
            return Err(Error::CounterMismatch {
                method: method.name().into(),
                views,
                batch: batch_size,
                measured: first.similarity_evaluations,
                formula: f * batches,
            });
        }
    }
    let probe = linear_probe(&pre.params, splits, &config)?;
    Ok(SweepRow {
        method,
        batch_size,
        seed,
        macro_f1: probe.test.macro_f1,
        val_f1: probe.val_f1,
        similarity_evaluations: measured,
        formula_count: formula,
        pretrain_epochs: pre.epochs_run,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Pretrain + probe for every grid cell, running up to `jobs` cells at once.
pub fn batch_sweep(
    splits: &DatasetSplits,
    encoder: &EncoderConfig,
    grid: &SweepGrid,
    base: &TrainConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    if let Some(&(m, ..)) = cells.iter().find(|c| !c.0.is_self_supervised()) {
        return Err(Error::Config(format!("sweep methods must be self-supervised, got {m}")));
    }
    let limit = splits.train.len();
    if let Some(&(_, b, _)) = cells.iter().find(|c| c.1 < 2 || c.1 > limit) {
        return Err(Error::Config(format!(
            "batch size {b} outside [2, {limit}] for this training split"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| sweep_cell(splits, encoder, base, cell))
            .collect::<Result<_>>()
    })?;
    rows.sort_by_key(|r| (r.method, r.batch_size, r.seed));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_macro_f1: f64,
    /// Sample standard deviation over seeds.
    pub std_macro_f1: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LabelCurve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
    pub metrics: Vec<RunMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Fine-tunes at every label fraction for every seed. Self-supervised methods
/// pretrain once per seed; `supervised` starts from random encoders.
pub fn label_curve(
    splits: &DatasetSplits,
    encoder: &EncoderConfig,
    base: &TrainConfig,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<LabelCurve> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::Config("label curve needs at least one fraction and one seed".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("label fraction {f} outside (0, 1]")));
    }
    let mut scores = vec![Vec::with_capacity(seeds.len()); fractions.len()];
    let mut metrics = Vec::new();
    for &seed in seeds {
        let config = TrainConfig {
            seed,
            ..base.clone()
        };
        let init = if base.method.is_self_supervised() {
            let pre = pretrain(splits, encoder, &config)?;
            metrics.extend(pre.metrics);
            pre.params
        } else {
            random_encoder(encoder.clone(), seed)?
        };
        for (i, &fraction) in fractions.iter().enumerate() {
            let out = finetune(&init, splits, &config, fraction)?;
            metrics.extend(out.metrics);
            scores[i].push(out.test.macro_f1);
        }
    }
    let points = fractions
        .iter()
        .zip(scores)
        .map(|(&fraction, s)| {
            let (mean, std) = mean_std(&s);
            CurvePoint {
                fraction,
                mean_macro_f1: mean,
                std_macro_f1: std,
                scores: s,
            }
        })
        .collect();
    Ok(LabelCurve {
        method: base.method,
        points,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_are_sorted_and_unique() {
        let grid = SweepGrid {
            methods: vec![Method::Cmc, Method::Cocoa, Method::Cmc],
            batch_sizes: vec![128, 8, 32],
            seeds: vec![2, 0, 1],
        };
        let cells = grid.cells();
        assert_eq!(cells.len(), 18);
        assert!(cells.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - 2.5f64.sqrt()).abs() < 1e-15);
    }
}
