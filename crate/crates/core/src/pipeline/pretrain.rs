use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EarlyStopper, LossHyper, Method, RunMetrics, TrainConfig};
use crate::autodiff::Tape;
use crate::batching::{epoch_batches, DatasetSplits, WindowedDataset};
use crate::embedding::EmbeddingSet;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{
    barlow_twins_loss, cmc_loss, cocoa_loss, dcl_loss, hard_dcl_loss, infonce_loss, LossOutput, OpCounter,
};
use crate::optim::AdamState;
use crate::tensor::Tensor;

/// Seed offsets so the encoder init, the batch order and the validation
/// batches draw from independent streams.
const INIT_STREAM: u64 = 0x1000;
const BATCH_STREAM: u64 = 0x2000;
const VAL_STREAM: u64 = 0x3000;

/// Self-supervised objective on a batch of per-modality embeddings.
///
/// Two-view objectives (InfoNCE, DCL, Hard-DCL, Barlow Twins) are summed over
/// every unordered modality pair.
pub fn ssl_loss(method: Method, hyper: &LossHyper, z: &EmbeddingSet, counter: &mut OpCounter) -> Result<LossOutput> {
    let v_count = z.num_views();
    if v_count < 2 {
        return Err(Error::Config(format!(
            "{method} needs at least 2 modalities, got {v_count}"
        )));
    }
    let kind = hyper.similarity;
    match method {
        Method::Cocoa => cocoa_loss(z, &hyper.cocoa(), counter),
        Method::Cmc => cmc_loss(z, hyper.tau, kind, counter),
        Method::Supervised => Err(Error::Config("supervised is not a self-supervised objective".into())),
        pairwise => {
            let mut total = LossOutput {
                value: 0.0,
                grads: z.views().iter().map(|t| Tensor::zeros(t.shape())).collect(),
                diagnostics: Vec::new(),
            };
            for v in 0..v_count {
                for w in v + 1..v_count {
                    let (a, b) = (z.view(v), z.view(w));
                    let out = match pairwise {
                        Method::Infonce => infonce_loss(a, b, hyper.tau, kind, counter),
                        Method::Dcl => dcl_loss(a, b, hyper.tau, hyper.dcl_eps, kind, counter),
                        Method::HardDcl => hard_dcl_loss(a, b, hyper.tau, hyper.dcl_eps, hyper.hard_beta, kind, counter),
                        _ => barlow_twins_loss(a, b, hyper.lambda_bt),
                    }?;
                    total.value += out.value;
                    total.grads[v].add_assign(&out.grads[0]);
                    total.grads[w].add_assign(&out.grads[1]);
                    total.diagnostics.extend(out.diagnostics);
                }
            }
            Ok(total)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: EncoderParams,
    pub metrics: Vec<RunMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub batches_per_epoch: Vec<usize>,
}

/// Full non-overlapping validation batches, shrinking the batch if the split is small.
fn validation_batches(val: &WindowedDataset, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut size = batch_size.min(val.len());
    loop {
        match epoch_batches(val, size, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(b) => return Ok(b),
            Err(Error::Sampling(_)) if size > 2 => size = (size / 2).max(2),
            Err(e) => return Err(e),
        }
    }
}

fn batch_loss(
    params: &EncoderParams,
    data: &WindowedDataset,
    positions: &[usize],
    config: &TrainConfig,
    counter: &mut OpCounter,
) -> Result<f64> {
    let batch = data.batch(positions)?;
    let z = params.encode(&batch)?;
    Ok(ssl_loss(config.method, &config.hyper, &z, counter)?.value)
}

/// One gradient step on a batch; returns the batch loss.
pub(crate) fn ssl_step(
    params: &mut EncoderParams,
    adam: &mut AdamState,
    data: &WindowedDataset,
    positions: &[usize],
    config: &TrainConfig,
    counter: &mut OpCounter,
) -> Result<f64> {
    let batch = data.batch(positions)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let outs = params.forward(&mut tape, &vars, &batch)?;
    let z = EmbeddingSet::new(outs.iter().map(|&v| tape.value(v).clone()).collect())?;
    let loss = ssl_loss(config.method, &config.hyper, &z, counter)?;
    if !loss.value.is_finite() {
        return Err(Error::Numeric(format!("{} loss became {}", config.method, loss.value)));
    }
    let root = tape.scalar_fn(&outs, loss.value, loss.grads)?;
    let mut grads = tape.backward(root)?;
    let g: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
    adam.step(params.tensors_mut(), &g)?;
    Ok(loss.value)
}

/// Trains encoders on the unlabeled train split, early-stopping on the validation loss.
pub fn pretrain(splits: &DatasetSplits, encoder: &EncoderConfig, config: &TrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if !config.method.is_self_supervised() {
        return Err(Error::Config(format!(
            "pretraining needs a self-supervised method, got {}",
            config.method
        )));
    }
    if splits.train.num_modalities() < 2 {
        return Err(Error::Config(format!(
            "{} is cross-modal and needs at least 2 modalities, dataset has {}",
            config.method,
            splits.train.num_modalities()
        )));
    }
    let train = splits.train.without_labels();
    let val = splits.val.without_labels();
    let run_id = format!("pretrain-{}-b{}-s{}", config.method, config.batch_size, config.seed);
    let start = Instant::now();

    let mut params = EncoderParams::init(encoder.clone(), config.seed ^ INIT_STREAM)?;
    let mut adam = AdamState::new(config.lr, params.tensors());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_STREAM);
    let val_batches = validation_batches(&val, config.batch_size, config.seed ^ VAL_STREAM)?;

    let mut stopper = EarlyStopper::new(config.early_stop_patience, true);
    let mut best = params.clone();
    let mut metrics = Vec::new();
    let mut epochs_run = 0;
    let mut batches_per_epoch = Vec::new();
    for epoch in 1..=config.max_epochs {
        let mut counter = OpCounter::new();
        let batches = epoch_batches(&train, config.batch_size, &mut batch_rng)?;
        batches_per_epoch.push(batches.len());
        let mut train_loss = 0.0;
        for b in &batches {
            train_loss += ssl_step(&mut params, &mut adam, &train, b, config, &mut counter)?;
        }
        train_loss /= batches.len() as f64;
        let train_evals = counter.similarity_evaluations;

        let mut val_counter = OpCounter::new();
        let mut val_loss = 0.0;
        for b in &val_batches {
            val_loss += batch_loss(&params, &val, b, config, &mut val_counter)?;
        }
        val_loss /= val_batches.len() as f64;
        epochs_run = epoch;

        if stopper.observe(epoch, val_loss) {
            best = params.clone();
        }
        log::info!("{run_id} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        metrics.push(RunMetrics {
            run_id: run_id.clone(),
            method: config.method.name().into(),
            stage: "pretrain".into(),
            epoch,
            train_loss,
            val_loss: Some(val_loss),
            macro_f1: None,
            similarity_evaluations: train_evals,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if stopper.should_stop() {
            break;
        }
    }
    Ok(PretrainOutcome {
        params: best,
        metrics,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best().unwrap_or(f64::NAN),
        epochs_run,
        batches_per_epoch,
    })
}
