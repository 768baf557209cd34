use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EarlyStopper, RunMetrics, TrainConfig};
use crate::autodiff::Tape;
use crate::batching::{DatasetSplits, WindowedDataset};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::Tensor;

const HEAD_STREAM: u64 = 0x4000;
const ORDER_STREAM: u64 = 0x5000;
const SUBSAMPLE_STREAM: u64 = 0x6000;

/// Per-class and macro-averaged F1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    /// Classes that occur in neither predictions nor labels; they count as F1 = 0.
    pub absent_classes: Vec<usize>,
}

/// Unweighted mean of per-class F1 scores.
pub fn evaluate_macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<F1Report> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Input("num_classes must be positive".into()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::Input(format!("class {bad} out of range for {num_classes} classes")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let mut absent = Vec::new();
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                absent.push(c);
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    if !absent.is_empty() {
        log::debug!("classes {absent:?} absent from predictions and labels");
    }
    Ok(F1Report {
        macro_f1: per_class.iter().sum::<f64>() / num_classes as f64,
        per_class,
        absent_classes: absent,
    })
}

/// Dense softmax head over concatenated modality embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `D × C`
    pub weight: Tensor,
    /// `C`
    pub bias: Tensor,
}

impl Classifier {
    pub fn init(input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (input_dim + num_classes) as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[input_dim, num_classes], bound, &mut rng),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let y = tape.dense(x, w, b)?;
        Ok(tape.value(y).clone())
    }

    /// Mean softmax cross-entropy on `features`.
    pub fn loss(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(self.logits(features)?);
        let l = tape.softmax_cross_entropy(x, labels)?;
        Ok(tape.value(l).item())
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok((0..logits.rows())
            .map(|i| {
                logits
                    .row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc })
                    .0
            })
            .collect())
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        vec![
            ("classifier.weight".into(), self.weight.clone()),
            ("classifier.bias".into(), self.bias.clone()),
        ]
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Option<Self> {
        let find = |n: &str| records.iter().find(|(k, _)| k == n).map(|(_, t)| t.clone());
        Some(Self {
            weight: find("classifier.weight")?,
            bias: find("classifier.bias")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub classifier: Classifier,
    /// Encoder used for the reported scores (unchanged for a probe).
    pub encoder: EncoderParams,
    pub metrics: Vec<RunMetrics>,
    pub val_f1: f64,
    pub test: F1Report,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_samples: usize,
}

fn require_labels(ds: &WindowedDataset, split: &str) -> Result<Vec<usize>> {
    ds.labels()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| Error::Input(format!("{split} split has no labels")))
}

fn features(encoder: &EncoderParams, ds: &WindowedDataset) -> Result<Tensor> {
    encoder.encode_concat(&ds.full_batch()?)
}

fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn f1_of(classifier: &Classifier, feats: &Tensor, labels: &[usize]) -> Result<F1Report> {
    evaluate_macro_f1(&classifier.predict(feats)?, labels, classifier.num_classes())
}

/// Trains a dense softmax head on frozen encoder features.
pub fn linear_probe(encoder: &EncoderParams, splits: &DatasetSplits, config: &TrainConfig) -> Result<ClassifierOutcome> {
    config.validate()?;
    let y_train = require_labels(&splits.train, "train")?;
    let y_val = require_labels(&splits.val, "val")?;
    let y_test = require_labels(&splits.test, "test")?;
    let num_classes = splits.train.num_classes();
    let start = Instant::now();
    let run_id = format!("probe-{}-b{}-s{}", config.method, config.batch_size, config.seed);

    let x_train = features(encoder, &splits.train)?;
    let x_val = features(encoder, &splits.val)?;
    let x_test = features(encoder, &splits.test)?;

    let mut head = Classifier::init(x_train.cols(), num_classes, config.seed ^ HEAD_STREAM);
    let mut adam = AdamState::new(config.lr, &[head.weight.clone(), head.bias.clone()]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ORDER_STREAM);
    let mut stopper = EarlyStopper::new(config.early_stop_patience, false);
    let mut best = head.clone();
    let mut metrics = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        let batches = minibatches(x_train.rows(), config.batch_size, &mut rng);
        let mut train_loss = 0.0;
        for rows in &batches {
            let mut tape = Tape::new();
            let x = tape.constant(x_train.select_rows(rows)?);
            let w = tape.param(head.weight.clone());
            let b = tape.param(head.bias.clone());
            let logits = tape.dense(x, w, b)?;
            let labels: Vec<usize> = rows.iter().map(|&r| y_train[r]).collect();
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            train_loss += tape.value(loss).item();
            let mut g = tape.backward(loss)?;
            let grads = [g.take(w), g.take(b)];
            let mut params = [head.weight.clone(), head.bias.clone()];
            adam.step(&mut params, &grads)?;
            let [weight, bias] = params;
            head = Classifier { weight, bias };
        }
        train_loss /= batches.len() as f64;
        let val_f1 = f1_of(&head, &x_val, &y_val)?.macro_f1;
        let val_loss = head.loss(&x_val, &y_val)?;
        epochs_run = epoch;
        if stopper.observe_with_tiebreak(epoch, val_f1, val_loss) {
            best = head.clone();
        }
        metrics.push(RunMetrics {
            run_id: run_id.clone(),
            method: config.method.name().into(),
            stage: "probe".into(),
            epoch,
            train_loss,
            val_loss: Some(val_loss),
            macro_f1: Some(val_f1),
            similarity_evaluations: 0,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if stopper.should_stop() {
            break;
        }
    }
    let test = f1_of(&best, &x_test, &y_test)?;
    log::info!("{run_id}: test macro-F1 {:.4}", test.macro_f1);
    Ok(ClassifierOutcome {
        classifier: best,
        encoder: encoder.clone(),
        metrics,
        val_f1: stopper.best().unwrap_or(0.0),
        test,
        best_epoch: stopper.best_epoch(),
        epochs_run,
        train_samples: x_train.rows(),
    })
}

/// Positions keeping `round(fraction · count_c)` samples of every class `c`.
pub fn stratified_subsample(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction must be in (0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let keep = (fraction * members.len() as f64).round() as usize;
        if keep == 0 {
            return Err(Error::Stratification(format!(
                "label fraction {fraction} keeps no sample of class {c} ({} available)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..keep]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Jointly trains encoders and a dense head on a class-stratified fraction of the training labels.
pub fn finetune(
    encoder: &EncoderParams,
    splits: &DatasetSplits,
    config: &TrainConfig,
    label_fraction: f64,
) -> Result<ClassifierOutcome> {
    config.validate()?;
    let y_all = require_labels(&splits.train, "train")?;
    let y_val = require_labels(&splits.val, "val")?;
    let y_test = require_labels(&splits.test, "test")?;
    let num_classes = splits.train.num_classes();
    let keep = stratified_subsample(&y_all, num_classes, label_fraction, config.seed ^ SUBSAMPLE_STREAM)?;
    let train = splits.train.subset(&keep);
    let y_train = require_labels(&train, "train")?;
    let start = Instant::now();
    let run_id = format!(
        "finetune-{}-f{label_fraction}-b{}-s{}",
        config.method, config.batch_size, config.seed
    );

    let mut enc = encoder.clone();
    let width = enc.config().fusion_dim * train.num_modalities();
    let mut head = Classifier::init(width, num_classes, config.seed ^ HEAD_STREAM);
    let n_enc = enc.tensors().len();
    let mut all: Vec<Tensor> = enc.tensors().to_vec();
    all.push(head.weight.clone());
    all.push(head.bias.clone());
    let mut adam = AdamState::new(config.lr, &all);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ORDER_STREAM);
    let mut stopper = EarlyStopper::new(config.early_stop_patience, false);
    let mut best = (enc.clone(), head.clone());
    let mut metrics = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        let batches = minibatches(train.len(), config.batch_size, &mut rng);
        let mut train_loss = 0.0;
        for rows in &batches {
            let batch = train.batch(rows)?;
            let labels = batch.labels.clone().expect("labelled split");
            let mut tape = Tape::new();
            let vars = enc.bind(&mut tape, true);
            let outs = enc.forward(&mut tape, &vars, &batch)?;
            let h = tape.concat_cols(&outs)?;
            let w = tape.param(head.weight.clone());
            let b = tape.param(head.bias.clone());
            let logits = tape.dense(h, w, b)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            train_loss += tape.value(loss).item();
            let mut g = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().chain([&w, &b]).map(|&v| g.take(v)).collect();
            let mut params: Vec<Tensor> = enc.tensors().to_vec();
            params.push(head.weight.clone());
            params.push(head.bias.clone());
            adam.step(&mut params, &grads)?;
            head.bias = params.pop().expect("bias");
            head.weight = params.pop().expect("weight");
            enc.tensors_mut().clone_from_slice(&params[..n_enc]);
        }
        train_loss /= batches.len() as f64;
        let x_val = features(&enc, &splits.val)?;
        let val_f1 = f1_of(&head, &x_val, &y_val)?.macro_f1;
        let val_loss = head.loss(&x_val, &y_val)?;
        epochs_run = epoch;
        if stopper.observe_with_tiebreak(epoch, val_f1, val_loss) {
            best = (enc.clone(), head.clone());
        }
        metrics.push(RunMetrics {
            run_id: run_id.clone(),
            method: config.method.name().into(),
            stage: "finetune".into(),
            epoch,
            train_loss,
            val_loss: Some(val_loss),
            macro_f1: Some(val_f1),
            similarity_evaluations: 0,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if stopper.should_stop() {
            break;
        }
    }
    let (enc, head) = best;
    let test = f1_of(&head, &features(&enc, &splits.test)?, &y_test)?;
    log::info!("{run_id}: test macro-F1 {:.4}", test.macro_f1);
    Ok(ClassifierOutcome {
        classifier: head,
        encoder: enc,
        metrics,
        val_f1: stopper.best().unwrap_or(0.0),
        test,
        best_epoch: stopper.best_epoch(),
        epochs_run,
        train_samples: y_train.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_degenerate_f1() {
        let labels = [0, 1, 2, 1];
        assert_eq!(evaluate_macro_f1(&labels, &labels, 3).unwrap().macro_f1, 1.0);
        let r = evaluate_macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((r.per_class[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1], 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.absent_classes.is_empty());
    }

    #[test]
    fn absent_class_is_flagged() {
        let r = evaluate_macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.absent_classes, vec![2]);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn relabeling_invariance() {
        let p = [0, 1, 2, 2, 1, 0, 1];
        let l = [0, 2, 2, 1, 1, 0, 0];
        let perm = [2, 0, 1];
        let a = evaluate_macro_f1(&p, &l, 3).unwrap().macro_f1;
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let ll: Vec<usize> = l.iter().map(|&c| perm[c]).collect();
        assert!((a - evaluate_macro_f1(&pp, &ll, 3).unwrap().macro_f1).abs() < 1e-15);
    }

    #[test]
    fn f1_input_errors() {
        assert!(matches!(evaluate_macro_f1(&[0], &[0, 1], 2), Err(Error::Input(_))));
        assert!(matches!(evaluate_macro_f1(&[0, 2], &[0, 1], 2), Err(Error::Input(_))));
    }

    #[test]
    fn subsample_is_stratified() {
        let labels: Vec<usize> = (0..103).map(|i| i % 4).collect();
        let keep = stratified_subsample(&labels, 4, 0.1, 3).unwrap();
        for c in 0..4 {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let kept = keep.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((kept - 0.1 * total).abs() <= 1.0);
        }
        assert_eq!(stratified_subsample(&labels, 4, 1.0, 3).unwrap(), (0..103).collect::<Vec<_>>());
        assert!(matches!(
            stratified_subsample(&labels, 4, 0.01, 3),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn classifier_predicts_argmax() {
        let c = Classifier {
            weight: Tensor::from_rows(&[vec![1.0, -1.0], vec![0.0, 2.0]]).unwrap(),
            bias: Tensor::new(vec![2], vec![0.0, 0.5]).unwrap(),
        };
        let x = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(c.predict(&x).unwrap(), vec![0, 1]);
    }
}
