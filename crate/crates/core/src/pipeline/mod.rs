//! Training and evaluation workflows: self-supervised pretraining, frozen
//! linear probes, end-to-end fine-tuning, label-efficiency curves and
//! batch-size sweeps.

mod classify;
mod experiments;
mod metrics;
mod pretrain;

pub use classify::{
    evaluate_macro_f1, finetune, linear_probe, stratified_subsample, Classifier, ClassifierOutcome, F1Report,
};
pub use experiments::{batch_sweep, label_curve, random_encoder, CurvePoint, LabelCurve, SweepGrid, SweepRow};
pub use metrics::{read_jsonl, write_jsonl, MetricsSink, RunMetrics};
pub use pretrain::{pretrain, ssl_loss, PretrainOutcome};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CocoaHyper, CountedMethod, SimilarityKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cocoa,
    Infonce,
    Dcl,
    HardDcl,
    Barlow,
    Cmc,
    Supervised,
}

impl Method {
    pub const SELF_SUPERVISED: [Method; 6] = [
        Method::Cocoa,
        Method::Infonce,
        Method::Dcl,
        Method::HardDcl,
        Method::Barlow,
        Method::Cmc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cocoa => "cocoa",
            Method::Infonce => "infonce",
            Method::Dcl => "dcl",
            Method::HardDcl => "hard_dcl",
            Method::Barlow => "barlow",
            Method::Cmc => "cmc",
            Method::Supervised => "supervised",
        }
    }

    pub fn is_self_supervised(self) -> bool {
        self != Method::Supervised
    }

    /// Objectives with a closed-form similarity count.
    pub fn counted(self) -> Option<CountedMethod> {
        match self {
            Method::Cocoa => Some(CountedMethod::Cocoa),
            Method::Cmc => Some(CountedMethod::Cmc),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        [Method::Supervised]
            .into_iter()
            .chain(Method::SELF_SUPERVISED)
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?} (expected cocoa, infonce, dcl, hard_dcl, barlow, cmc or supervised)"
                ))
            })
    }
}

/// Loss hyperparameters for every objective; each method reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossHyper {
    pub tau: f64,
    /// Weight of the within-modality discriminator term.
    pub lambda: f64,
    pub dcl_eps: f64,
    pub hard_beta: f64,
    pub lambda_bt: f64,
    pub similarity: SimilarityKind,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 1.0,
            dcl_eps: 1e-7,
            hard_beta: 1.0,
            lambda_bt: 0.005,
            similarity: SimilarityKind::Cosine,
        }
    }
}

impl LossHyper {
    pub fn cocoa(&self) -> CocoaHyper {
        CocoaHyper {
            tau: self.tau,
            lambda: self.lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub hyper: LossHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Cocoa,
            batch_size: 32,
            max_epochs: 100,
            lr: 1e-3,
            early_stop_patience: 5,
            hyper: LossHyper::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be ≥ 2, got {}", self.batch_size)));
        }
        if self.early_stop_patience < 1 {
            return Err(Error::Config("early_stop_patience must be ≥ 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be ≥ 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Tracks the best monitored value and decides when patience is exhausted.
///
/// Ties on the monitored value are broken by a secondary value where lower is
/// better (validation loss for classification, unused for pretraining).
#[derive(Clone, Debug)]
pub(crate) struct EarlyStopper {
    patience: usize,
    lower_is_better: bool,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub(crate) fn new(patience: usize, lower_is_better: bool) -> Self {
        Self {
            patience,
            lower_is_better,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's monitored value; returns true when it is a new best.
    pub(crate) fn observe(&mut self, epoch: usize, value: f64) -> bool {
        self.observe_with_tiebreak(epoch, value, 0.0)
    }

    pub(crate) fn observe_with_tiebreak(&mut self, epoch: usize, value: f64, tiebreak: f64) -> bool {
        let improved = match self.best {
            None => value.is_finite(),
            Some((b, t)) => {
                let better = if self.lower_is_better { value < b } else { value > b };
                better || (value == b && tiebreak < t)
            }
        };
        if improved {
            self.best = Some((value, tiebreak));
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub(crate) fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub(crate) fn best(&self) -> Option<f64> {
        self.best.map(|b| b.0)
    }

    pub(crate) fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
