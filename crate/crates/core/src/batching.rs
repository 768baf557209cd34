//! Windowed multimodal datasets, aligned batches and temporal splits.
//!
//! A batch row holds the same window of every modality (the positives of the
//! cross-modal term); distinct rows of one modality are the negatives. Rows of
//! one batch never overlap in raw time, so a window is never contrasted with a
//! shifted copy of itself.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub channels: usize,
    pub window: usize,
}

/// Windows of every modality, stored `[num_windows, window, channels]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    modalities: Vec<ModalitySpec>,
    data: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    classes: Vec<String>,
    starts: Vec<usize>,
    ids: Vec<usize>,
}

impl WindowedDataset {
    /// Window `i` gets id `i`; `starts[i]` is its first raw time step.
    pub fn new(
        modalities: Vec<ModalitySpec>,
        data: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        classes: Vec<String>,
        starts: Vec<usize>,
    ) -> Result<Self> {
        let ids = (0..starts.len()).collect();
        let ds = Self {
            modalities,
            data,
            labels,
            classes,
            starts,
            ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.starts.len();
        if self.modalities.is_empty() {
            return Err(Error::Validation("dataset declares no modalities".into()));
        }
        if self.data.len() != self.modalities.len() {
            return Err(Error::Validation(format!(
                "{} modalities declared but {} data buffers",
                self.modalities.len(),
                self.data.len()
            )));
        }
        let mut names = HashSet::new();
        for (spec, buf) in self.modalities.iter().zip(&self.data) {
            if spec.channels == 0 || spec.window == 0 {
                return Err(Error::Validation(format!(
                    "modality {}: channels and window must be positive",
                    spec.name
                )));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Validation(format!("duplicate modality {}", spec.name)));
            }
            if buf.len() != n * spec.window * spec.channels {
                return Err(Error::Validation(format!(
                    "modality {}: {} values for {n} windows of {}×{}",
                    spec.name,
                    buf.len(),
                    spec.window,
                    spec.channels
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "{} labels for {n} windows",
                    labels.len()
                )));
            }
            if self.classes.is_empty() {
                return Err(Error::Validation("labels present but class list is empty".into()));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes.len()) {
                return Err(Error::Validation(format!(
                    "label {bad} out of range for {} classes",
                    self.classes.len()
                )));
            }
        }
        if self.ids.len() != n {
            return Err(Error::Validation("window id count mismatch".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn modalities(&self) -> &[ModalitySpec] {
        &self.modalities
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality_data(&self, m: usize) -> &[f64] {
        &self.data[m]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn window_ids(&self) -> &[usize] {
        &self.ids
    }

    /// Longest window across modalities, the span used by the overlap guard.
    pub fn span(&self) -> usize {
        self.modalities.iter().map(|m| m.window).max().unwrap_or(0)
    }

    /// True when windows at positions `i` and `j` share raw time steps.
    pub fn overlaps(&self, i: usize, j: usize) -> bool {
        self.starts[i].abs_diff(self.starts[j]) < self.span()
    }

    /// Per-class window counts (empty without labels).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes.len()];
        if let Some(labels) = &self.labels {
            for &l in labels {
                hist[l] += 1;
            }
        }
        hist
    }

    /// Windows at the given positions, keeping their ids and starts.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let data = self
            .modalities
            .iter()
            .zip(&self.data)
            .map(|(spec, buf)| {
                let w = spec.window * spec.channels;
                let mut out = Vec::with_capacity(positions.len() * w);
                for &p in positions {
                    out.extend_from_slice(&buf[p * w..(p + 1) * w]);
                }
                out
            })
            .collect();
        Self {
            modalities: self.modalities.clone(),
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
            classes: self.classes.clone(),
            starts: positions.iter().map(|&p| self.starts[p]).collect(),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        }
    }

    /// Keeps only the named modalities, in the given order.
    pub fn select_modalities(&self, names: &[&str]) -> Result<Self> {
        let mut modalities = Vec::new();
        let mut data = Vec::new();
        for name in names {
            let idx = self
                .modalities
                .iter()
                .position(|m| m.name == *name)
                .ok_or_else(|| Error::Config(format!("unknown modality {name}")))?;
            modalities.push(self.modalities[idx].clone());
            data.push(self.data[idx].clone());
        }
        let out = Self {
            modalities,
            data,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    /// Same windows with labels removed.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Assembles the rows at `positions` into an aligned batch.
    pub fn batch(&self, positions: &[usize]) -> Result<ModalityBatch> {
        if positions.is_empty() {
            return Err(Error::Sampling("empty batch".into()));
        }
        let modalities = self
            .modalities
            .iter()
            .zip(&self.data)
            .map(|(spec, buf)| {
                let w = spec.window * spec.channels;
                let mut out = Vec::with_capacity(positions.len() * w);
                for &p in positions {
                    out.extend_from_slice(&buf[p * w..(p + 1) * w]);
                }
                Ok(BatchModality {
                    name: spec.name.clone(),
                    data: Tensor::new(vec![positions.len(), spec.window, spec.channels], out)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModalityBatch {
            modalities,
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
            window_ids: positions.iter().map(|&p| self.ids[p]).collect(),
        })
    }

    /// Every window in storage order.
    pub fn full_batch(&self) -> Result<ModalityBatch> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// SHA-256 over specs, values, labels, classes and window placement.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (spec, buf) in self.modalities.iter().zip(&self.data) {
            h.update(spec.name.as_bytes());
            h.update([0]);
            h.update((spec.channels as u64).to_le_bytes());
            h.update((spec.window as u64).to_le_bytes());
            for v in buf {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for c in &self.classes {
            h.update(c.as_bytes());
            h.update([0]);
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                h.update((l as u64).to_le_bytes());
            }
        }
        for (&s, &id) in self.starts.iter().zip(&self.ids) {
            h.update((s as u64).to_le_bytes());
            h.update((id as u64).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchModality {
    pub name: String,
    /// `N × window × channels`
    pub data: Tensor,
}

/// `N` temporally aligned windows across `V` modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    pub modalities: Vec<BatchModality>,
    pub labels: Option<Vec<usize>>,
    pub window_ids: Vec<usize>,
}

impl ModalityBatch {
    pub fn len(&self) -> usize {
        self.window_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.window_ids.len();
        for m in &self.modalities {
            if m.data.rank() != 3 || m.data.rows() != n {
                return Err(Error::Config(format!(
                    "modality {}: shape {:?} does not hold {n} windows",
                    m.name,
                    m.data.shape()
                )));
            }
        }
        let distinct: HashSet<_> = self.window_ids.iter().collect();
        if distinct.len() != n {
            return Err(Error::Input("batch repeats a window id".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::Input(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(())
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            modalities: self
                .modalities
                .iter()
                .map(|m| {
                    Ok(BatchModality {
                        name: m.name.clone(),
                        data: m.data.select_rows(rows)?,
                    })
                })
                .collect::<Result<_>>()?,
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            window_ids: rows.iter().map(|&r| self.window_ids[r]).collect(),
        })
    }
}

/// Continuous per-modality recordings sharing one clock.
#[derive(Clone, Debug)]
pub struct MultiStream {
    /// `(name, T×C series)` per modality.
    pub modalities: Vec<(String, Tensor)>,
    /// Optional class index per time step.
    pub labels: Option<Vec<usize>>,
    pub classes: Vec<String>,
}

/// Slides a window over every modality with the given fractional overlap.
///
/// Windows start at multiples of `round(window·(1−overlap))`; a labeled
/// window takes the majority label of its span, ties going to the lower class.
pub fn make_windows(stream: &MultiStream, window: usize, overlap_fraction: f64) -> Result<WindowedDataset> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::Config(format!(
            "overlap fraction must lie in [0, 1), got {overlap_fraction}"
        )));
    }
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let first = stream
        .modalities
        .first()
        .ok_or_else(|| Error::Input("stream has no modalities".into()))?;
    let t_len = first.1.rows();
    for (name, series) in &stream.modalities {
        if series.rank() != 2 || series.rows() != t_len {
            return Err(Error::Input(format!(
                "modality {name}: expected {t_len}×C series, got {:?}",
                series.shape()
            )));
        }
    }
    if window > t_len {
        return Err(Error::Input(format!(
            "window {window} longer than stream of {t_len} steps"
        )));
    }
    let stride = (window as f64 * (1.0 - overlap_fraction)).round() as usize;
    if stride == 0 {
        return Err(Error::Config(format!(
            "overlap {overlap_fraction} leaves a zero stride for window {window}"
        )));
    }
    let count = (t_len - window) / stride + 1;
    let starts: Vec<usize> = (0..count).map(|i| i * stride).collect();

    let mut specs = Vec::new();
    let mut data = Vec::new();
    for (name, series) in &stream.modalities {
        let c = series.cols();
        let mut buf = Vec::with_capacity(count * window * c);
        for &s in &starts {
            buf.extend_from_slice(&series.data()[s * c..(s + window) * c]);
        }
        specs.push(ModalitySpec {
            name: name.clone(),
            channels: c,
            window,
        });
        data.push(buf);
    }

    let labels = match &stream.labels {
        None => None,
        Some(steps) => {
            if steps.len() != t_len {
                return Err(Error::Input(format!(
                    "{} step labels for a stream of {t_len} steps",
                    steps.len()
                )));
            }
            let k = stream.classes.len();
            let mut out = Vec::with_capacity(count);
            for &s in &starts {
                let mut hist = vec![0usize; k];
                for &l in &steps[s..s + window] {
                    if l >= k {
                        return Err(Error::Input(format!("step label {l} out of range for {k} classes")));
                    }
                    hist[l] += 1;
                }
                // first maximum wins ties
                let best = hist
                    .iter()
                    .enumerate()
                    .fold((0, 0), |acc, (c, &n)| if n > acc.1 { (c, n) } else { acc })
                    .0;
                out.push(best);
            }
            Some(out)
        }
    };
    WindowedDataset::new(specs, data, labels, stream.classes.clone(), starts)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Greedily takes compatible positions from `pool` (in order) until `size` are chosen.
fn fill_batch(dataset: &WindowedDataset, pool: &mut Vec<usize>, size: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    let mut rest = Vec::with_capacity(pool.len());
    for &p in pool.iter() {
        if chosen.len() < size && chosen.iter().all(|&q| !dataset.overlaps(p, q)) {
            chosen.push(p);
        } else {
            rest.push(p);
        }
    }
    *pool = rest;
    chosen
}

/// Draws `batch_size` mutually non-overlapping windows uniformly without replacement.
pub fn sample_batch(dataset: &WindowedDataset, batch_size: usize, seed: u64) -> Result<ModalityBatch> {
    let positions = sample_positions(dataset, batch_size, &mut rng_for(seed))?;
    dataset.batch(&positions)
}

pub(crate) fn sample_positions<R: rand::Rng>(
    dataset: &WindowedDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::Sampling(format!(
            "batch of {batch_size} from {} windows",
            dataset.len()
        )));
    }
    let mut pool: Vec<usize> = (0..dataset.len()).collect();
    pool.shuffle(rng);
    let chosen = fill_batch(dataset, &mut pool, batch_size);
    if chosen.len() < batch_size {
        return Err(Error::Sampling(format!(
            "only {} mutually non-overlapping windows available, need {batch_size}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

/// Partitions a shuffled epoch into full, internally non-overlapping batches.
/// Windows that cannot complete a batch are left out of this epoch.
pub fn epoch_batches<R: rand::Rng>(dataset: &WindowedDataset, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
    }
    let mut pool: Vec<usize> = (0..dataset.len()).collect();
    pool.shuffle(rng);
    let mut batches = Vec::new();
    while pool.len() >= batch_size {
        let b = fill_batch(dataset, &mut pool, batch_size);
        if b.len() < batch_size {
            break;
        }
        batches.push(b);
    }
    if batches.is_empty() {
        return Err(Error::Sampling(format!(
            "cannot form a single batch of {batch_size} non-overlapping windows from {}",
            dataset.len()
        )));
    }
    Ok(batches)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 80/20 train/test, then a tenth of train held out for validation.
    fn default() -> Self {
        Self {
            train: 0.72,
            val: 0.08,
            test: 0.20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

const SPLIT_BLOCKS: usize = 20;

/// Splits into train/val/test along contiguous blocks of raw time.
///
/// Windows are ordered by start and cut into up to 20 contiguous blocks; the
/// seed shuffles block order and the concatenation is cut at the exact
/// fraction counts, so each split is a union of whole blocks plus at most
/// two partial ones.
pub fn split_dataset(dataset: &WindowedDataset, fractions: SplitFractions, seed: u64) -> Result<DatasetSplits> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0,1] and sum to 1, got {train}/{val}/{test}"
        )));
    }
    let n = dataset.len();
    let n_test = (n as f64 * test).round() as usize;
    let n_val = (n as f64 * val).round() as usize;
    if n_test + n_val > n {
        return Err(Error::Config("split fractions exceed the dataset".into()));
    }
    let n_train = n - n_test - n_val;
    for (name, frac, count) in [("train", train, n_train), ("val", val, n_val), ("test", test, n_test)] {
        if frac > 0.0 && count == 0 {
            return Err(Error::Config(format!(
                "{name} fraction {frac} yields an empty split of {n} windows"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&p| (dataset.starts()[p], p));
    let blocks = SPLIT_BLOCKS.min(n).max(1);
    let mut chunks: Vec<&[usize]> = (0..blocks)
        .map(|b| &order[b * n / blocks..(b + 1) * n / blocks])
        .collect();
    chunks.shuffle(&mut rng_for(seed));
    let seq: Vec<usize> = chunks.concat();

    let (tr, rest) = seq.split_at(n_train);
    let (va, te) = rest.split_at(n_val);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(DatasetSplits {
        train: dataset.subset(&sorted(tr)),
        val: dataset.subset(&sorted(va)),
        test: dataset.subset(&sorted(te)),
    })
}
