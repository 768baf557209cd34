//! Deterministic synthetic multimodal activity data.
//!
//! Every class is described by `2·V` latent sinusoidal factors. Modality `v`
//! sees only its own factors, mixed into its channels by a fixed random matrix,
//! and in that modality two neighbouring classes `(p, p+1)`, `p = v mod (C−1)`,
//! share their factor parameters. A single modality therefore cannot tell that
//! pair apart, while the merged pairs differ between modalities, so the fused
//! view separates every class.

use std::f64::consts::TAU;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batching::{ModalitySpec, WindowedDataset};
use crate::error::{Error, Result};

const MIN_FREQ: usize = 2;
const MAX_FREQ: usize = 10;
const INTERFERENCE: f64 = 3.0;
const INTERFERENCE_TONES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_modalities: usize,
    pub channels_per_modality: usize,
    pub window: usize,
    pub windows_per_class: usize,
    pub noise_std: f64,
    /// Amplitude of per-window interference sinusoids, relative to `noise_std`.
    /// Interference is drawn independently for every modality, so it carries
    /// no cross-modal information.
    pub interference: f64,
    /// Factor indices observed by each modality; `None` gives modality `v` factors `{2v, 2v+1}`.
    pub factor_split: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_modalities: 3,
            channels_per_modality: 3,
            window: 64,
            windows_per_class: 300,
            noise_std: 0.5,
            interference: INTERFERENCE,
            factor_split: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_factors(&self) -> usize {
        2 * self.num_modalities
    }

    pub fn resolved_split(&self) -> Vec<Vec<usize>> {
        self.factor_split
            .clone()
            .unwrap_or_else(|| (0..self.num_modalities).map(|v| vec![2 * v, 2 * v + 1]).collect())
    }

    fn max_freq(&self) -> usize {
        MAX_FREQ.max(MIN_FREQ + self.num_classes - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be ≥ 2, got {}", self.num_classes)));
        }
        if self.num_modalities < 2 {
            return Err(Error::Config(format!(
                "num_modalities must be ≥ 2, got {}",
                self.num_modalities
            )));
        }
        if self.channels_per_modality == 0 || self.windows_per_class == 0 {
            return Err(Error::Config("channels_per_modality and windows_per_class must be positive".into()));
        }
        if 2 * self.max_freq() >= self.window {
            return Err(Error::Config(format!(
                "window {} too short for factor frequencies up to {}",
                self.window,
                self.max_freq()
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if !(self.interference >= 0.0 && self.interference.is_finite()) {
            return Err(Error::Config(format!("interference must be ≥ 0, got {}", self.interference)));
        }
        let split = self.resolved_split();
        if split.len() != self.num_modalities {
            return Err(Error::Config(format!(
                "factor_split lists {} modalities, expected {}",
                split.len(),
                self.num_modalities
            )));
        }
        let mut seen = vec![false; self.num_factors()];
        for (v, factors) in split.iter().enumerate() {
            if factors.is_empty() {
                return Err(Error::Config(format!("factor_split leaves modality {v} without factors")));
            }
            for &f in factors {
                if f >= seen.len() {
                    return Err(Error::Config(format!(
                        "factor {f} out of range for {} factors",
                        seen.len()
                    )));
                }
                if std::mem::replace(&mut seen[f], true) {
                    return Err(Error::Config(format!("factor {f} assigned to more than one modality")));
                }
            }
        }
        Ok(())
    }

    pub fn modality_name(v: usize) -> String {
        format!("m{v}")
    }

    pub fn class_name(c: usize) -> String {
        format!("class{c}")
    }
}

/// Group of class `c` in modality `v`: the merged pair shares one group.
pub fn class_group(num_classes: usize, v: usize, c: usize) -> usize {
    if num_classes < 3 {
        return c;
    }
    let p = v % (num_classes - 1);
    if c > p {
        c - 1
    } else {
        c
    }
}

#[derive(Clone, Copy)]
struct Factor {
    freq: f64,
    amp: f64,
    phase: f64,
}

pub fn generate(config: &SynthConfig) -> Result<WindowedDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (c, v_count, ch, w) = (
        config.num_classes,
        config.num_modalities,
        config.channels_per_modality,
        config.window,
    );
    let split = config.resolved_split();
    let freqs: Vec<usize> = (MIN_FREQ..=config.max_freq()).collect();

    // params[v][k][g]: factor k of modality v for class group g
    let mut params: Vec<Vec<Vec<Factor>>> = Vec::with_capacity(v_count);
    let mut mixing: Vec<Vec<f64>> = Vec::with_capacity(v_count);
    let mut interference_mixing: Vec<Vec<f64>> = Vec::with_capacity(v_count);
    for (v, factors) in split.iter().enumerate() {
        let groups = (0..c).map(|cl| class_group(c, v, cl)).max().unwrap_or(0) + 1;
        let per_factor = factors
            .iter()
            .map(|_| {
                let chosen: Vec<usize> = freqs.choose_multiple(&mut rng, groups).copied().collect();
                chosen
                    .into_iter()
                    .map(|f| Factor {
                        freq: f as f64,
                        amp: rng.random_range(0.5..1.5),
                        phase: rng.random_range(0.0..TAU),
                    })
                    .collect()
            })
            .collect();
        params.push(per_factor);
        interference_mixing.push(
            (0..ch * INTERFERENCE_TONES)
                .map(|_| rng.random_range(-1.0..1.0) * (1.5 / INTERFERENCE_TONES as f64).sqrt())
                .collect::<Vec<f64>>(),
        );
        let scale = 1.0 / (factors.len() as f64).sqrt();
        mixing.push(
            (0..ch * factors.len())
                .map(|_| rng.random_range(-1.0..1.0) * scale * 3f64.sqrt())
                .collect(),
        );
    }

    let mut labels: Vec<usize> = (0..c).flat_map(|cl| std::iter::repeat_n(cl, config.windows_per_class)).collect();
    labels.shuffle(&mut rng);
    let n = labels.len();

    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut data: Vec<Vec<f64>> = (0..v_count).map(|_| Vec::with_capacity(n * w * ch)).collect();
    let mut latent = Vec::new();
    let mut tones = vec![0.0; w * INTERFERENCE_TONES];
    let tone_amp = config.interference * config.noise_std;
    for &label in &labels {
        let shift = rng.random_range(0..w) as f64;
        for v in 0..v_count {
            if tone_amp > 0.0 {
                for k in 0..INTERFERENCE_TONES {
                    let freq = rng.random_range(MIN_FREQ as f64..config.max_freq() as f64);
                    let amp = tone_amp * rng.random_range(0.5..1.5);
                    let phase = rng.random_range(0.0..TAU);
                    for t in 0..w {
                        tones[t * INTERFERENCE_TONES + k] = amp * (TAU * freq * t as f64 / w as f64 + phase).sin();
                    }
                }
            }
            let g = class_group(c, v, label);
            let k_count = split[v].len();
            latent.clear();
            for t in 0..w {
                for k in 0..k_count {
                    let f = params[v][k][g];
                    latent.push(f.amp * (TAU * f.freq * (t as f64 + shift) / w as f64 + f.phase).sin());
                }
            }
            let buf = &mut data[v];
            for t in 0..w {
                let lat = &latent[t * k_count..(t + 1) * k_count];
                for j in 0..ch {
                    let mix = &mixing[v][j * k_count..(j + 1) * k_count];
                    let mut clean: f64 = mix.iter().zip(lat).map(|(m, l)| m * l).sum();
                    if tone_amp > 0.0 {
                        let imix = &interference_mixing[v][j * INTERFERENCE_TONES..(j + 1) * INTERFERENCE_TONES];
                        let tone = &tones[t * INTERFERENCE_TONES..(t + 1) * INTERFERENCE_TONES];
                        clean += imix.iter().zip(tone).map(|(m, x)| m * x).sum::<f64>();
                    }
                    let eps = if config.noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    // stored at f32 precision so the on-disk format round-trips exactly
                    buf.push((clean + eps) as f32 as f64);
                }
            }
        }
    }

    let modalities = (0..v_count)
        .map(|v| ModalitySpec {
            name: SynthConfig::modality_name(v),
            channels: ch,
            window: w,
        })
        .collect();
    let classes = (0..c).map(SynthConfig::class_name).collect();
    let starts = (0..n).map(|i| i * w).collect();
    WindowedDataset::new(modalities, data, Some(labels), classes, starts)
}
