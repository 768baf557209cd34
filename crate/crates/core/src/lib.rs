//! Cross-modal contrastive representation learning for multimodal time series.
//!
//! Modality-specific temporal convolutional encoders are pretrained without
//! labels by pulling the aligned readings of one window together across
//! modalities while pushing distinct windows apart within each modality. The
//! crate also carries five baseline objectives, the evaluation protocol
//! (frozen linear probe, end-to-end fine-tuning, label-efficiency curves,
//! batch-size sweeps) and a counter-instrumented cost benchmark.

pub mod autodiff;
pub mod batching;
pub mod bench;
pub mod checkpoint;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod io;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use embedding::EmbeddingSet;
pub use error::{Error, Result};
pub use tensor::Tensor;
