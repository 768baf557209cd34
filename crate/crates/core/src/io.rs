//! On-disk dataset format and embedding export.
//!
//! A dataset directory holds `manifest.toml` plus one headerless file per
//! modality (little-endian f32, `[num_windows, window, channels]` row-major)
//! and an optional labels file (little-endian u32 per window).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::{ModalitySpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    /// Little-endian u64 window start offsets, present when starts are not evenly strided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<String>,
    pub modalities: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_windows: usize,
    #[serde(default)]
    pub classes: Vec<String>,
    /// Raw-time distance between consecutive window starts; defaults to the window length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    pub modalities: Vec<ModalitySpec>,
    pub files: ManifestFiles,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_windows == 0 {
            return Err(Error::Validation("manifest declares zero windows".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::Validation("manifest declares no modalities".into()));
        }
        for m in &self.modalities {
            if m.channels == 0 || m.window == 0 {
                return Err(Error::Validation(format!(
                    "modality {}: channels and window must be positive",
                    m.name
                )));
            }
            if !self.files.modalities.contains_key(&m.name) {
                return Err(Error::Validation(format!("no file listed for modality {}", m.name)));
            }
        }
        if let Some(extra) = self
            .files
            .modalities
            .keys()
            .find(|k| !self.modalities.iter().any(|m| &m.name == *k))
        {
            return Err(Error::Validation(format!("file listed for undeclared modality {extra}")));
        }
        if self.files.modalities.len() != self.modalities.len() {
            return Err(Error::Validation("modality declared more than once".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Validation("stride must be positive".into()));
        }
        Ok(())
    }
}

fn uniform_stride(starts: &[usize]) -> Option<usize> {
    match starts {
        [] | [_] => None,
        [0, s, ..] if *s > 0 => starts
            .iter()
            .enumerate()
            .all(|(i, &v)| v == i * s)
            .then_some(*s),
        _ => None,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the dataset into `directory` (created if needed) and returns the manifest path.
pub fn write_dataset(dataset: &WindowedDataset, directory: &Path) -> Result<PathBuf> {
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    let mut files = ManifestFiles {
        labels: None,
        starts: None,
        modalities: BTreeMap::new(),
    };
    for (i, spec) in dataset.modalities().iter().enumerate() {
        let file = format!("modality{i}.f32");
        let bytes: Vec<u8> = dataset
            .modality_data(i)
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        write_file(&directory.join(&file), &bytes)?;
        files.modalities.insert(spec.name.clone(), file);
    }
    if let Some(labels) = dataset.labels() {
        let bytes: Vec<u8> = labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
        write_file(&directory.join("labels.u32"), &bytes)?;
        files.labels = Some("labels.u32".into());
    }
    let default_stride = dataset.modalities()[0].window;
    let stride = match uniform_stride(dataset.starts()) {
        Some(s) => Some(s),
        None if dataset.starts() == [0] => None,
        None => {
            let bytes: Vec<u8> = dataset.starts().iter().flat_map(|&s| (s as u64).to_le_bytes()).collect();
            write_file(&directory.join("starts.u64"), &bytes)?;
            files.starts = Some("starts.u64".into());
            None
        }
    };
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        num_windows: dataset.len(),
        classes: dataset.classes().to_vec(),
        stride: stride.filter(|&s| s != default_stride),
        modalities: dataset.modalities().to_vec(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
    let path = directory.join(MANIFEST_NAME);
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn read_exact_file(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

/// Reads a dataset from its manifest file or from the directory containing it.
pub fn read_dataset(path: &Path) -> Result<WindowedDataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let version: toml::Value = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    match version.get("format_version").and_then(toml::Value::as_integer) {
        Some(v) if v == FORMAT_VERSION as i64 => {}
        Some(v) => {
            return Err(Error::Version {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                supported: FORMAT_VERSION,
            })
        }
        None => {
            return Err(Error::Parse {
                path: manifest_path,
                message: "missing integer format_version".into(),
            })
        }
    }
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    let n = manifest.num_windows;

    let mut data = Vec::with_capacity(manifest.modalities.len());
    for spec in &manifest.modalities {
        let file = dir.join(&manifest.files.modalities[&spec.name]);
        let expected = (n * spec.window * spec.channels * 4) as u64;
        let bytes = read_exact_file(&file, expected)?;
        data.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
        );
    }
    let labels = match &manifest.files.labels {
        Some(f) => {
            let bytes = read_exact_file(&dir.join(f), (n * 4) as u64)?;
            Some(
                bytes
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
                    .collect(),
            )
        }
        None => None,
    };
    let starts = match &manifest.files.starts {
        Some(f) => read_exact_file(&dir.join(f), (n * 8) as u64)?
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
            .collect(),
        None => {
            let stride = manifest.stride.unwrap_or(manifest.modalities[0].window);
            (0..n).map(|i| i * stride).collect()
        }
    };
    WindowedDataset::new(manifest.modalities, data, labels, manifest.classes, starts)
}

/// Writes one CSV row per sample: embedding columns `e0..` then `label` when labels are given.
pub fn export_embeddings(embeddings: &Tensor, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    if embeddings.rank() != 2 {
        return Err(Error::Input(format!(
            "embeddings must be a matrix, got shape {:?}",
            embeddings.shape()
        )));
    }
    if let Some(l) = labels {
        if l.len() != embeddings.rows() {
            return Err(Error::Input(format!(
                "{} labels for {} embedding rows",
                l.len(),
                embeddings.rows()
            )));
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..embeddings.cols()).map(|j| format!("e{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..embeddings.rows() {
        let mut row: Vec<String> = embeddings.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_embeddings`] back into values and labels.
pub fn read_embeddings(path: &Path) -> Result<(Tensor, Option<Vec<usize>>)> {
    let parse_err = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let has_label = header.iter().next_back() == Some("label");
    let d = header.len() - usize::from(has_label);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        for field in rec.iter().take(d) {
            values.push(field.parse::<f64>().map_err(|e| parse_err(format!("{field}: {e}")))?);
        }
        if has_label {
            let field = &rec[d];
            labels.push(field.parse::<usize>().map_err(|e| parse_err(format!("{field}: {e}")))?);
        }
    }
    let rows = labels.len().max(values.len().checked_div(d).unwrap_or(0));
    let t = Tensor::new(vec![rows, d], values).map_err(|e| parse_err(e.to_string()))?;
    Ok((t, has_label.then_some(labels)))
}
