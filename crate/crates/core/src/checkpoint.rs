//! Binary parameter container.
//!
//! Layout: magic `COCO`, format version (u32 LE), then records until EOF. A
//! record is a u32 name length, UTF-8 name, u32 rank, rank × u32 dims and the
//! little-endian f64 payload.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderParams, ModalityChannels};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"COCO";
pub const FORMAT_VERSION: u32 = 1;

const WINDOW_RECORD: &str = "meta.window_length";

pub fn write_records(path: &Path, records: &[(String, Tensor)]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in records {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            put(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corruption {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut records = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: "record name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = c
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("record {name}: {e}"),
        })?;
        records.push((name, t));
    }
    Ok(records)
}

/// Saves encoder parameters, plus any extra records (e.g. a classifier head).
pub fn save_encoder(path: &Path, params: &EncoderParams, extra: &[(String, Tensor)]) -> Result<()> {
    let mut records = vec![(
        WINDOW_RECORD.to_string(),
        Tensor::scalar(params.config().window_length as f64),
    )];
    records.extend(params.names().iter().cloned().zip(params.tensors().iter().cloned()));
    records.extend(extra.iter().cloned());
    write_records(path, &records)
}

/// Loads encoder parameters; records not belonging to the encoder are returned alongside.
pub fn load_encoder(path: &Path) -> Result<(EncoderParams, Vec<(String, Tensor)>)> {
    let invalid = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut window = None;
    let mut encoder = Vec::new();
    let mut extra = Vec::new();
    for (name, t) in read_records(path)? {
        if name == WINDOW_RECORD {
            window = Some(t.item() as usize);
        } else if name.starts_with("fusion.") || name.contains(".conv") || name.contains(".norm") || name.contains(".proj.") {
            encoder.push((name, t));
        } else {
            extra.push((name, t));
        }
    }
    let window_length = window.ok_or_else(|| invalid(format!("missing {WINDOW_RECORD} record")))?;

    let mut modalities = Vec::new();
    let mut kernel_sizes = Vec::new();
    let mut filter_counts = Vec::new();
    for (name, t) in &encoder {
        if let Some(m) = name.strip_suffix(".conv0.kernel") {
            modalities.push(ModalityChannels {
                name: m.to_string(),
                channels: t.shape()[1],
            });
        }
    }
    let first = modalities
        .first()
        .ok_or_else(|| invalid("no encoder branches".into()))?
        .name
        .clone();
    for l in 0.. {
        let key = format!("{first}.conv{l}.kernel");
        match encoder.iter().find(|(n, _)| *n == key) {
            Some((_, t)) if t.rank() == 3 => {
                kernel_sizes.push(t.shape()[0]);
                filter_counts.push(t.shape()[2]);
            }
            Some(_) => return Err(invalid(format!("{key} is not rank 3"))),
            None => break,
        }
    }
    let dim_of = |key: &str| {
        encoder
            .iter()
            .find(|(n, _)| n == key)
            .filter(|(_, t)| t.rank() == 2)
            .map(|(_, t)| t.shape()[1])
            .ok_or_else(|| invalid(format!("missing or malformed {key}")))
    };
    let config = EncoderConfig {
        kernel_sizes,
        filter_counts,
        projection_dim: dim_of(&format!("{first}.proj.weight"))?,
        fusion_dim: dim_of("fusion.weight")?,
        window_length,
        modalities,
    };
    Ok((EncoderParams::from_parts(config, encoder)?, extra))
}
