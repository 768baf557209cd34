use std::path::{Path, PathBuf};

use cocoa_core::pipeline::TrainConfig;
use cocoa_core::synth::SynthConfig;
use cocoa_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// File-level defaults; every field can be overridden by a flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// The dataset location from the flag or environment, else the file.
    pub fn data_path(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data_dir.clone())
            .ok_or_else(|| Error::Config("no dataset given: pass --data, set COCOA_DATA_DIR or data_dir".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_tables_parse() {
        let c: CliConfig = toml::from_str(
            "data_dir = \"d\"\n[synth]\nnoise_std = 0.1\n[train]\nbatch_size = 16\n[train.hyper]\ntau = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.data_dir.as_deref(), Some(Path::new("d")));
        assert_eq!(c.synth.noise_std, 0.1);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.hyper.tau, 0.5);
        assert_eq!(c.train.max_epochs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[train]\nbatch = 4", "[train.hyper]\ntemperature = 1.0"] {
            assert!(toml::from_str::<CliConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn data_flag_wins() {
        let c = CliConfig {
            data_dir: Some("file".into()),
            ..Default::default()
        };
        assert_eq!(c.data_path(Some(Path::new("flag"))).unwrap(), PathBuf::from("flag"));
        assert_eq!(c.data_path(None).unwrap(), PathBuf::from("file"));
        assert!(CliConfig::default().data_path(None).unwrap_err().is_validation());
    }
}
