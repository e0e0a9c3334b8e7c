//! Run configuration: a TOML file whose keys mirror the command-line flags.
//!
//! ```toml
//! preset = "desk"      # or "paper"
//! seed = 1
//! data = "data"        # dataset directory holding manifest.json
//! run = "run"          # checkpoint directory
//!
//! [train]              # any TrainConfig field; unset keys follow the preset
//! beta = 7.5
//! epochs_gan = 100
//! ```
//!
//! Flags given on the command line override the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use shapecomp::networks::NetPreset;
use shapecomp::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    seed: Option<u64>,
    data: Option<PathBuf>,
    run: Option<PathBuf>,
    train: Option<toml::Table>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: NetPreset,
    pub seed: u64,
    pub data: PathBuf,
    pub run: PathBuf,
    pub train: TrainConfig,
}

/// Values given as flags, each overriding the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub run: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let preset_name = flags.preset.or(file.preset).unwrap_or_else(|| "desk".into());
        let preset = NetPreset::by_name(&preset_name)?;
        let mut train = merge(TrainConfig::by_preset(&preset_name)?, file.train)?;
        let seed = flags.seed.or(file.seed).unwrap_or(train.seed);
        train.seed = seed;
        train.validate()?;
        Ok(Self {
            preset,
            seed,
            data: flags.data.or(file.data).unwrap_or_else(|| "data".into()),
            run: flags.run.or(file.run).unwrap_or_else(|| "run".into()),
            train,
        })
    }
}

fn merge(base: TrainConfig, table: Option<toml::Table>) -> Result<TrainConfig, CliError> {
    let Some(table) = table else { return Ok(base) };
    let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    merged.extend(table);
    merged.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("[train]: {}", e.message())))
}
