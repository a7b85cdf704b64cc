//! Run configuration: a TOML document with one section per subsystem.
//! Every key can also be set from the command line as `--section.key value`
//! (nested tables as `--section.sub.key`).

use std::path::{Path, PathBuf};

use noise2sr::dataset::{FmdOptions, SplitSizes};
use noise2sr::train::TrainConfig;
use noise2sr::{Error, ModelConfig, NoiseConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of clean images for `simulate`.
    pub clean_dir: Option<PathBuf>,
    /// Manifest read by `train` and `evaluate`.
    pub manifest: Option<PathBuf>,
    pub split: SplitSizes,
    pub master_seed: u64,
    pub fmd: FmdOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Bit depth of written images when the input gives none.
    pub bit_depth: u8,
    /// Format of tables printed to stdout.
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            bit_depth: 16,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    /// Side of the synthetic square test scene.
    pub size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Pass threshold in standard errors.
    pub tolerance_se: f64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        TheoremConfig {
            size: 32,
            trials: 10_000,
            seed: 0,
            tolerance_se: 3.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
    pub theorem: TheoremConfig,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(config_err)
    }

    /// Reads `path` (if any), applies `overrides` in order and decodes.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut table = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_key(&mut table, key, parse_value(raw))?;
        }
        toml::Value::Table(table).try_into().map_err(config_err)
    }

    /// Sets every seed in the document to `seed`.
    pub fn seed_overrides(seed: u64) -> Vec<(String, String)> {
        [
            "noise.seed",
            "model.seed",
            "train.seed",
            "data.master_seed",
            "data.fmd.seed",
            "theorem.seed",
        ]
        .iter()
        .map(|k| (k.to_string(), seed.to_string()))
        .collect()
    }
}

/// Dotted names of every settable key, including optional ones.
pub fn config_keys() -> Vec<String> {
    let template = RunConfig {
        noise: NoiseConfig::poisson_gaussian(20.0, 0.02, 0),
        data: DataConfig {
            clean_dir: Some(PathBuf::new()),
            manifest: Some(PathBuf::new()),
            ..Default::default()
        },
        ..Default::default()
    };
    let mut keys = Vec::new();
    flatten(
        &serde_json::to_value(template).expect("config serializes"),
        "",
        &mut keys,
    );
    keys
}

fn flatten(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let name = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(child, &name, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// A TOML literal if `raw` parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Error> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
