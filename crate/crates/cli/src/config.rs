//! Run configuration documents.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! seed = 1
//! output_dir = "runs/desk"
//!
//! [model]
//! preset = "desk"        # or "paper"; any ModelConfig field may be overridden
//! height = 32
//! width = 32
//! rho = 0.031
//!
//! [train]
//! learning_rate = 1e-4
//! steps = 2000
//! channel = "noiseless"
//!
//! [data]
//! kind = "translate"     # synthetic clips; or `path = "..."` for files on disk
//! clips = 8
//! ```

use std::path::{Path, PathBuf};

use semcom_core::channel::ChannelSpec;
use semcom_core::data_io::{load_clip, make_synthetic_dataset, SyntheticKind, VideoClip};
use semcom_core::semantic_codec::ModelConfig;
use semcom_core::train_eval::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

/// Where training and evaluation clips come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// A directory whose entries (SVC1 files or PNG directories) are clips.
    /// Relative paths resolve against the data root.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Generate synthetic clips instead of reading files.
    #[serde(default)]
    pub kind: Option<SyntheticKind>,
    /// Number of clips; all files under `path` when unset, 8 synthetic ones.
    #[serde(default)]
    pub clips: Option<usize>,
    #[serde(default = "default_max_shift")]
    pub max_shift: i64,
    /// Seed for synthetic clips; the run seed when unset.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_max_shift() -> i64 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    #[serde(default = "default_bits")]
    pub baseline_bits: u32,
}

fn default_eval_batch() -> usize {
    8
}
fn default_bits() -> u32 {
    8
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { batch_size: default_eval_batch(), baseline_bits: default_bits() }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    /// Seeds model init, batch order, channel noise and evaluation.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Default channel for `transmit`.
    pub channel: Option<ChannelSpec>,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    model: toml::Table,
    train: TrainConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    channel: Option<ChannelSpec>,
    #[serde(default)]
    eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse { path: "<config>".into(), message: e.to_string() };
        let doc: Document = toml::from_str(text).map_err(parse_err)?;
        let model = resolve_model(doc.model)?;
        let mut train = doc.train;
        train.seed = doc.seed;
        let cfg = RunConfig {
            seed: doc.seed,
            model,
            train,
            data: doc.data,
            channel: doc.channel,
            eval: doc.eval,
            output_dir: doc.output_dir.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.eval.batch_size == 0 {
            return Err(ConfigError::Invalid("eval.batch_size must be positive".into()));
        }
        if !(1..=16).contains(&self.eval.baseline_bits) {
            return Err(ConfigError::Invalid(format!(
                "eval.baseline_bits must lie in 1..=16, got {}",
                self.eval.baseline_bits
            )));
        }
        if self.data.clips == Some(0) {
            return Err(ConfigError::Invalid("data.clips must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self, ConfigError> {
        self.model.rho = rho;
        self.validate()?;
        Ok(self)
    }

    /// SHA-256 of the configuration as key-sorted JSON, so the value does not
    /// depend on key order or formatting in the source file. The output
    /// directory is not part of it.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Clips described by the `[data]` section. `data_root` is the fallback
    /// dataset directory (normally `SEMCOM_DATA_DIR`).
    pub fn load_dataset(&self, data_root: Option<&Path>) -> Result<Vec<VideoClip>, ConfigError> {
        load_dataset(&self.data, &self.model, self.seed, data_root)
    }
}

/// Clips for a model's frame size, either synthetic (seeded by `seed`) or
/// read from disk.
pub fn load_dataset(
    data: &DataConfig,
    m: &ModelConfig,
    seed: u64,
    data_root: Option<&Path>,
) -> Result<Vec<VideoClip>, ConfigError> {
    if let Some(kind) = data.kind {
        if data.path.is_some() {
            return Err(ConfigError::Invalid("data: set either `kind` or `path`, not both".into()));
        }
        let count = data.clips.unwrap_or(8);
        let seed = data.seed.unwrap_or(seed);
        return make_synthetic_dataset(kind, count, m.height, m.width, m.group_size, data.max_shift, seed)
            .map_err(|e| ConfigError::Invalid(format!("data: {e}")));
    }
    let dir = match (&data.path, data_root) {
        (Some(p), _) if p.is_absolute() => p.clone(),
        (Some(p), Some(root)) => root.join(p),
        (Some(p), None) => p.clone(),
        (None, Some(root)) => root.to_path_buf(),
        (None, None) => {
            return Err(ConfigError::Invalid(
                "data: set `kind` or `path`, or point SEMCOM_DATA_DIR at a clip directory".into(),
            ))
        }
    };
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|source| ConfigError::Io { path: dir.display().to_string(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() || p.extension().is_some_and(|e| e == "svc1"))
        .collect();
    entries.sort();
    if let Some(n) = data.clips {
        entries.truncate(n);
    }
    if entries.is_empty() {
        return Err(ConfigError::Invalid(format!("data: no clips under {}", dir.display())));
    }
    entries
        .iter()
        .map(|p| {
            load_clip(p, m.group_size, (m.height, m.width), m.t)
                .map_err(|e| ConfigError::Invalid(format!("data: {}: {e}", p.display())))
        })
        .collect()
}

/// Start from the preset, then apply every other key of `[model]` on top.
fn resolve_model(mut table: toml::Table) -> Result<ModelConfig, ConfigError> {
    let preset: Preset = match table.remove("preset") {
        Some(v) => v.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(format!("model.preset: {e}")))?,
        None => Preset::default(),
    };
    let need = |table: &toml::Table, key: &str| -> Result<(), ConfigError> {
        if table.contains_key(key) {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("missing field `{key}` in [model]")))
        }
    };
    for key in ["height", "width", "rho"] {
        need(&table, key)?;
    }
    let num = |key: &str| -> Result<f64, ConfigError> {
        match &table[key] {
            toml::Value::Integer(i) => Ok(*i as f64),
            toml::Value::Float(f) => Ok(*f),
            other => Err(ConfigError::Invalid(format!("model.{key} must be a number, got {other}"))),
        }
    };
    let (h, w, rho) = (num("height")? as usize, num("width")? as usize, num("rho")?);
    let base = match preset {
        Preset::Desk => ModelConfig::desk(h, w, rho),
        Preset::Paper => ModelConfig::paper(h, w, rho),
    };
    let mut merged = toml::Table::try_from(&base).expect("model config serializes");
    for (k, v) in table {
        merged.insert(k, v);
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(format!("model: {e}")))
}

/// Parse a grid such as `-5:15:1` (inclusive), `0,5,inf` or a single value.
/// `inf` stands for a noiseless channel.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err("empty grid".into());
    }
    let value = |s: &str| -> Result<f64, String> {
        let s = s.trim();
        let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(format!("bad grid value {s:?}"));
        }
        Ok(v)
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (value(lo)?, value(hi)?, value(step)?);
            if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0) {
                return Err(format!("range {spec:?} needs finite bounds and a positive step"));
            }
            if hi < lo {
                return Err(format!("range {spec:?} is empty"));
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        }
        [list] => list.split(',').map(value).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("grid {spec:?} is neither low:high:step nor a comma list")),
    };
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("-5:15:5").unwrap(), vec![-5.0, 0.0, 5.0, 10.0, 15.0]);
        assert_eq!(parse_grid("0:1:0.25").unwrap().len(), 5);
        assert_eq!(parse_grid("3").unwrap(), vec![3.0]);
        assert_eq!(parse_grid("0, 5,inf").unwrap(), vec![0.0, 5.0, f64::INFINITY]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("5:0:1").is_err());
        assert!(parse_grid("0:5:0").is_err());
        assert!(parse_grid("a:b").is_err());
    }
}
