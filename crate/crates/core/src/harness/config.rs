//! Experiment configuration.
//!
//! Configs are TOML files with dotted sections (`hyper.eta`,
//! `compression.ratio`, ...). Every key is optional; defaults reproduce the
//! reference setting: 10 devices on a complete graph, `η = 1e-4`, 800 rounds
//! with 700 burn-in, `ζ = 0.03`, `L = 8`, and top-k keeping 1% of the
//! coordinates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compression::CompressorConfig;
use crate::error::{Error, Result};
use crate::network::Topology;
use crate::samplers::{Algorithm, HyperParams};

use super::partition::PartitionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub devices: usize,
    pub topology: Topology,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub shift: ShiftConfig,
    pub hyper: HyperParams,
    pub compression: CompressorConfig,
    pub init: InitConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            algorithm: Algorithm::CdBfl,
            devices: 10,
            topology: Topology::Complete,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            shift: ShiftConfig::default(),
            hyper: HyperParams::default(),
            compression: CompressorConfig::default(),
            init: InitConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    SoftmaxLinear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelConfig {
    pub kind: ModelChoice,
    /// Hidden width of the mlp.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelChoice::SoftmaxLinear,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataConfig {
    pub source: DataSource,
    /// Training rows when `source = "csv"`.
    pub csv_path: Option<PathBuf>,
    /// Class count; inferred from CSV labels when unset.
    pub classes: Option<usize>,
    pub input_dim: usize,
    /// Training examples per class (synthetic).
    pub per_class: usize,
    /// Std of class-center coordinates (synthetic).
    pub spread: f64,
    /// Std of within-class noise (synthetic).
    pub noise: f64,
    pub partition: PartitionMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            csv_path: None,
            classes: Some(10),
            input_dim: 9,
            per_class: 50,
            spread: 1.0,
            noise: 1.0,
            partition: PartitionMode::Iid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalConfig {
    /// Held-out examples per class (synthetic).
    pub per_class: usize,
    /// Held-out rows when the training data is a CSV.
    pub csv_path: Option<PathBuf>,
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            per_class: 50,
            csv_path: None,
            bins: crate::metrics::DEFAULT_BINS,
        }
    }
}

/// Emulated distribution shift: held-out data restricted to `labels` with
/// extra feature noise, drawn `sets` times with independent noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ShiftConfig {
    pub enabled: bool,
    pub labels: Vec<usize>,
    pub feature_noise: f64,
    pub sets: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            labels: (1..=6).collect(),
            feature_noise: 3.0,
            sets: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InitConfig {
    /// Std of the Gaussian initial iterate; 0 starts at the origin.
    pub std: f64,
    /// All devices start from the same draw.
    pub shared: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            std: 0.1,
            shared: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Also write every retained posterior sample.
    pub save_ensembles: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            format: OutputFormat::Csv,
            save_ensembles: false,
        }
    }
}

/// Short names accepted by overrides and sweeps.
const ALIASES: &[(&str, &str)] = &[
    ("L", "hyper.local-steps"),
    ("T", "hyper.rounds"),
    ("Tb", "hyper.burn-in"),
    ("K", "devices"),
    ("M", "hyper.batch-size"),
    ("eta", "hyper.eta"),
    ("zeta", "hyper.zeta"),
    ("ratio", "compression.ratio"),
];

pub fn resolve_key(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == key)
        .map_or(key, |(_, full)| full)
}

fn parse_scalar(raw: &str) -> toml::Value {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    // inline tables / arrays such as `{ erdos-renyi = 0.5 }` or `[1, 2]`
    if let Ok(toml::Value::Table(t)) = format!("v = {raw}").parse::<toml::Value>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Sets a dotted key (or alias) inside a parsed TOML document.
pub fn apply_override(doc: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let full = resolve_key(key);
    let parts: Vec<&str> = full.split('.').collect();
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{full}: {part} is not a section")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{full}: parent is not a section")))?;
    let mut value = parse_scalar(raw);
    // floats written as integers, e.g. `eta=1`
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) =
        (table.get(parts[parts.len() - 1]), &value)
    {
        value = toml::Value::Float(*i as f64);
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides, deserializes and
    /// validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let cfg = Self::parse(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Value = text
            .parse::<toml::Value>()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !doc.is_table() {
            return Err(Error::Config("config must be a table".into()));
        }
        if !overrides.is_empty() {
            // start from the full default so float-typed keys are known
            let mut merged = toml::Value::try_from(Self::default())
                .map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut merged, doc);
            doc = merged;
            for (k, v) in overrides {
                apply_override(&mut doc, k, v)?;
            }
        }
        doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths are taken relative to it.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.csv_path, &mut self.eval.csv_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.devices == 0 {
            return bad("devices must be at least 1".into());
        }
        if self.devices == 1 && self.algorithm != Algorithm::Sgld {
            // a single device degenerates every algorithm but is legal
        }
        if let Topology::ErdosRenyi(q) = self.topology {
            if !(q > 0.0 && q <= 1.0) {
                return bad(format!("erdos-renyi probability must lie in (0, 1], got {q}"));
            }
        }
        self.hyper.validate()?;
        self.compression
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.model.kind == ModelChoice::Mlp && self.model.hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if self.eval.bins == 0 {
            return bad("eval.bins must be positive".into());
        }
        match self.data.source {
            DataSource::Synthetic => {
                let classes = self.data.classes.unwrap_or(0);
                if classes < 2 || self.data.input_dim == 0 || self.data.per_class == 0 {
                    return bad("synthetic data needs classes >= 2, input-dim >= 1, per-class >= 1".into());
                }
                if self.eval.per_class == 0 {
                    return bad("eval.per-class must be positive".into());
                }
                if let Some(&l) = self.shift.labels.iter().find(|&&l| l >= classes) {
                    return bad(format!("shift label {l} outside [0, {classes})"));
                }
            }
            DataSource::Csv => {
                let train = self
                    .data
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.csv-path is required for csv data".into()))?;
                let eval = self
                    .eval
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("eval.csv-path is required for csv data".into()))?;
                for p in [train, eval] {
                    if !p.exists() {
                        return bad(format!("{} does not exist", p.display()));
                    }
                }
            }
        }
        if self.shift.enabled {
            if self.shift.labels.is_empty() || self.shift.sets == 0 {
                return bad("shift needs at least one label and one set".into());
            }
            if self.shift.feature_noise < 0.0 {
                return bad("shift.feature-noise must be non-negative".into());
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except the output
    /// section.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
