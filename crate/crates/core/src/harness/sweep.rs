use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::{apply_override, resolve_key, ExperimentConfig};
use super::experiment::{execute, ResultsBundle, SHIFTED_MEAN};
use super::output::emit_results;

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: String,
    pub dir_name: String,
    #[serde(skip)]
    pub bundle: ResultsBundle,
}

impl ExperimentConfig {
    /// Copy with one dotted key (or alias) replaced.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        apply_override(&mut doc, key, value)?;
        let cfg: Self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}={value}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `L=1,2,4,8,12` into the key and its values.
pub fn parse_sweep_param(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep parameter {spec:?} is not key=v1,v2,...")))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(Error::Config(format!("sweep parameter {spec:?} has no values")));
    }
    Ok((key.trim().to_string(), values))
}

/// Runs one experiment per value. A diverged point is kept (with its partial
/// trace) and does not stop the sweep. With `out`, each run goes to
/// `out/<key>-<value>/` and a `sweep.csv` overview is written.
pub fn sweep(base: &ExperimentConfig, key: &str, values: &[String], out: Option<&Path>) -> Result<Vec<SweepEntry>> {
    let mut entries = Vec::with_capacity(values.len());
    for value in values {
        let cfg = base.with_override(key, value)?;
        let bundle = execute::<f64>(&cfg)?;
        let dir_name = format!("{key}-{value}");
        if let Some(out) = out {
            emit_results(&bundle, &out.join(&dir_name), cfg.output.format)?;
        }
        entries.push(SweepEntry {
            value: value.clone(),
            dir_name,
            bundle,
        });
    }
    if let Some(out) = out {
        write_sweep_csv(&out.join(SWEEP_CSV), key, &entries)?;
    }
    Ok(entries)
}

fn write_sweep_csv(path: &Path, key: &str, entries: &[SweepEntry]) -> Result<()> {
    let mut buf = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(
        buf,
        "{},status,val_acc,val_ece,shifted_acc,shifted_ece,savings_percent",
        resolve_key(key)
    )
    .map_err(io)?;
    for e in entries {
        let s = e.bundle.summary.as_ref();
        let val = s.and_then(|s| s.set("validation"));
        let sh = s.and_then(|s| s.set(SHIFTED_MEAN));
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            e.value,
            if e.bundle.failure.is_some() { "diverged" } else { "ok" },
            f(val.map(|m| m.accuracy)),
            f(val.map(|m| m.ece)),
            f(sh.map(|m| m.accuracy)),
            f(sh.map(|m| m.ece)),
            f(s.and_then(|s| s.comm.ratios).map(|r| r.savings_percent)),
        )
        .map_err(io)?;
    }
    fs::write(path, buf).map_err(io)
}
