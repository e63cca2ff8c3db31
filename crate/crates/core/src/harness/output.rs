//! Result artifacts on disk and the summary report over a results directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, OutputConfig, OutputFormat};
use super::experiment::{Failure, Provenance, ResultsBundle, Summary, TraceRow, SHIFTED_MEAN, SHIFTED_POOLED};

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSON: &str = "trace.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const ENSEMBLES_JSON: &str = "ensembles.json";

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub summary: Option<Summary>,
    pub failure: Option<Failure>,
}

pub fn reliability_file(set: &str) -> String {
    format!("reliability_{set}.csv")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Config as recorded in artifacts: the output section is cleared so the
/// files do not depend on where they were written.
fn recorded_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.output = OutputConfig::default();
    c
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "round,acc,ece,cum_values_sent")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.round, r.acc, r.ece, r.cum_values_sent)?;
    }
    Ok(())
}

/// Writes the trace, `summary.json`, `config.toml`, one reliability CSV per
/// evaluation set and, when kept, the ensembles. Files are a pure function
/// of the bundle.
pub fn emit_results(bundle: &ResultsBundle, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    match format {
        OutputFormat::Csv => {
            let path = dir.join(TRACE_CSV);
            let mut w = create(&path)?;
            write_trace_csv(&bundle.trace, &mut w).map_err(|e| Error::io(&path, e))?;
            finish(&path, w)?;
            written.push(path);
        }
        OutputFormat::Json => {
            let path = dir.join(TRACE_JSON);
            write_json(&path, &bundle.trace)?;
            written.push(path);
        }
    }

    let config = recorded_config(&bundle.config);
    let path = dir.join(SUMMARY_JSON);
    write_json(
        &path,
        &SummaryFile {
            provenance: bundle.provenance.clone(),
            config: config.clone(),
            summary: bundle.summary.clone(),
            failure: bundle.failure.clone(),
        },
    )?;
    written.push(path);

    let path = dir.join(CONFIG_TOML);
    fs::write(&path, config.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    for (name, report) in &bundle.reliability {
        let path = dir.join(reliability_file(name));
        let mut w = create(&path)?;
        report.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
        finish(&path, w)?;
        written.push(path);
    }

    if !bundle.ensembles.is_empty() {
        let path = dir.join(ENSEMBLES_JSON);
        write_json(&path, &bundle.ensembles)?;
        written.push(path);
    }
    Ok(written)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_summary(path: &Path) -> Result<SummaryFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Summaries under `dir`: its own `summary.json`, or those of its immediate
/// subdirectories in name order.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(String, SummaryFile)>> {
    let own = dir.join(SUMMARY_JSON);
    if own.is_file() {
        let name = dir
            .file_name()
            .map_or_else(|| ".".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, read_summary(&own)?)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SUMMARY_JSON).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Data(format!("no {SUMMARY_JSON} under {}", dir.display())));
    }
    subdirs
        .into_iter()
        .map(|p| {
            let name = p.file_name().expect("listed entry").to_string_lossy().into_owned();
            Ok((name, read_summary(&p.join(SUMMARY_JSON))?))
        })
        .collect()
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * scale))
}

/// Plain-text table of final metrics, one line per run.
pub fn report(dir: &Path) -> Result<String> {
    let runs = collect_summaries(dir)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:<7} {:>3} {:>8} {:>8} {:>8} {:>9} {:>10} {:>10} {:>8}",
        "run", "alg", "L", "val_acc%", "val_ece%", "sh_acc%", "sh_ece%", "shp_ece%", "savings%", "status"
    );
    for (name, file) in runs {
        let cfg = &file.config;
        let s = file.summary.as_ref();
        let get = |set: &str| s.and_then(|s| s.set(set));
        let status = match &file.failure {
            Some(f) => format!("diverged@{}", f.round),
            None => "ok".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<20} {:<7} {:>3} {:>8} {:>8} {:>8} {:>9} {:>10} {:>10} {:>8}",
            name,
            cfg.algorithm.name(),
            cfg.hyper.local_steps,
            cell(get("validation").map(|m| m.accuracy), 100.0),
            cell(get("validation").map(|m| m.ece), 100.0),
            cell(get(SHIFTED_MEAN).map(|m| m.accuracy), 100.0),
            cell(get(SHIFTED_MEAN).map(|m| m.ece), 100.0),
            cell(get(SHIFTED_POOLED).map(|m| m.ece), 100.0),
            cell(s.and_then(|s| s.comm.ratios).map(|r| r.savings_percent), 1.0),
            status
        );
    }
    Ok(out)
}
