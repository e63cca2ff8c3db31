use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy, ratio_summary, reliability_bins, CommSummary, PredictionRecord, ReliabilityReport};
use crate::models::{
    ensemble_predict, load_csv_dataset, predict_proba, Dataset, ModelSpec, PosteriorEnsemble,
    SyntheticTask,
};
use crate::network::{
    build_graph, metropolis_weights, uncompressed_round_values, CommLedger, DeviceGraph,
    MixingMatrix, VALUE_BYTES,
};
use crate::rng::{Purpose, RngStream};
use crate::samplers::{run_chain, Algorithm, ChainSetup, ClassifierOracle, NodeState, RoundObserver};
use crate::scalar::Scalar;
use crate::vector::{gaussian_noise, ParameterVector};

use super::config::{DataSource, ExperimentConfig, ModelChoice};
use super::partition::partition_data;

/// One row of the per-round trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based round.
    pub round: usize,
    /// Validation accuracy averaged over devices.
    pub acc: f64,
    /// Validation ECE averaged over devices.
    pub ece: f64,
    pub cum_values_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub device: usize,
    pub accuracy: f64,
    pub ece: f64,
}

/// Final metrics on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub name: String,
    pub examples: usize,
    /// Mean over devices.
    pub accuracy: f64,
    /// Mean over devices.
    pub ece: f64,
    pub per_device: Vec<DeviceMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub values_sent: u64,
    pub bytes_sent: u64,
    pub baseline_values: u64,
    pub baseline_bytes: u64,
    /// Absent when there is no traffic to compare against (one device).
    pub ratios: Option<CommSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub round: usize,
    pub device: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub devices: usize,
    pub param_count: usize,
    pub rounds_completed: usize,
    pub retained_per_device: usize,
    /// `validation`, then each shifted set, then the shift aggregates.
    pub sets: Vec<SetMetrics>,
    /// Per-set metrics averaged over the shifted sets.
    pub shifted_mean: Option<SetMetrics>,
    pub comm: CommReport,
    /// Mean squared deviation of device iterates from their average;
    /// absent when it overflows.
    pub final_consensus_distance: Option<f64>,
}

impl Summary {
    pub fn set(&self, name: &str) -> Option<&SetMetrics> {
        self.sets
            .iter()
            .chain(self.shifted_mean.as_ref())
            .find(|s| s.name == name)
    }
}

/// Everything one experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub trace: Vec<TraceRow>,
    /// `None` when the chain diverged.
    pub summary: Option<Summary>,
    pub failure: Option<Failure>,
    /// Device-pooled reliability tables, keyed by evaluation set name.
    pub reliability: Vec<(String, ReliabilityReport<f64>)>,
    /// Retained samples (or final point models) when requested.
    pub ensembles: Vec<PosteriorEnsemble<f64>>,
}

/// Name of the shifted set aggregated over all shift replicas.
pub const SHIFTED_POOLED: &str = "shifted-pooled";
/// Name of the per-set mean over shift replicas.
pub const SHIFTED_MEAN: &str = "shifted-mean";

/// Training shards plus evaluation sets, ready to run.
pub struct Prepared<S> {
    pub spec: ModelSpec,
    pub shards: Vec<Dataset<S>>,
    pub validation: Dataset<S>,
    /// `(name, set)` for every shift replica.
    pub shifted: Vec<(String, Dataset<S>)>,
    pub graph: DeviceGraph,
    pub omega: MixingMatrix<S>,
    pub init: Vec<ParameterVector<S>>,
}

/// Builds data, graph, mixing weights and initial iterates from `cfg`.
pub fn prepare<S: Scalar>(cfg: &ExperimentConfig) -> Result<Prepared<S>> {
    cfg.validate()?;
    let seed = cfg.seed;
    // each shift replica keeps its stream so the feature noise continues it
    type Replicas<S> = Vec<(Dataset<S>, RngStream)>;
    let (train, validation, shift_base): (Dataset<S>, Dataset<S>, Replicas<S>) = match cfg.data.source {
        DataSource::Synthetic => {
            let classes = cfg.data.classes.unwrap_or(0);
            let mut data_rng = RngStream::for_device(seed, 0, Purpose::Data);
            let task = SyntheticTask::<S>::new(
                classes,
                cfg.data.input_dim,
                cfg.data.spread,
                cfg.data.noise,
                &mut data_rng,
            )?;
            let train = task.sample(cfg.data.per_class, &mut data_rng)?;
            let mut eval_rng = RngStream::for_device(seed, 0, Purpose::Eval);
            let validation = task.sample(cfg.eval.per_class, &mut eval_rng)?;
            let shifts = (0..cfg.shift.sets)
                .map(|i| {
                    let mut r = RngStream::for_device(seed, i + 1, Purpose::Eval);
                    Ok((task.sample(cfg.eval.per_class, &mut r)?, r))
                })
                .collect::<Result<Vec<_>>>()?;
            (train, validation, shifts)
        }
        DataSource::Csv => {
            let train_path = cfg.data.csv_path.as_deref().expect("validated");
            let eval_path = cfg.eval.csv_path.as_deref().expect("validated");
            let train = load_csv_dataset::<S>(train_path, cfg.data.classes)?;
            let validation = load_csv_dataset::<S>(eval_path, Some(train.classes))?;
            if train.feature_dim != validation.feature_dim {
                return Err(Error::Data(format!(
                    "{} has {} features but {} has {}",
                    train_path.display(),
                    train.feature_dim,
                    eval_path.display(),
                    validation.feature_dim
                )));
            }
            if let Some(&l) = cfg.shift.labels.iter().find(|&&l| l >= train.classes) {
                return Err(Error::Config(format!(
                    "shift label {l} outside [0, {})",
                    train.classes
                )));
            }
            let shifts = (0..cfg.shift.sets)
                .map(|i| (validation.clone(), RngStream::for_device(seed, i + 1, Purpose::Eval)))
                .collect();
            (train, validation, shifts)
        }
    };

    let classes = train.classes;
    let input_dim = train.feature_dim;
    let spec = match cfg.model.kind {
        ModelChoice::SoftmaxLinear => ModelSpec::softmax_linear(input_dim, classes),
        ModelChoice::Mlp => ModelSpec::mlp(input_dim, cfg.model.hidden, classes),
    };
    spec.validate()?;

    let shifted = if cfg.shift.enabled {
        shift_base
            .into_iter()
            .enumerate()
            .map(|(i, (base, mut r))| {
                let filtered = base.filter_labels(&cfg.shift.labels);
                if filtered.is_empty() {
                    return Err(Error::Data("shift label filter leaves no examples".into()));
                }
                let noisy = filtered.with_feature_noise(cfg.shift.feature_noise, &mut r);
                Ok((format!("shifted-{}", i + 1), noisy))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    // centralized sgld trains one device on the pooled corpus
    let devices = if cfg.algorithm == Algorithm::Sgld { 1 } else { cfg.devices };
    let shards = if devices == 1 {
        vec![train.with_owner(0)]
    } else {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Partition);
        partition_data(&train, devices, cfg.data.partition, &mut rng)?
    };
    let (graph, omega) = if devices == 1 {
        (DeviceGraph::single(), MixingMatrix::identity(1))
    } else {
        let mut rng = RngStream::for_device(seed, 0, Purpose::Graph);
        let graph = build_graph(cfg.topology, devices, &mut rng)?;
        let omega = metropolis_weights(&graph)?;
        (graph, omega)
    };

    let p = spec.param_count();
    let std = S::of(cfg.init.std);
    let draw = |device: usize| {
        let mut rng = RngStream::for_device(seed, device, Purpose::Init);
        if cfg.init.std > 0.0 {
            gaussian_noise(p, std, &mut rng)
        } else {
            Ok(ParameterVector::zeros(p))
        }
    };
    let init = if cfg.init.shared {
        let theta = draw(0)?;
        vec![theta; devices]
    } else {
        (0..devices).map(draw).collect::<Result<Vec<_>>>()?
    };

    Ok(Prepared {
        spec,
        shards,
        validation,
        shifted,
        graph,
        omega,
        init,
    })
}

fn records_from<S: Scalar>(probs: &[Vec<f64>], set: &Dataset<S>) -> Result<Vec<PredictionRecord<f64>>> {
    probs
        .iter()
        .zip(&set.examples)
        .map(|(p, e)| PredictionRecord::new(p.clone(), e.label))
        .collect()
}

fn probs_of<S: Scalar>(spec: &ModelSpec, theta: &ParameterVector<S>, set: &Dataset<S>) -> Result<Vec<Vec<f64>>> {
    set.examples
        .iter()
        .map(|e| Ok(predict_proba(spec, theta, &e.x)?.iter().map(|v| v.as_f64()).collect()))
        .collect()
}

/// Per-round validation metrics: the current iterate before any sample is
/// retained, the running ensemble average afterwards.
struct TraceObserver<'a, S> {
    spec: &'a ModelSpec,
    validation: &'a Dataset<S>,
    bins: usize,
    bayesian: bool,
    retains: Box<dyn Fn(usize) -> bool + 'a>,
    sums: Vec<Vec<Vec<f64>>>,
    counts: Vec<usize>,
    rows: Vec<TraceRow>,
}

impl<S: Scalar> RoundObserver<S> for TraceObserver<'_, S> {
    fn observe(&mut self, round: usize, states: &[NodeState<S>], ledger: &CommLedger) -> Result<()> {
        let keep = self.bayesian && (self.retains)(round);
        let mut acc = 0.0;
        let mut ece = 0.0;
        for (k, s) in states.iter().enumerate() {
            let current = probs_of(self.spec, &s.theta, self.validation)?;
            if keep {
                for (sum, p) in self.sums[k].iter_mut().zip(&current) {
                    for (a, b) in sum.iter_mut().zip(p) {
                        *a += b;
                    }
                }
                self.counts[k] += 1;
            }
            let probs = if self.counts[k] > 0 {
                let n = self.counts[k] as f64;
                self.sums[k]
                    .iter()
                    .map(|row| row.iter().map(|v| v / n).collect())
                    .collect()
            } else {
                current
            };
            let records = records_from(&probs, self.validation)?;
            acc += accuracy(&records)?;
            ece += reliability_bins(&records, self.bins)?.ece;
        }
        let k = states.len() as f64;
        self.rows.push(TraceRow {
            round: round + 1,
            acc: acc / k,
            ece: ece / k,
            cum_values_sent: ledger.total_values,
        });
        Ok(())
    }
}

fn final_probs<S: Scalar>(
    spec: &ModelSpec,
    model: &PosteriorEnsemble<S>,
    set: &Dataset<S>,
) -> Result<Vec<Vec<f64>>> {
    set.examples
        .iter()
        .map(|e| Ok(ensemble_predict(spec, model, &e.x)?.iter().map(|v| v.as_f64()).collect()))
        .collect()
}

fn set_metrics(name: &str, per_device: &[Vec<PredictionRecord<f64>>], bins: usize) -> Result<(SetMetrics, ReliabilityReport<f64>)> {
    let mut rows = Vec::with_capacity(per_device.len());
    for (device, records) in per_device.iter().enumerate() {
        rows.push(DeviceMetrics {
            device,
            accuracy: accuracy(records)?,
            ece: reliability_bins(records, bins)?.ece,
        });
    }
    let k = rows.len() as f64;
    let pooled: Vec<_> = per_device.iter().flatten().cloned().collect();
    let metrics = SetMetrics {
        name: name.to_string(),
        examples: per_device.first().map_or(0, Vec::len),
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / k,
        ece: rows.iter().map(|r| r.ece).sum::<f64>() / k,
        per_device: rows,
    };
    Ok((metrics, reliability_bins(&pooled, bins)?))
}

/// Runs one experiment in scalar type `S`. Divergence is reported through
/// [`ResultsBundle::failure`] together with the partial trace; every other
/// problem is an error.
pub fn execute<S: Scalar>(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    let prepared = prepare::<S>(cfg)?;
    let Prepared {
        spec,
        shards,
        validation,
        shifted,
        graph,
        omega,
        init,
    } = prepared;
    let hp = cfg.hyper;
    let oracle = ClassifierOracle::new(
        spec,
        shards,
        hp.batch_size,
        hp.prior_share,
        hp.unbiased_likelihood,
    )?;
    let devices = graph.devices();
    let mut observer = TraceObserver {
        spec: &spec,
        validation: &validation,
        bins: cfg.eval.bins,
        bayesian: cfg.algorithm.is_bayesian(),
        retains: Box::new(move |r| hp.retains(r)),
        sums: vec![vec![vec![0.0; spec.classes]; validation.len()]; devices],
        counts: vec![0; devices],
        rows: Vec::with_capacity(hp.rounds),
    };
    let setup = ChainSetup {
        algorithm: cfg.algorithm,
        hp: &hp,
        graph: &graph,
        omega: &omega,
        compressor: cfg.compression,
        seed: cfg.seed,
        init,
    };
    let provenance = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let outcome = run_chain(setup, &oracle, &mut observer);
    let trace = std::mem::take(&mut observer.rows);
    let output = match outcome {
        Ok(out) => out,
        Err(Error::Diverged { round, device, detail }) => {
            return Ok(ResultsBundle {
                config: cfg.clone(),
                provenance,
                trace,
                summary: None,
                failure: Some(Failure { round, device, detail }),
                reliability: Vec::new(),
                ensembles: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };

    // final models: retained ensembles, or the last iterate for point models
    let models: Vec<PosteriorEnsemble<S>> = output
        .states
        .iter()
        .map(|s| {
            if cfg.algorithm.is_bayesian() {
                s.ensemble.clone()
            } else {
                PosteriorEnsemble {
                    owner: s.device,
                    samples: vec![s.theta.clone()],
                }
            }
        })
        .collect();

    let bins = cfg.eval.bins;
    let records_for = |set: &Dataset<S>| -> Result<Vec<Vec<PredictionRecord<f64>>>> {
        models
            .iter()
            .map(|m| records_from(&final_probs(&spec, m, set)?, set))
            .collect()
    };
    let mut sets = Vec::new();
    let mut reliability = Vec::new();
    let (m, r) = set_metrics("validation", &records_for(&validation)?, bins)?;
    sets.push(m);
    reliability.push(("validation".to_string(), r));

    let mut shifted_mean = None;
    if !shifted.is_empty() {
        let mut pooled: Vec<Vec<PredictionRecord<f64>>> = vec![Vec::new(); devices];
        let mut per_set = Vec::new();
        for (name, set) in &shifted {
            let records = records_for(set)?;
            for (dst, src) in pooled.iter_mut().zip(&records) {
                dst.extend(src.iter().cloned());
            }
            let (m, r) = set_metrics(name, &records, bins)?;
            per_set.push(m.clone());
            sets.push(m);
            reliability.push((name.clone(), r));
        }
        let (m, r) = set_metrics(SHIFTED_POOLED, &pooled, bins)?;
        sets.push(m);
        reliability.push((SHIFTED_POOLED.to_string(), r));
        let n = per_set.len() as f64;
        shifted_mean = Some(SetMetrics {
            name: SHIFTED_MEAN.to_string(),
            examples: per_set.iter().map(|s| s.examples).sum(),
            accuracy: per_set.iter().map(|s| s.accuracy).sum::<f64>() / n,
            ece: per_set.iter().map(|s| s.ece).sum::<f64>() / n,
            per_device: (0..devices)
                .map(|device| DeviceMetrics {
                    device,
                    accuracy: per_set.iter().map(|s| s.per_device[device].accuracy).sum::<f64>() / n,
                    ece: per_set.iter().map(|s| s.per_device[device].ece).sum::<f64>() / n,
                })
                .collect(),
        });
    }

    let p = spec.param_count();
    let baseline_values = uncompressed_round_values(&graph, p) * hp.rounds as u64;
    let baseline_bytes = baseline_values * VALUE_BYTES;
    let ledger = &output.ledger;
    let ratios = if baseline_values > 0 {
        Some(ratio_summary(
            ledger.total_values,
            ledger.total_bytes(),
            baseline_values,
            baseline_bytes,
        )?)
    } else {
        None
    };

    let summary = Summary {
        algorithm: cfg.algorithm,
        devices,
        param_count: p,
        rounds_completed: output.trace.len(),
        retained_per_device: output.states[0].ensemble.len(),
        sets,
        shifted_mean,
        comm: CommReport {
            values_sent: ledger.total_values,
            bytes_sent: ledger.total_bytes(),
            baseline_values,
            baseline_bytes,
            ratios,
        },
        final_consensus_distance: output
            .trace
            .last()
            .map(|t| t.consensus_distance)
            .filter(|d| d.is_finite()),
    };

    let ensembles = if cfg.output.save_ensembles {
        models
            .iter()
            .map(|m| PosteriorEnsemble {
                owner: m.owner,
                samples: m
                    .samples
                    .iter()
                    .map(|s| ParameterVector::from_vec(s.iter().map(|v| v.as_f64()).collect()))
                    .collect(),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(ResultsBundle {
        config: cfg.clone(),
        provenance,
        trace,
        summary: Some(summary),
        failure: None,
        reliability,
        ensembles,
    })
}

/// Runs in `f64`, writes artifacts when `output.dir` is set, and turns a
/// divergence into [`Error::Diverged`] after the partial trace is on disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    let bundle = execute::<f64>(cfg)?;
    if let Some(dir) = &cfg.output.dir {
        super::output::emit_results(&bundle, dir, cfg.output.format)?;
    }
    if let Some(f) = &bundle.failure {
        return Err(Error::Diverged {
            round: f.round,
            device: f.device,
            detail: f.detail.clone(),
        });
    }
    Ok(bundle)
}
