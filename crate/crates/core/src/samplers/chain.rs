use serde::{Deserialize, Serialize};

use crate::compression::CompressorConfig;
use crate::error::{Error, Result};
use crate::network::{CommLedger, DeviceGraph, MixingMatrix, RoundComm};
use crate::scalar::Scalar;
use crate::vector::ParameterVector;

use super::{
    cdbfl_round, cffl_round, check_finite, diverged, dsgld_round, sgld_step, Algorithm,
    GradientOracle, HyperParams, NodeState,
};

/// Everything a chain needs besides the gradient oracle.
pub struct ChainSetup<'a, S> {
    pub algorithm: Algorithm,
    pub hp: &'a HyperParams,
    pub graph: &'a DeviceGraph,
    pub omega: &'a MixingMatrix<S>,
    pub compressor: CompressorConfig,
    pub seed: u64,
    /// Starting iterate of every device.
    pub init: Vec<ParameterVector<S>>,
}

/// Called once per round after the update (and retention, when it applies).
pub trait RoundObserver<S> {
    fn observe(&mut self, round: usize, states: &[NodeState<S>], ledger: &CommLedger) -> Result<()>;
}

impl<S> RoundObserver<S> for () {
    fn observe(&mut self, _: usize, _: &[NodeState<S>], _: &CommLedger) -> Result<()> {
        Ok(())
    }
}

impl<S, F> RoundObserver<S> for F
where
    F: FnMut(usize, &[NodeState<S>], &CommLedger) -> Result<()>,
{
    fn observe(&mut self, round: usize, states: &[NodeState<S>], ledger: &CommLedger) -> Result<()> {
        self(round, states, ledger)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainTracePoint {
    /// 1-based round number `t`.
    pub round: usize,
    pub cumulative_values: u64,
    /// Mean squared distance of device iterates from their average.
    pub consensus_distance: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput<S> {
    /// Final states; ensembles hold the retained samples of Bayesian chains.
    pub states: Vec<NodeState<S>>,
    pub ledger: CommLedger,
    pub trace: Vec<ChainTracePoint>,
}

impl<S: Scalar> ChainOutput<S> {
    /// Final iterates, the point models of CF-FL.
    pub fn point_models(&self) -> Vec<&ParameterVector<S>> {
        self.states.iter().map(|s| &s.theta).collect()
    }
}

fn consensus_distance<S: Scalar>(states: &[NodeState<S>]) -> f64 {
    let k = states.len() as f64;
    let p = states[0].dim();
    let mut total = 0.0;
    for i in 0..p {
        let mean = states.iter().map(|s| s.theta[i].as_f64()).sum::<f64>() / k;
        total += states
            .iter()
            .map(|s| (s.theta[i].as_f64() - mean).powi(2))
            .sum::<f64>();
    }
    total / k
}

/// Runs `hp.rounds` synchronous rounds of the chosen algorithm.
///
/// Bayesian chains keep `θ_{k,t}` for `t > T_b` (subject to thinning); CF-FL
/// keeps nothing and is read through [`ChainOutput::point_models`]. A
/// non-finite iterate aborts with [`Error::Diverged`].
pub fn run_chain<S: Scalar>(
    setup: ChainSetup<'_, S>,
    oracle: &dyn GradientOracle<S>,
    observer: &mut dyn RoundObserver<S>,
) -> Result<ChainOutput<S>> {
    let ChainSetup {
        algorithm,
        hp,
        graph,
        omega,
        compressor,
        seed,
        init,
    } = setup;
    hp.validate()?;
    compressor.validate()?;
    let devices = graph.devices();
    if algorithm == Algorithm::Sgld && devices != 1 {
        return Err(Error::arg(format!(
            "centralized sgld runs on one device, got {devices}"
        )));
    }
    Error::check_dim(devices, init.len())?;
    Error::check_dim(devices, oracle.devices())?;
    for theta in &init {
        Error::check_dim(oracle.dim(), theta.dim())?;
    }

    let mut states: Vec<NodeState<S>> = init
        .into_iter()
        .enumerate()
        .map(|(k, theta)| NodeState::new(k, theta, seed))
        .collect();
    let mut ledger = CommLedger::new(devices);
    let mut trace = Vec::with_capacity(hp.rounds);
    let eta = S::of(hp.eta);
    let noise: S = hp.noise_scale();

    for round in 0..hp.rounds {
        match algorithm {
            Algorithm::Sgld => {
                let s = &mut states[0];
                let g = oracle
                    .gradient(0, &s.theta, &mut s.batch_rng)
                    .map_err(|e| diverged(round, 0, e))?;
                s.theta = sgld_step(&s.theta, &g, eta, noise, &mut s.noise_rng)
                    .map_err(|e| diverged(round, 0, e))?;
                check_finite(round, &states)?;
                ledger.record(RoundComm {
                    round,
                    ..RoundComm::default()
                });
            }
            Algorithm::Dsgld => {
                dsgld_round(&mut states, omega, graph, oracle, eta, noise, &mut ledger, round)?
            }
            Algorithm::CdBfl => {
                cdbfl_round(&mut states, omega, graph, &compressor, oracle, hp, &mut ledger, round)?
            }
            Algorithm::CfFl => {
                cffl_round(&mut states, omega, graph, &compressor, oracle, hp, &mut ledger, round)?
            }
        }
        if algorithm.is_bayesian() && hp.retains(round) {
            for s in &mut states {
                let sample = s.theta.clone();
                s.ensemble.push(sample);
            }
        }
        trace.push(ChainTracePoint {
            round: round + 1,
            cumulative_values: ledger.total_values,
            consensus_distance: consensus_distance(&states),
        });
        observer.observe(round, &states, &ledger)?;
    }
    Ok(ChainOutput {
        states,
        ledger,
        trace,
    })
}
