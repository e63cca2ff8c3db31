use crate::error::{Error, Result};
use crate::network::{exchange, CommLedger, DeviceGraph, MixingMatrix};
use crate::scalar::Scalar;
use crate::vector::{weighted_combine, ParameterVector, SparseDelta};

use super::sgld::add_noise;
use super::{check_finite, diverged, GradientOracle, NodeState};

pub(crate) fn check_alignment<S: Scalar>(
    states: &[NodeState<S>],
    graph: &DeviceGraph,
    omega: &MixingMatrix<S>,
) -> Result<()> {
    Error::check_dim(states.len(), graph.devices())?;
    Error::check_dim(states.len(), omega.devices())?;
    if let Some(first) = states.first() {
        for s in states {
            Error::check_dim(first.dim(), s.dim())?;
        }
    }
    Ok(())
}

/// `k` and its neighbors, ascending.
pub(crate) fn closed_neighborhood(graph: &DeviceGraph, k: usize) -> Vec<usize> {
    let mut members = graph.neighbors(k).to_vec();
    let at = members.partition_point(|&j| j < k);
    members.insert(at, k);
    members
}

/// One synchronous decentralized Langevin round:
/// `θ_k ← Σ_j ω_kj θ_j - η ∇f_k(θ_k) + noise_scale · ξ_k`.
///
/// Gradients use start-of-round iterates and every device reads its
/// neighbors' start-of-round values.
#[allow(clippy::too_many_arguments)]
pub fn dsgld_round<S: Scalar>(
    states: &mut [NodeState<S>],
    omega: &MixingMatrix<S>,
    graph: &DeviceGraph,
    oracle: &dyn GradientOracle<S>,
    eta: S,
    noise_scale: S,
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    check_alignment(states, graph, omega)?;
    let grads = states
        .iter_mut()
        .map(|s| oracle.gradient(s.device, &s.theta, &mut s.batch_rng))
        .collect::<Result<Vec<_>>>()?;
    let messages: Vec<SparseDelta<S>> = states.iter().map(|s| SparseDelta::dense(&s.theta)).collect();
    exchange(&messages, graph, ledger, round, false)?;

    let snapshot: Vec<ParameterVector<S>> = states.iter().map(|s| s.theta.clone()).collect();
    for (k, (state, grad)) in states.iter_mut().zip(&grads).enumerate() {
        let members = closed_neighborhood(graph, k);
        let vecs: Vec<_> = members.iter().map(|&j| &snapshot[j]).collect();
        let weights: Vec<S> = members.iter().map(|&j| omega.get(k, j)).collect();
        let mixed = weighted_combine(&vecs, &weights)?;
        let mut next = super::gradient_step(&mixed, grad, eta).map_err(|e| diverged(round, k, e))?;
        add_noise(&mut next, noise_scale, &mut state.noise_rng)?;
        state.theta = next;
    }
    check_finite(round, states)
}
