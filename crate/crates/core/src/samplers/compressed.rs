use crate::compression::{compress, CompressorConfig};
use crate::error::Result;
use crate::network::{exchange, CommLedger, DeviceGraph, MixingMatrix};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::vector::{ParameterVector, SparseDelta};

use super::dsgld::{check_alignment, closed_neighborhood};
use super::sgld::add_noise;
use super::{check_finite, diverged, gradient_step, GradientOracle, HyperParams, NodeState};

/// `L` noiseless stochastic gradient steps, each on a fresh mini-batch.
pub fn cdbfl_local_phase<S: Scalar>(
    theta: &ParameterVector<S>,
    oracle: &dyn GradientOracle<S>,
    device: usize,
    local_steps: usize,
    eta: S,
    rng: &mut RngStream,
) -> Result<ParameterVector<S>> {
    let mut current = theta.clone();
    for _ in 0..local_steps {
        let g = oracle.gradient(device, &current, rng)?;
        current = gradient_step(&current, &g, eta)?;
    }
    Ok(current)
}

/// One CD-BFL round with the Langevin noise std set by `hp`.
#[allow(clippy::too_many_arguments)]
pub fn cdbfl_round<S: Scalar>(
    states: &mut [NodeState<S>],
    omega: &MixingMatrix<S>,
    graph: &DeviceGraph,
    compressor: &CompressorConfig,
    oracle: &dyn GradientOracle<S>,
    hp: &HyperParams,
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    compressed_round(states, omega, graph, compressor, oracle, hp, hp.noise_scale(), ledger, round)
}

/// One CF-FL round: the CD-BFL machinery with no injected noise.
#[allow(clippy::too_many_arguments)]
pub fn cffl_round<S: Scalar>(
    states: &mut [NodeState<S>],
    omega: &MixingMatrix<S>,
    graph: &DeviceGraph,
    compressor: &CompressorConfig,
    oracle: &dyn GradientOracle<S>,
    hp: &HyperParams,
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    compressed_round(states, omega, graph, compressor, oracle, hp, S::zero(), ledger, round)
}

/// Shared body of the compressed rounds. Per device `k`:
///
/// 1. `θ^L_k` from [`cdbfl_local_phase`];
/// 2. `Δ_k = Q(θ^L_k - v_k)`, exchanged with neighbors;
/// 3. `v_k += Δ_k` and `v̄_k += Σ_{j ∈ N_k ∪ {k}} ω_kj Δ_j`;
/// 4. `θ_k = θ^L_k + ζ (v̄_k - v_k) + noise_scale · ξ_k`.
///
/// All devices finish steps 1-2 before any device applies step 3.
#[allow(clippy::too_many_arguments)]
pub fn compressed_round<S: Scalar>(
    states: &mut [NodeState<S>],
    omega: &MixingMatrix<S>,
    graph: &DeviceGraph,
    compressor: &CompressorConfig,
    oracle: &dyn GradientOracle<S>,
    hp: &HyperParams,
    noise_scale: S,
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    check_alignment(states, graph, omega)?;
    let eta = S::of(hp.eta);
    let zeta = S::of(hp.zeta);

    let mut local = Vec::with_capacity(states.len());
    let mut deltas: Vec<SparseDelta<S>> = Vec::with_capacity(states.len());
    for s in states.iter_mut() {
        let theta_l = cdbfl_local_phase(&s.theta, oracle, s.device, hp.local_steps, eta, &mut s.batch_rng)
            .map_err(|e| diverged(round, s.device, e))?;
        let residual = theta_l.sub(&s.control)?;
        deltas.push(compress(compressor, &residual, &mut s.compress_rng)?);
        local.push(theta_l);
    }

    let inbox = exchange(&deltas, graph, ledger, round, compressor.is_sparse())?;

    for (k, (state, theta_l)) in states.iter_mut().zip(local).enumerate() {
        state.control.add_sparse(&deltas[k], S::one())?;
        let mut received = inbox[k].iter();
        for j in closed_neighborhood(graph, k) {
            let msg = if j == k {
                &deltas[k]
            } else {
                received.next().map(|&(_, m)| m).expect("one message per neighbor")
            };
            state.neighbor_control.add_sparse(msg, omega.get(k, j))?;
        }
        let mut next = theta_l;
        for ((t, &vb), &v) in next
            .iter_mut()
            .zip(state.neighbor_control.iter())
            .zip(state.control.iter())
        {
            *t += zeta * (vb - v);
        }
        add_noise(&mut next, noise_scale, &mut state.noise_rng)?;
        state.theta = next;
    }
    check_finite(round, states)
}
