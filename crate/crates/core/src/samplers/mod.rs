//! Training algorithms: centralized SGLD, decentralized SGLD, CD-BFL
//! (compressed decentralized Langevin with control sequences), and the
//! noise-free CF-FL baseline, plus chain management.

mod chain;
mod compressed;
mod dsgld;
mod oracle;
mod sgld;

pub use chain::{run_chain, ChainOutput, ChainSetup, ChainTracePoint, RoundObserver};
pub use compressed::{cdbfl_local_phase, cdbfl_round, cffl_round, compressed_round};
pub use dsgld::dsgld_round;
pub use oracle::{ClassifierOracle, GradientOracle, QuadraticOracle, ZeroGradient};
pub use sgld::{gradient_step, langevin_scale, sgld_step};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PosteriorEnsemble;
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;
use crate::vector::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sgld,
    Dsgld,
    CdBfl,
    CfFl,
}

impl Algorithm {
    /// Whether the algorithm injects Langevin noise and keeps posterior
    /// samples.
    pub fn is_bayesian(self) -> bool {
        !matches!(self, Algorithm::CfFl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgld => "sgld",
            Algorithm::Dsgld => "dsgld",
            Algorithm::CdBfl => "cd-bfl",
            Algorithm::CfFl => "cf-fl",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgld" => Ok(Algorithm::Sgld),
            "dsgld" => Ok(Algorithm::Dsgld),
            "cd-bfl" | "cdbfl" => Ok(Algorithm::CdBfl),
            "cf-fl" | "cffl" => Ok(Algorithm::CfFl),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct HyperParams {
    /// Learning rate `η`.
    pub eta: f64,
    /// Total rounds `T`.
    pub rounds: usize,
    /// Discarded leading rounds `T_b`.
    pub burn_in: usize,
    /// Local gradient steps per round `L` (compressed algorithms only).
    pub local_steps: usize,
    /// Consensus mixing weight `ζ`.
    pub zeta: f64,
    /// Mini-batch size `M`.
    pub batch_size: usize,
    /// Keep every `thinning`-th post-burn-in sample.
    pub thinning: usize,
    /// Multiplier on the `√(2η)` Langevin noise; 0 turns it off.
    pub noise_multiplier: f64,
    /// Prior share per device; `1/K` when unset.
    pub prior_share: Option<f64>,
    /// Rescale the mini-batch likelihood by `E_k / M`.
    pub unbiased_likelihood: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            rounds: 800,
            burn_in: 700,
            local_steps: 8,
            zeta: 0.03,
            batch_size: 10,
            thinning: 1,
            noise_multiplier: 1.0,
            prior_share: None,
            unbiased_likelihood: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.burn_in >= self.rounds {
            return bad(format!(
                "burn-in {} must be below the round count {}",
                self.burn_in, self.rounds
            ));
        }
        if self.local_steps < 1 {
            return bad("local-steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad(format!("zeta must lie in [0, 1], got {}", self.zeta));
        }
        if self.batch_size < 1 {
            return bad("batch-size must be at least 1".into());
        }
        if self.thinning < 1 {
            return bad("thinning must be at least 1".into());
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad("noise-multiplier must be finite and non-negative".into());
        }
        if let Some(s) = self.prior_share {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("prior-share must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Per-coordinate std of the injected noise, `multiplier · √(2η)`.
    pub fn noise_scale<S: Scalar>(&self) -> S {
        S::of(self.noise_multiplier) * langevin_scale(S::of(self.eta))
    }

    /// Number of samples kept per device over a full chain.
    pub fn retained_count(&self) -> usize {
        (self.rounds - self.burn_in).div_ceil(self.thinning)
    }

    /// Whether the iterate after round index `round` (0-based) is kept.
    pub fn retains(&self, round: usize) -> bool {
        let t = round + 1;
        t > self.burn_in && (t - self.burn_in - 1).is_multiple_of(self.thinning)
    }
}

/// Per-device sampler state: iterate, control sequences, retained samples and
/// the device's private random streams.
#[derive(Debug, Clone)]
pub struct NodeState<S> {
    pub device: usize,
    pub theta: ParameterVector<S>,
    /// Own control sequence `v_k`.
    pub control: ParameterVector<S>,
    /// Weighted sum of neighbors' control increments `v̄_k`.
    pub neighbor_control: ParameterVector<S>,
    pub ensemble: PosteriorEnsemble<S>,
    pub batch_rng: RngStream,
    pub noise_rng: RngStream,
    pub compress_rng: RngStream,
}

impl<S: Scalar> NodeState<S> {
    pub fn new(device: usize, theta: ParameterVector<S>, seed: u64) -> Self {
        let p = theta.dim();
        Self {
            device,
            theta,
            control: ParameterVector::zeros(p),
            neighbor_control: ParameterVector::zeros(p),
            ensemble: PosteriorEnsemble::new(device),
            batch_rng: RngStream::for_device(seed, device, Purpose::Batch),
            noise_rng: RngStream::for_device(seed, device, Purpose::Noise),
            compress_rng: RngStream::for_device(seed, device, Purpose::Compression),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }
}

pub(crate) fn diverged(round: usize, device: usize, err: Error) -> Error {
    match err {
        Error::Numerical(detail) => Error::Diverged {
            round,
            device,
            detail,
        },
        other => other,
    }
}

pub(crate) fn check_finite<S: Scalar>(round: usize, states: &[NodeState<S>]) -> Result<()> {
    for s in states {
        if let Some(i) = s.theta.first_non_finite() {
            return Err(Error::Diverged {
                round,
                device: s.device,
                detail: format!("coordinate {i} is {}", s.theta[i]),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_keeps_one_hundred_samples() {
        let hp = HyperParams::default();
        hp.validate().unwrap();
        assert_eq!(hp.retained_count(), 100);
        assert_eq!((0..hp.rounds).filter(|&r| hp.retains(r)).count(), 100);
        assert!(!hp.retains(698));
        assert!(!hp.retains(699) || hp.burn_in < 700);
        assert!(hp.retains(700));
    }

    #[test]
    fn last_round_only() {
        let hp = HyperParams {
            rounds: 50,
            burn_in: 49,
            ..HyperParams::default()
        };
        assert_eq!(hp.retained_count(), 1);
        assert_eq!((0..50).filter(|&r| hp.retains(r)).count(), 1);
    }

    #[test]
    fn thinning_counts() {
        let hp = HyperParams {
            rounds: 20,
            burn_in: 10,
            thinning: 3,
            ..HyperParams::default()
        };
        assert_eq!(hp.retained_count(), 4);
        assert_eq!((0..20).filter(|&r| hp.retains(r)).count(), 4);
    }

    #[test]
    fn invalid_hyperparams() {
        let base = HyperParams::default();
        for hp in [
            HyperParams { eta: 0.0, ..base },
            HyperParams { burn_in: 800, ..base },
            HyperParams { local_steps: 0, ..base },
            HyperParams { zeta: 1.5, ..base },
            HyperParams { batch_size: 0, ..base },
            HyperParams { thinning: 0, ..base },
            HyperParams { noise_multiplier: -1.0, ..base },
            HyperParams { prior_share: Some(0.0), ..base },
        ] {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }

    #[test]
    fn noise_scale_default() {
        let hp = HyperParams::default();
        assert!((hp.noise_scale::<f64>() - (2e-4f64).sqrt()).abs() < 1e-18);
        let off = HyperParams {
            noise_multiplier: 0.0,
            ..hp
        };
        assert_eq!(off.noise_scale::<f64>(), 0.0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Sgld, Algorithm::Dsgld, Algorithm::CdBfl, Algorithm::CfFl] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("adam".parse::<Algorithm>().is_err());
    }
}
