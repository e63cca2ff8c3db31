//! Compression operators applied to the difference between a locally updated
//! iterate and its control sequence before it is sent to neighbors.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::vector::{ParameterVector, SparseDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressorKind {
    TopK,
    RandomK,
    UniformQuantize,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorConfig {
    pub kind: CompressorKind,
    /// Fraction of coordinates kept by the k-type kinds, in `(0, 1]`.
    pub ratio: f64,
    /// Quantization levels per sign, `>= 1`.
    pub levels: u32,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self::top_k(0.01)
    }
}

impl CompressorConfig {
    pub fn top_k(ratio: f64) -> Self {
        Self {
            kind: CompressorKind::TopK,
            ratio,
            levels: 16,
        }
    }

    pub fn random_k(ratio: f64) -> Self {
        Self {
            kind: CompressorKind::RandomK,
            ..Self::top_k(ratio)
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: CompressorKind::Identity,
            ..Self::top_k(1.0)
        }
    }

    pub fn quantize(levels: u32) -> Self {
        Self {
            kind: CompressorKind::UniformQuantize,
            ratio: 1.0,
            levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::arg(format!(
                "compression ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if self.levels == 0 {
            return Err(Error::arg("quantization needs at least one level"));
        }
        Ok(())
    }

    /// Whether messages carry explicit coordinate indices.
    pub fn is_sparse(&self) -> bool {
        matches!(self.kind, CompressorKind::TopK | CompressorKind::RandomK)
    }

    /// Number of coordinates a message carries for a vector of length `dim`.
    pub fn kept(&self, dim: usize) -> usize {
        match self.kind {
            CompressorKind::TopK | CompressorKind::RandomK => {
                // small slack so 0.01 * 2.7e6 does not round down to 26 999
                let k = (self.ratio * dim as f64 + 1e-9).floor() as usize;
                k.clamp(1, dim.max(1))
            }
            CompressorKind::UniformQuantize | CompressorKind::Identity => dim,
        }
    }
}

/// Applies the configured operator to `x`.
pub fn compress<S: Scalar>(
    cfg: &CompressorConfig,
    x: &[S],
    rng: &mut RngStream,
) -> Result<SparseDelta<S>> {
    cfg.validate()?;
    let p = x.len();
    if p == 0 {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
        });
    }
    match cfg.kind {
        CompressorKind::Identity => Ok(SparseDelta::dense(x)),
        CompressorKind::TopK => top_k(x, cfg.kept(p)),
        CompressorKind::RandomK => {
            let mut picked = index::sample(rng, p, cfg.kept(p)).into_vec();
            picked.sort_unstable();
            let values = picked.iter().map(|&i| x[i]).collect();
            SparseDelta::new(p, picked, values)
        }
        CompressorKind::UniformQuantize => Ok(quantize(x, cfg.levels)),
    }
}

/// Keeps the `k` largest magnitudes; among equal magnitudes the lowest index
/// wins.
fn top_k<S: Scalar>(x: &[S], k: usize) -> Result<SparseDelta<S>> {
    let p = x.len();
    let mut order: Vec<usize> = (0..p).collect();
    if k < p {
        let by_rank = |&a: &usize, &b: &usize| -> Ordering {
            let (ma, mb) = (x[a].abs(), x[b].abs());
            mb.partial_cmp(&ma)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        };
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
        order.sort_unstable();
    }
    let values = order.iter().map(|&i| x[i]).collect();
    SparseDelta::new(p, order, values)
}

/// Rounds each `|x_i| / max|x|` to the nearest of `levels` uniform steps,
/// keeping the sign.
fn quantize<S: Scalar>(x: &[S], levels: u32) -> SparseDelta<S> {
    let scale = x.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    if scale == S::zero() {
        return SparseDelta::dense(x);
    }
    let lv = S::of(f64::from(levels));
    let q: Vec<S> = x
        .iter()
        .map(|&v| {
            let step = (v.abs() / scale * lv).round();
            v.signum() * step * scale / lv
        })
        .collect();
    SparseDelta::dense(&q)
}

/// `‖Q(x) - x‖² / ‖x‖²`.
pub fn contraction_ratio<S: Scalar>(
    cfg: &CompressorConfig,
    x: &[S],
    rng: &mut RngStream,
) -> Result<S> {
    let norm = x.iter().map(|&v| v * v).sum::<S>();
    if norm == S::zero() {
        return Err(Error::arg("contraction ratio is undefined for the zero vector"));
    }
    let q = compress(cfg, x, rng)?.to_dense();
    let err = ParameterVector::from_vec(x.to_vec()).sub(&q)?.norm_sq();
    Ok(err / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use proptest::prelude::*;

    fn rng() -> RngStream {
        RngStream::for_device(17, 0, Purpose::Compression)
    }

    #[test]
    fn top_two_by_magnitude() {
        let cfg = CompressorConfig::top_k(0.5);
        let d = compress(&cfg, &[3.0, -1.0, 0.5, 2.0], &mut rng()).unwrap();
        assert_eq!(d.indices(), &[0, 3]);
        assert_eq!(d.values(), &[3.0, 2.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cfg = CompressorConfig::top_k(0.5);
        let d = compress(&cfg, &[1.0, -2.0, 2.0, -2.0], &mut rng()).unwrap();
        assert_eq!(d.indices(), &[1, 2]);
    }

    #[test]
    fn identity_keeps_everything() {
        let x = [0.0, -4.5, 1e-9];
        let d = compress(&CompressorConfig::identity(), &x, &mut rng()).unwrap();
        assert_eq!(d.indices(), &[0, 1, 2]);
        assert_eq!(d.values(), &x);
    }

    #[test]
    fn one_percent_of_a_large_model() {
        let cfg = CompressorConfig::top_k(0.01);
        assert_eq!(cfg.kept(2_700_000), 27_000);
        assert_eq!(cfg.kept(100), 1);
        assert_eq!(cfg.kept(50), 1);
        assert_eq!(cfg.kept(200), 2);
    }

    #[test]
    fn empty_vector_rejected() {
        let empty: [f64; 0] = [];
        assert!(matches!(
            compress(&CompressorConfig::identity(), &empty, &mut rng()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        assert!(CompressorConfig::top_k(0.0).validate().is_err());
        assert!(CompressorConfig::top_k(1.5).validate().is_err());
        assert!(CompressorConfig::quantize(0).validate().is_err());
    }

    #[test]
    fn contraction_examples() {
        let x = [1.0, -2.0, 3.0];
        let id = contraction_ratio(&CompressorConfig::identity(), &x, &mut rng()).unwrap();
        assert_eq!(id, 0.0);
        let full = contraction_ratio(&CompressorConfig::top_k(1.0), &x, &mut rng()).unwrap();
        assert_eq!(full, 0.0);
        let half = contraction_ratio(&CompressorConfig::top_k(0.5), &[1.0, 1.0], &mut rng()).unwrap();
        assert_eq!(half, 0.5);
        assert!(contraction_ratio(&CompressorConfig::identity(), &[0.0, 0.0], &mut rng()).is_err());
    }

    #[test]
    fn quantizer_levels() {
        let d = compress(&CompressorConfig::quantize(2), &[1.0, -0.3, 0.6, 0.0], &mut rng()).unwrap();
        assert_eq!(d.nnz(), 4);
        assert_eq!(d.values(), &[1.0, -0.5, 0.5, 0.0]);
    }

    #[test]
    fn random_k_reproducible() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let cfg = CompressorConfig::random_k(0.1);
        let a = compress(&cfg, &x, &mut rng()).unwrap();
        let b = compress(&cfg, &x, &mut rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nnz(), 5);
    }

    proptest! {
        #[test]
        fn k_type_output_is_well_formed(
            x in prop::collection::vec(-100.0f64..100.0, 1..64),
            ratio in 0.01f64..1.0,
            random in any::<bool>(),
        ) {
            let cfg = if random { CompressorConfig::random_k(ratio) } else { CompressorConfig::top_k(ratio) };
            let d = compress(&cfg, &x, &mut rng()).unwrap();
            prop_assert_eq!(d.nnz(), cfg.kept(x.len()));
            prop_assert!(d.indices().windows(2).all(|w| w[0] < w[1]));
            for (i, v) in d.iter() {
                prop_assert_eq!(v, x[i]);
            }
        }

        #[test]
        fn quantizer_error_bounded(x in prop::collection::vec(-10.0f64..10.0, 1..32), levels in 1u32..32) {
            let d = compress(&CompressorConfig::quantize(levels), &x, &mut rng()).unwrap();
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, v) in d.iter() {
                prop_assert!((v - x[i]).abs() <= scale / (2.0 * levels as f64) + 1e-12);
            }
        }
    }
}
