use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Uniform shuffle, then contiguous near-equal shards.
    Iid,
    /// Every device holds exactly this many classes, assigned round-robin.
    LabelSkew(usize),
}

/// Splits `dataset` into `devices` owned shards. Shards are a partition of the
/// input: nothing is duplicated or dropped.
pub fn partition_data<S: Scalar>(
    dataset: &Dataset<S>,
    devices: usize,
    mode: PartitionMode,
    rng: &mut RngStream,
) -> Result<Vec<Dataset<S>>> {
    if devices == 0 {
        return Err(Error::arg("cannot partition across zero devices"));
    }
    if dataset.len() < devices {
        return Err(Error::arg(format!(
            "{} examples cannot fill {devices} devices",
            dataset.len()
        )));
    }
    let groups: Vec<Vec<usize>> = match mode {
        PartitionMode::Iid => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(rng);
            split_even(&order, devices)
        }
        PartitionMode::LabelSkew(per_device) => label_skew(dataset, devices, per_device, rng)?,
    };
    groups
        .into_iter()
        .enumerate()
        .map(|(k, idx)| {
            if idx.is_empty() {
                return Err(Error::arg(format!("device {k} would receive no examples")));
            }
            let examples = idx.iter().map(|&i| dataset.examples[i].clone()).collect();
            Ok(Dataset::new(examples, dataset.classes)?.with_owner(k))
        })
        .collect()
}

/// Contiguous chunks; the first `len % parts` chunks get one extra item.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

fn label_skew<S: Scalar>(
    dataset: &Dataset<S>,
    devices: usize,
    per_device: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    let classes = dataset.classes;
    if per_device == 0 || per_device > classes {
        return Err(Error::arg(format!(
            "label skew of {per_device} classes per device is infeasible with {classes} classes"
        )));
    }
    // device k holds classes k*s, k*s+1, ..., k*s+s-1 (mod R)
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for k in 0..devices {
        for i in 0..per_device {
            let c = (k * per_device + i) % classes;
            if !holders[c].contains(&k) {
                holders[c].push(k);
            }
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, e) in dataset.examples.iter().enumerate() {
        by_class[e.label].push(i);
    }
    let mut groups = vec![Vec::new(); devices];
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if holders[c].is_empty() {
            return Err(Error::arg(format!(
                "class {c} is assigned to no device; {devices} devices x {per_device} classes do not cover {classes} classes"
            )));
        }
        members.shuffle(rng);
        for (chunk, &k) in split_even(&members, holders[c].len()).into_iter().zip(&holders[c]) {
            groups[k].extend(chunk);
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::generate_synthetic_dataset;
    use crate::rng::Purpose;
    use std::collections::BTreeMap;

    fn data(classes: usize, per_class: usize) -> Dataset<f64> {
        let mut rng = RngStream::for_device(1, 0, Purpose::Data);
        generate_synthetic_dataset(classes, 3, per_class, 2.0, 1.0, &mut rng).unwrap()
    }

    fn rng() -> RngStream {
        RngStream::for_device(1, 0, Purpose::Partition)
    }

    fn multiset(shards: &[Dataset<f64>]) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for s in shards {
            for e in &s.examples {
                *m.entry(format!("{:?}", e)).or_default() += 1;
            }
        }
        m
    }

    #[test]
    fn iid_equal_shards() {
        let d = data(10, 50);
        let shards = partition_data(&d, 10, PartitionMode::Iid, &mut rng()).unwrap();
        assert!(shards.iter().all(|s| s.len() == 50));
        assert_eq!(shards[3].owner, Some(3));
        assert_eq!(multiset(&shards), multiset(&[d]));
    }

    #[test]
    fn extreme_skew_one_class_each() {
        let d = data(5, 8);
        let shards = partition_data(&d, 5, PartitionMode::LabelSkew(1), &mut rng()).unwrap();
        for (k, s) in shards.iter().enumerate() {
            assert_eq!(s.len(), 8);
            assert!(s.examples.iter().all(|e| e.label == k));
        }
    }

    #[test]
    fn skew_two_classes_conserves() {
        let d = data(4, 9);
        let shards = partition_data(&d, 6, PartitionMode::LabelSkew(2), &mut rng()).unwrap();
        for s in &shards {
            let labels: std::collections::BTreeSet<_> = s.examples.iter().map(|e| e.label).collect();
            assert_eq!(labels.len(), 2);
        }
        assert_eq!(multiset(&shards), multiset(&[d]));
    }

    #[test]
    fn deterministic() {
        let d = data(3, 7);
        let a = partition_data(&d, 4, PartitionMode::Iid, &mut rng()).unwrap();
        let b = partition_data(&d, 4, PartitionMode::Iid, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible() {
        let d = data(3, 2);
        assert!(partition_data(&d, 10, PartitionMode::Iid, &mut rng()).is_err());
        assert!(partition_data(&d, 2, PartitionMode::LabelSkew(4), &mut rng()).is_err());
        assert!(partition_data(&d, 1, PartitionMode::LabelSkew(1), &mut rng()).is_err());
    }
}
