//! Device partitioning: class-balanced i.i.d. shards and label-skewed
//! non-i.i.d. shards with Gaussian-drawn quantities.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{self, Role};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    NonIid,
}

/// Disjoint per-device index lists into a training dataset.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub device_indices: Vec<Vec<usize>>,
    pub mode: PartitionMode,
    /// Non-fatal events, e.g. a class pool running dry in non-i.i.d. mode.
    pub warnings: Vec<String>,
}

impl PartitionPlan {
    pub fn devices(&self) -> usize {
        self.device_indices.len()
    }
}

/// Splits `train` into `devices` equal shards (sizes within one frame),
/// each class-balanced to within one frame per class.
///
/// Every class's indices are shuffled and dealt round-robin; the dealing
/// position carries over between classes so overall sizes stay level.
pub fn partition_iid(train: &LabeledDataset, devices: usize, seed: u64) -> Result<PartitionPlan> {
    if devices == 0 {
        return Err(Error::config("device count must be positive"));
    }
    if train.len() < devices {
        return Err(Error::config(format!(
            "{} frames cannot cover {devices} devices",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Role::Partition, &[]));

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.classes];
    for (ix, &label) in train.labels.iter().enumerate() {
        by_class[label as usize].push(ix);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); devices];
    let mut next_device = 0usize;
    for mut indices in by_class {
        indices.shuffle(&mut rng);
        for ix in indices {
            shards[next_device].push(ix);
            next_device = (next_device + 1) % devices;
        }
    }
    Ok(PartitionPlan {
        device_indices: shards,
        mode: PartitionMode::Iid,
        warnings: Vec::new(),
    })
}

/// Label-skewed partition: each device draws `labels_per_device` distinct
/// classes uniformly at random and a target quantity from
/// `Normal(quantity_mean, quantity_std^2)` (rounded, clipped below at
/// `labels_per_device`), then takes frames without replacement from the
/// pooled chosen classes. A drained pool leaves the device short and records
/// a warning.
pub fn partition_noniid(
    train: &LabeledDataset,
    devices: usize,
    quantity_mean: Real,
    quantity_std: Real,
    labels_per_device: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if devices == 0 {
        return Err(Error::config("device count must be positive"));
    }
    if labels_per_device == 0 {
        return Err(Error::config("labels_per_device must be positive"));
    }
    if labels_per_device > train.classes {
        return Err(Error::config(format!(
            "labels_per_device {labels_per_device} exceeds {} classes",
            train.classes
        )));
    }
    if !(quantity_mean > 0.0) {
        return Err(Error::config("quantity_mean must be positive"));
    }
    if quantity_std < 0.0 {
        return Err(Error::config("quantity_std must not be negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Role::Partition, &[1]));

    // Shuffled per-class pools, consumed from the back.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); train.classes];
    for (ix, &label) in train.labels.iter().enumerate() {
        pools[label as usize].push(ix);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let all_classes: Vec<usize> = (0..train.classes).collect();
    let mut shards = Vec::with_capacity(devices);
    let mut warnings = Vec::new();
    for device in 0..devices {
        let chosen: Vec<usize> = all_classes
            .choose_multiple(&mut rng, labels_per_device)
            .copied()
            .collect();
        let noise: Real = rng.sample(StandardNormal);
        let target = (quantity_mean + quantity_std * noise).round() as i64;
        let target = target.max(labels_per_device as i64) as usize;

        // Draw uniformly from the union of the chosen class pools.
        let mut shard = Vec::with_capacity(target);
        for _ in 0..target {
            let available: Vec<usize> = chosen
                .iter()
                .copied()
                .filter(|&c| !pools[c].is_empty())
                .collect();
            if available.is_empty() {
                warnings.push(format!(
                    "device {device}: class pools {chosen:?} exhausted at {} of {target} frames",
                    shard.len()
                ));
                break;
            }
            // Weight class choice by remaining pool size so the union is
            // sampled uniformly.
            let total: usize = available.iter().map(|&c| pools[c].len()).sum();
            let mut pick = rng.random_range(0..total);
            let mut class = available[0];
            for &c in &available {
                if pick < pools[c].len() {
                    class = c;
                    break;
                }
                pick -= pools[c].len();
            }
            shard.push(pools[class].pop().expect("nonempty pool"));
        }
        shards.push(shard);
    }

    Ok(PartitionPlan {
        device_indices: shards,
        mode: PartitionMode::NonIid,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dummy_dataset;
    use std::collections::HashSet;

    fn assert_disjoint(plan: &PartitionPlan) {
        let mut seen = HashSet::new();
        for shard in &plan.device_indices {
            for &ix in shard {
                assert!(seen.insert(ix), "index {ix} assigned twice");
            }
        }
    }

    #[test]
    fn iid_paper_scale_shard_sizes() {
        let ds = dummy_dataset(&[4500; 10]);
        let plan = partition_iid(&ds, 10, 5).unwrap();
        for shard in &plan.device_indices {
            assert_eq!(shard.len(), 4500);
        }
        assert_disjoint(&plan);
    }

    #[test]
    fn iid_shards_are_balanced_within_one_frame() {
        let ds = dummy_dataset(&[101, 97, 103]);
        let plan = partition_iid(&ds, 7, 2).unwrap();
        assert_disjoint(&plan);

        let sizes: Vec<usize> = plan.device_indices.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        for class in 0..3 {
            let per_device: Vec<usize> = plan
                .device_indices
                .iter()
                .map(|shard| {
                    shard
                        .iter()
                        .filter(|&&ix| ds.labels[ix] as usize == class)
                        .count()
                })
                .collect();
            assert!(
                per_device.iter().max().unwrap() - per_device.iter().min().unwrap() <= 1,
                "class {class} imbalance: {per_device:?}"
            );
        }
    }

    #[test]
    fn iid_single_device_gets_everything() {
        let ds = dummy_dataset(&[10, 10]);
        let plan = partition_iid(&ds, 1, 0).unwrap();
        assert_eq!(plan.device_indices[0].len(), 20);
        let unique: HashSet<usize> = plan.device_indices[0].iter().copied().collect();
        assert_eq!(unique.len(), 20);
    }

    #[test]
    fn noniid_respects_label_budget() {
        let ds = dummy_dataset(&[200; 8]);
        let plan = partition_noniid(&ds, 10, 100.0, 10.0, 3, 9).unwrap();
        assert_disjoint(&plan);
        for shard in &plan.device_indices {
            let labels: HashSet<u8> = shard.iter().map(|&ix| ds.labels[ix]).collect();
            assert!(labels.len() <= 3, "shard spans {labels:?}");
        }
    }

    #[test]
    fn noniid_zero_std_hits_target_exactly() {
        let ds = dummy_dataset(&[500; 4]);
        let plan = partition_noniid(&ds, 5, 120.0, 0.0, 2, 1).unwrap();
        for shard in &plan.device_indices {
            assert_eq!(shard.len(), 120);
        }
        assert!(plan.warnings.is_empty());
    }

    #[test]
    fn noniid_exhaustion_warns_instead_of_failing() {
        let ds = dummy_dataset(&[30, 30]);
        let plan = partition_noniid(&ds, 4, 50.0, 0.0, 2, 3).unwrap();
        assert!(!plan.warnings.is_empty());
        let total: usize = plan.device_indices.iter().map(Vec::len).sum();
        assert!(total <= 60);
        assert_disjoint(&plan);
    }

    #[test]
    fn noniid_rejects_oversized_label_budget() {
        let ds = dummy_dataset(&[10, 10]);
        assert!(partition_noniid(&ds, 2, 5.0, 0.0, 3, 0).is_err());
    }

    #[test]
    fn partitions_are_deterministic() {
        let ds = dummy_dataset(&[64; 6]);
        let a = partition_iid(&ds, 5, 77).unwrap();
        let b = partition_iid(&ds, 5, 77).unwrap();
        assert_eq!(a.device_indices, b.device_indices);

        let c = partition_noniid(&ds, 5, 40.0, 4.0, 3, 77).unwrap();
        let d = partition_noniid(&ds, 5, 40.0, 4.0, 3, 77).unwrap();
        assert_eq!(c.device_indices, d.device_indices);
    }
}
