//! The federated training loop: distribute global weights, run benign and
//! adversarial local rounds, aggregate with size weights and adversarial
//! scaling, and record per-round metrics.
//!
//! Device-local work fans out in parallel under the `parallel` feature;
//! aggregation always folds in ascending device-id order, so results are
//! bit-identical across thread counts. Every random stream derives from the
//! experiment's master seed through independent substreams, which makes the
//! rounds before the attack gate bit-identical between a clean run and an
//! attacked run sharing that seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{poison_shard, AttackKind, AttackSpec};
use crate::data::{
    generate_dataset, partition_iid, partition_noniid, split_train_test, LabeledDataset,
    PartitionMode,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{build, evaluate, local_train_round, ModelConfig, TrainConfig};
use crate::nn::ParamSet;
use crate::seed::{self, Role};
use crate::signal::{ChannelSpec, Scheme};
use crate::Real;

/// Whether a device participates honestly or crafts poisoned updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceRole {
    Benign,
    Adversarial,
}

/// One participating device: its shard, role, and (for adversaries) the
/// attack it runs once the gate opens.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    pub role: DeviceRole,
    pub shard: LabeledDataset,
    pub attack: Option<AttackSpec>,
    /// Shard size as reported to the server for aggregation weights.
    pub size: usize,
}

impl DeviceState {
    pub fn benign(id: usize, shard: LabeledDataset) -> Self {
        let size = shard.len();
        DeviceState {
            id,
            role: DeviceRole::Benign,
            shard,
            attack: None,
            size,
        }
    }

    pub fn adversarial(id: usize, shard: LabeledDataset, attack: AttackSpec) -> Self {
        let size = shard.len();
        DeviceState {
            id,
            role: DeviceRole::Adversarial,
            shard,
            attack: Some(attack),
            size,
        }
    }
}

/// Round schedule: total rounds, the attack gate, and device counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// Total training rounds `T`; rounds are numbered `1..=T`.
    pub total_rounds: u64,
    /// Attack gate `t0`: adversaries train on poisoned shards when `t > t0`.
    pub attack_start: u64,
    pub devices: usize,
    pub adversaries: usize,
    /// Master seed; every stream in the experiment derives from it.
    pub seed: u64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 {
            return Err(Error::config("total_rounds must be positive"));
        }
        if self.attack_start > self.total_rounds {
            return Err(Error::config(format!(
                "attack_start {} exceeds total_rounds {}",
                self.attack_start, self.total_rounds
            )));
        }
        if self.devices == 0 {
            return Err(Error::config("device count must be positive"));
        }
        if self.adversaries > self.devices {
            return Err(Error::config(format!(
                "{} adversaries exceed {} devices",
                self.adversaries, self.devices
            )));
        }
        Ok(())
    }
}

/// Per-round measurements on the server's held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub global_accuracy: Real,
    /// Per-class accuracy; `None` where the test set lacks a class.
    pub per_class_accuracy: Vec<Option<Real>>,
    pub mean_loss: Real,
    pub attack_active: bool,
    /// Mean perturbation norm across all adversarial frames this round.
    pub mean_delta_norm: Real,
    pub degenerate_count: usize,
}

struct DeviceOutcome {
    params: ParamSet,
    alpha: Real,
    delta_norm_sum: Real,
    crafted: usize,
    degenerate: usize,
}

/// Size-weighted aggregation with adversarial scaling, folded in ascending
/// device order: `w' = sum_k (size_k / sum_i size_i) * alpha_k * w_k`.
pub fn aggregate(locals: &[ParamSet], sizes: &[usize], alphas: &[Real]) -> Result<ParamSet> {
    if locals.is_empty() {
        return Err(Error::config("nothing to aggregate"));
    }
    if locals.len() != sizes.len() || locals.len() != alphas.len() {
        return Err(Error::config(format!(
            "aggregate arity mismatch: {} params, {} sizes, {} alphas",
            locals.len(),
            sizes.len(),
            alphas.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config("device sizes must be positive"));
    }
    let total: Real = sizes.iter().map(|&s| s as Real).sum();
    let mut acc = locals[0].zeros_like();
    for ((local, &size), &alpha) in locals.iter().zip(sizes).zip(alphas) {
        acc.add_scaled(local, size as Real / total * alpha)?;
    }
    Ok(acc)
}

/// Runs one federated round: every device starts from a copy of the global
/// weights; adversaries past the gate rebuild their poisoned shard against
/// those weights before training. Returns the aggregated parameters and
/// metrics on the held-out test set.
pub fn run_round(
    global: &ParamSet,
    devices: &[DeviceState],
    t: u64,
    schedule: &ScheduleConfig,
    tc: &TrainConfig,
    test_set: &LabeledDataset,
) -> Result<(ParamSet, RoundMetrics)> {
    if devices.is_empty() {
        return Err(Error::config("a round needs at least one device"));
    }
    let gate_open = t > schedule.attack_start;

    let outcomes: Vec<Result<DeviceOutcome>> = exec::ordered_map(devices, |dev| {
        let device_tc = TrainConfig {
            shuffle_seed: seed::derive(schedule.seed, Role::BatchShuffle, &[t, dev.id as u64]),
            ..tc.clone()
        };
        let run = || -> Result<DeviceOutcome> {
            if dev.role == DeviceRole::Adversarial && gate_open {
                let spec = dev.attack.as_ref().ok_or_else(|| {
                    Error::config(format!("adversarial device {} has no attack", dev.id))
                })?;
                let craft_seed =
                    seed::derive(schedule.seed, Role::AwgnCraft, &[t, dev.id as u64]);
                let (poisoned, stats) =
                    poison_shard(&dev.shard, spec, global, dev.shard.meta.snr_db, craft_seed)?;
                let params = local_train_round(global, &poisoned, &device_tc)?;
                let crafted = stats.frames - stats.degenerate_count;
                Ok(DeviceOutcome {
                    params,
                    alpha: spec.alpha,
                    delta_norm_sum: stats.mean_delta_norm * crafted as Real,
                    crafted,
                    degenerate: stats.degenerate_count,
                })
            } else {
                let params = local_train_round(global, &dev.shard, &device_tc)?;
                Ok(DeviceOutcome {
                    params,
                    alpha: 1.0,
                    delta_norm_sum: 0.0,
                    crafted: 0,
                    degenerate: 0,
                })
            }
        };
        run().map_err(|e| Error::Round {
            device: dev.id,
            round: t,
            source: Box::new(e),
        })
    });

    let mut locals = Vec::with_capacity(devices.len());
    let mut sizes = Vec::with_capacity(devices.len());
    let mut alphas = Vec::with_capacity(devices.len());
    let mut delta_sum = 0.0;
    let mut crafted = 0usize;
    let mut degenerate = 0usize;
    let mut any_attacked = false;
    for outcome in outcomes {
        let o = outcome?;
        delta_sum += o.delta_norm_sum;
        crafted += o.crafted;
        degenerate += o.degenerate;
        if o.crafted > 0 || o.degenerate > 0 {
            any_attacked = true;
        }
        locals.push(o.params);
        alphas.push(o.alpha);
    }
    for dev in devices {
        sizes.push(dev.size);
    }

    let next_global = aggregate(&locals, &sizes, &alphas)?;
    let report = evaluate(&next_global, test_set)?;

    let metrics = RoundMetrics {
        round: t,
        global_accuracy: report.accuracy,
        per_class_accuracy: report.per_class,
        mean_loss: report.mean_loss,
        attack_active: any_attacked,
        mean_delta_norm: if crafted > 0 {
            delta_sum / crafted as Real
        } else {
            0.0
        },
        degenerate_count: degenerate,
    };
    Ok((next_global, metrics))
}

/// Where the experiment's data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Synthesize frames, then split train/test by the given fraction.
    Synthetic {
        schemes: Vec<Scheme>,
        frames_per_class: usize,
        channel: ChannelSpec,
        window: usize,
        samples_per_symbol: usize,
        train_fraction: Real,
    },
    /// Use pre-built datasets (e.g. loaded from disk and split upstream).
    Prepared {
        train: LabeledDataset,
        test: LabeledDataset,
    },
}

/// Partition parameters for spreading the training set across devices.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub labels_per_device: usize,
    pub quantity_mean: Real,
    pub quantity_std: Real,
}

/// Full experiment description. All randomness derives from `master_seed`;
/// the model config's own seed field is overridden with it.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub partition: PartitionSpec,
    pub schedule: ScheduleConfig,
    pub attack: AttackSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub final_params: ParamSet,
    pub adversary_ids: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Builds data, partitions it, designates adversaries, and runs the full
/// round schedule. Deterministic given the spec (including its master seed).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.schedule.validate()?;
    let master = spec.schedule.seed;

    let (train, test) = match &spec.data {
        DataSource::Synthetic {
            schemes,
            frames_per_class,
            channel,
            window,
            samples_per_symbol,
            train_fraction,
        } => {
            let full = generate_dataset(
                schemes,
                *frames_per_class,
                channel,
                *window,
                *samples_per_symbol,
                master,
            )?;
            split_train_test(&full, *train_fraction, master)?
        }
        DataSource::Prepared { train, test } => (train.clone(), test.clone()),
    };
    if test.is_empty() {
        return Err(Error::config("test set is empty"));
    }

    let plan = match spec.partition.mode {
        PartitionMode::Iid => partition_iid(&train, spec.schedule.devices, master)?,
        PartitionMode::NonIid => partition_noniid(
            &train,
            spec.schedule.devices,
            spec.partition.quantity_mean,
            spec.partition.quantity_std,
            spec.partition.labels_per_device,
            master,
        )?,
    };
    let mut warnings = plan.warnings.clone();
    if spec.schedule.adversaries > 0 && spec.attack.kind == AttackKind::None {
        return Err(Error::config(
            "adversaries requested but the attack kind is none",
        ));
    }

    // Seeded shuffle decorrelates adversary identity from partition order.
    let mut ids: Vec<usize> = (0..spec.schedule.devices).collect();
    let mut pick_rng =
        ChaCha8Rng::seed_from_u64(seed::derive(master, Role::AdversaryPick, &[]));
    ids.shuffle(&mut pick_rng);
    let mut adversary_ids: Vec<usize> = ids[..spec.schedule.adversaries].to_vec();
    adversary_ids.sort_unstable();

    let mut devices = Vec::with_capacity(spec.schedule.devices);
    for (id, indices) in plan.device_indices.iter().enumerate() {
        if indices.is_empty() {
            warnings.push(format!("device {id} received an empty shard"));
            return Err(Error::config(format!(
                "partition left device {id} without data"
            )));
        }
        let shard = train.subset(indices)?;
        let device = if adversary_ids.contains(&id) {
            DeviceState::adversarial(id, shard, spec.attack.clone())
        } else {
            DeviceState::benign(id, shard)
        };
        devices.push(device);
    }

    let mut model_cfg = spec.model.clone();
    model_cfg.seed = seed::derive(master, Role::ModelInit, &[]);
    let mut global = build(&model_cfg)?;

    let mut metrics = Vec::with_capacity(spec.schedule.total_rounds as usize);
    for t in 1..=spec.schedule.total_rounds {
        let (next, round_metrics) =
            run_round(&global, &devices, t, &spec.schedule, &spec.train, &test)?;
        global = next;
        metrics.push(round_metrics);
    }

    Ok(ExperimentOutcome {
        metrics,
        final_params: global,
        adversary_ids,
        warnings,
    })
}

/// Number of trailing rounds averaged into the "final" accuracy.
pub const FINAL_WINDOW: usize = 5;

/// Mean accuracy over the last [`FINAL_WINDOW`] rounds of a metrics series.
pub fn final_accuracy(metrics: &[RoundMetrics]) -> Result<Real> {
    if metrics.is_empty() {
        return Err(Error::input("empty metrics series"));
    }
    let tail = metrics.len().min(FINAL_WINDOW);
    let sum: Real = metrics[metrics.len() - tail..]
        .iter()
        .map(|m| m.global_accuracy)
        .sum();
    Ok(sum / tail as Real)
}

/// Accuracy penalty in percentage points: final clean accuracy minus final
/// attacked accuracy, where "final" means the last-5-round mean.
pub fn accuracy_penalty(attacked: &[RoundMetrics], clean: &[RoundMetrics]) -> Result<Real> {
    if attacked.len() != clean.len() {
        return Err(Error::input(format!(
            "series lengths differ: {} vs {}",
            attacked.len(),
            clean.len()
        )));
    }
    Ok((final_accuracy(clean)? - final_accuracy(attacked)?) * 100.0)
}
