//! Run execution: expands the variant matrix, drives experiments, and writes
//! per-run CSVs plus an aggregated summary JSON. All output files land via
//! temp-and-rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use fpsim_core::data::{load_dataset, split_train_test, PartitionMode};
use fpsim_core::fed::{
    final_accuracy, run_experiment, DataSource, ExperimentSpec, PartitionSpec, RoundMetrics,
    ScheduleConfig,
};
use fpsim_core::model::TrainConfig;

use crate::config::{resolve_variants, ExperimentConfig, ResolvedVariant};

pub const SUMMARY_FILE: &str = "summary.json";

/// One run of the matrix: a variant at a repetition seed.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub variant: ResolvedVariant,
    pub seed: u64,
}

impl PlannedRun {
    /// `{variant}_{partition}_{fraction}_{seed}.csv`
    pub fn csv_name(&self) -> String {
        format!(
            "{}_{}_{:.2}_{}.csv",
            self.variant.name,
            self.variant.partition_name(),
            self.variant.adversary_fraction,
            self.seed
        )
    }
}

/// Expands variants times repetitions. Repetition seeds are
/// `master, master+1, ...`; each experiment scrambles its seed internally.
pub fn plan_runs(
    config: &ExperimentConfig,
    variant_filter: Option<&[String]>,
    seed_override: Option<u64>,
) -> Result<Vec<PlannedRun>> {
    let variants = resolve_variants(config)?;
    if let Some(filter) = variant_filter {
        for want in filter {
            if !variants.iter().any(|v| v.name == *want) {
                anyhow::bail!("requested variant {want:?} is not defined in the config");
            }
        }
    }
    let master = seed_override.unwrap_or(config.seeds.master);
    let mut runs = Vec::new();
    for variant in variants {
        if let Some(filter) = variant_filter {
            if !filter.iter().any(|w| *w == variant.name) {
                continue;
            }
        }
        for rep in 0..config.seeds.repetitions {
            runs.push(PlannedRun {
                variant: variant.clone(),
                seed: master.wrapping_add(rep as u64),
            });
        }
    }
    Ok(runs)
}

/// Builds the core experiment spec for one planned run.
pub fn experiment_spec(config: &ExperimentConfig, run: &PlannedRun) -> Result<ExperimentSpec> {
    let data = if config.dataset.source == "file" {
        let path = config.dataset.path.as_ref().expect("validated");
        let full = load_dataset(path)?;
        let (train, test) = split_train_test(&full, config.dataset.train_fraction, run.seed)?;
        DataSource::Prepared { train, test }
    } else {
        DataSource::Synthetic {
            schemes: config.parsed_schemes()?,
            frames_per_class: config.dataset.frames_per_class,
            channel: config.channel_spec()?,
            window: config.dataset.window,
            samples_per_symbol: config.dataset.samples_per_symbol,
            train_fraction: config.dataset.train_fraction,
        }
    };
    let classes = if config.dataset.source == "file" {
        match &data {
            DataSource::Prepared { train, .. } => train.classes,
            _ => unreachable!(),
        }
    } else {
        config.dataset.schemes.len()
    };

    let devices = config.schedule.devices;
    let train_len_estimate = (config.dataset.frames_per_class as f64
        * config.dataset.schemes.len() as f64
        * config.dataset.train_fraction)
        .round();
    let quantity_mean = config
        .partition
        .quantity_mean
        .unwrap_or(train_len_estimate / devices as f64);
    let quantity_std = config
        .partition
        .quantity_std
        .unwrap_or(quantity_mean / 100.0);

    Ok(ExperimentSpec {
        data,
        partition: PartitionSpec {
            mode: run.variant.partition_mode,
            labels_per_device: config.partition.labels_per_device,
            quantity_mean,
            quantity_std,
        },
        schedule: ScheduleConfig {
            total_rounds: config.schedule.rounds,
            attack_start: config.schedule.attack_start,
            devices,
            adversaries: run.variant.adversaries(devices),
            seed: run.seed,
        },
        attack: run.variant.attack_spec(classes, &config.attack.flip_map)?,
        model: config.model_config(classes, run.seed),
        train: TrainConfig {
            shuffle_seed: run.seed,
            ..config.train_config()
        },
    })
}

/// Serializes one run's metrics as CSV: 6 fixed columns plus one per-class
/// accuracy column (empty where a class is absent from the test set).
pub fn metrics_to_csv(metrics: &[RoundMetrics], classes: usize) -> String {
    let mut out = String::new();
    out.push_str("round,accuracy,mean_loss,attack_active,mean_delta_norm,degenerate_count");
    for c in 0..classes {
        out.push_str(&format!(",class_{c}"));
    }
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            m.round,
            m.global_accuracy,
            m.mean_loss,
            u8::from(m.attack_active),
            m.mean_delta_norm,
            m.degenerate_count
        ));
        for c in 0..classes {
            match m.per_class_accuracy.get(c).copied().flatten() {
                Some(acc) => out.push_str(&format!(",{acc}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut file = fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VariantSummary {
    pub attack: String,
    pub partition: String,
    pub adversary_fraction: f64,
    pub pnr_db: f64,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// Last-5-round mean accuracy per seed, aligned with `seeds`.
    pub final_accuracy_per_seed: Vec<f64>,
    pub final_accuracy_mean: f64,
    /// Percentage points relative to the clean variant on the same
    /// partition; absent when no clean baseline exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_vs_clean: Option<f64>,
    pub csv_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub config_hash: String,
    pub master_seed: u64,
    pub repetitions: usize,
    pub variants: BTreeMap<String, VariantSummary>,
}

impl RunSummary {
    pub fn all_completed(&self) -> bool {
        self.variants.values().all(|v| v.failures.is_empty())
    }
}

struct RunResult {
    run: PlannedRun,
    outcome: std::result::Result<(Vec<RoundMetrics>, usize), String>,
}

/// Executes the matrix and writes CSVs plus `summary.json` into `out_dir`.
/// Completed runs survive a partial failure; failures land in the summary.
pub fn cmd_run(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    variant_filter: Option<&[String]>,
    seed_override: Option<u64>,
) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let runs = plan_runs(config, variant_filter, seed_override)?;
    if runs.is_empty() {
        anyhow::bail!("no runs match the requested variants");
    }

    let execute = |run: &PlannedRun| -> RunResult {
        let outcome = (|| {
            let spec = experiment_spec(config, run).map_err(|e| format!("{e:#}"))?;
            let classes = spec.model.classes;
            let result = run_experiment(&spec).map_err(|e| e.to_string())?;
            for w in &result.warnings {
                eprintln!("warning: {}: {w}", run.csv_name());
            }
            Ok((result.metrics, classes))
        })();
        RunResult {
            run: run.clone(),
            outcome,
        }
    };

    let results: Vec<RunResult> = if workers > 1 {
        run_parallel(&runs, workers, execute)
    } else {
        runs.iter().map(execute).collect()
    };

    // Write CSVs and fold into per-variant summaries.
    let variants = resolve_variants(config)?;
    let mut summaries: BTreeMap<String, VariantSummary> = BTreeMap::new();
    let mut finals: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for result in &results {
        let v = &result.run.variant;
        let entry = summaries.entry(v.name.clone()).or_insert_with(|| VariantSummary {
            attack: v.kind.name().to_string(),
            partition: v.partition_name().to_string(),
            adversary_fraction: v.adversary_fraction,
            pnr_db: v.pnr_db,
            alpha: v.alpha,
            seeds: Vec::new(),
            final_accuracy_per_seed: Vec::new(),
            final_accuracy_mean: 0.0,
            penalty_vs_clean: None,
            csv_files: Vec::new(),
            failures: Vec::new(),
        });
        entry.seeds.push(result.run.seed);
        match &result.outcome {
            Ok((metrics, classes)) => {
                let csv = metrics_to_csv(metrics, *classes);
                let name = result.run.csv_name();
                write_atomic(&out_dir.join(&name), csv.as_bytes())?;
                let final_acc = final_accuracy(metrics)? as f64;
                entry.final_accuracy_per_seed.push(final_acc);
                entry.csv_files.push(name);
                finals
                    .entry(v.name.clone())
                    .or_default()
                    .push((result.run.seed, final_acc));
            }
            Err(message) => {
                entry.failures.push(RunFailure {
                    seed: result.run.seed,
                    error: message.clone(),
                });
            }
        }
    }

    for summary in summaries.values_mut() {
        if !summary.final_accuracy_per_seed.is_empty() {
            summary.final_accuracy_mean = summary.final_accuracy_per_seed.iter().sum::<f64>()
                / summary.final_accuracy_per_seed.len() as f64;
        }
    }

    // Penalty against the clean variant sharing the partition mode.
    let clean_by_partition: BTreeMap<String, f64> = variants
        .iter()
        .filter(|v| v.kind == fpsim_core::attack::AttackKind::None)
        .filter_map(|v| {
            let s = summaries.get(&v.name)?;
            if s.final_accuracy_per_seed.is_empty() {
                return None;
            }
            Some((v.partition_name().to_string(), s.final_accuracy_mean))
        })
        .collect();
    for summary in summaries.values_mut() {
        if summary.attack == "none" {
            if !summary.final_accuracy_per_seed.is_empty() {
                summary.penalty_vs_clean = Some(0.0);
            }
            continue;
        }
        if let Some(clean) = clean_by_partition.get(&summary.partition) {
            if !summary.final_accuracy_per_seed.is_empty() {
                summary.penalty_vs_clean = Some((clean - summary.final_accuracy_mean) * 100.0);
            }
        }
    }

    let summary = RunSummary {
        config_hash: config.hash()?,
        master_seed: seed_override.unwrap_or(config.seeds.master),
        repetitions: config.seeds.repetitions,
        variants: summaries,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    write_atomic(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(summary)
}

#[cfg(feature = "parallel")]
fn run_parallel<F>(runs: &[PlannedRun], workers: usize, execute: F) -> Vec<RunResult>
where
    F: Fn(&PlannedRun) -> RunResult + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool");
    pool.install(|| runs.par_iter().map(|r| execute(r)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<F>(runs: &[PlannedRun], _workers: usize, execute: F) -> Vec<RunResult>
where
    F: Fn(&PlannedRun) -> RunResult,
{
    runs.iter().map(execute).collect()
}

/// Digest of a generated dataset, printed by the generate command.
pub struct DatasetDigest {
    pub path: PathBuf,
    pub frames: usize,
    pub class_counts: Vec<(String, usize)>,
    pub snr_db: f64,
    pub checksum: u32,
}

impl std::fmt::Display for DatasetDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dataset: {}", self.path.display())?;
        writeln!(f, "frames: {}", self.frames)?;
        for (name, count) in &self.class_counts {
            writeln!(f, "  {name}: {count}")?;
        }
        writeln!(f, "snr_db: {}", self.snr_db)?;
        write!(f, "crc32: {:#010x}", self.checksum)
    }
}

/// Generates the configured dataset and writes it to `out_path`.
pub fn cmd_generate(
    config: &ExperimentConfig,
    out_path: &Path,
    seed_override: Option<u64>,
) -> Result<DatasetDigest> {
    if config.dataset.source != "generate" {
        anyhow::bail!("config dataset.source must be \"generate\" for this command");
    }
    let seed = seed_override.unwrap_or(config.seeds.master);
    let dataset = fpsim_core::data::generate_dataset(
        &config.parsed_schemes()?,
        config.dataset.frames_per_class,
        &config.channel_spec()?,
        config.dataset.window,
        config.dataset.samples_per_symbol,
        seed,
    )?;
    fpsim_core::data::save_dataset(&dataset, out_path)?;
    let checksum = fpsim_core::data::format::dataset_checksum(out_path)?;
    let counts = dataset.class_counts();
    Ok(DatasetDigest {
        path: out_path.to_path_buf(),
        frames: dataset.len(),
        class_counts: dataset
            .scheme_names
            .iter()
            .cloned()
            .zip(counts)
            .collect(),
        snr_db: dataset.meta.snr_db as f64,
        checksum,
    })
}

/// Parses a mode string for summaries.
pub fn partition_mode_name(mode: PartitionMode) -> &'static str {
    match mode {
        PartitionMode::Iid => "iid",
        PartitionMode::NonIid => "noniid",
    }
}
