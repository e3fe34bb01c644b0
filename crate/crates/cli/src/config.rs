//! Experiment configuration: a single TOML file with dataset, partition,
//! schedule, attack, model, train, and seeds sections plus an explicit
//! variant list. No implicit cross products: every run in the matrix is one
//! `[[variants]]` entry times the configured repetitions.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fpsim_core::attack::{AttackKind, AttackSpec};
use fpsim_core::data::PartitionMode;
use fpsim_core::model::{ModelConfig, TrainConfig};
use fpsim_core::signal::{ChannelSpec, Fading, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub partition: PartitionSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub seeds: SeedsSection,
    #[serde(default)]
    pub variants: Vec<VariantSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// "generate" for synthesis, "file" to ingest a dataset container.
    #[serde(default = "default_source")]
    pub source: String,
    /// Dataset file path when `source = "file"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_frames_per_class")]
    pub frames_per_class: usize,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_fading")]
    pub fading: String,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_sps")]
    pub samples_per_symbol: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// "iid" or "noniid".
    pub mode: String,
    pub labels_per_device: usize,
    /// Target shard size for non-i.i.d. draws; defaults to an even share of
    /// the training set.
    #[serde(default)]
    pub quantity_mean: Option<f64>,
    /// Standard deviation of the shard-size draw; defaults to 1% of the mean.
    #[serde(default)]
    pub quantity_std: Option<f64>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            mode: "iid".into(),
            labels_per_device: 3,
            quantity_mean: None,
            quantity_std: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub devices: usize,
    pub rounds: u64,
    /// Attack gate t0: adversaries poison once the round index exceeds it.
    pub attack_start: u64,
    #[serde(default = "default_fraction")]
    pub adversary_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_pnr")]
    pub pnr_db: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Explicit label derangement; omitted means pairwise swaps.
    #[serde(default)]
    pub flip_map: Option<Vec<u8>>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kind: default_kind(),
            pnr_db: default_pnr(),
            alpha: default_alpha(),
            flip_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_conv1_maps")]
    pub conv1_maps: usize,
    #[serde(default = "default_conv1_kernel")]
    pub conv1_kernel: [usize; 2],
    #[serde(default = "default_conv2_maps")]
    pub conv2_maps: usize,
    #[serde(default = "default_conv2_kernel")]
    pub conv2_kernel: [usize; 2],
    #[serde(default = "default_dense_units")]
    pub dense_units: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            conv1_maps: default_conv1_maps(),
            conv1_kernel: default_conv1_kernel(),
            conv2_maps: default_conv2_maps(),
            conv2_kernel: default_conv2_kernel(),
            dense_units: default_dense_units(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            batch_size: default_batch(),
            local_epochs: default_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub master: u64,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
}

/// One run family. Fields override the base sections; anything omitted
/// inherits from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSection {
    pub name: String,
    /// Attack kind: "none", "fgsm", "awgn", or "flip".
    #[serde(default)]
    pub attack: Option<String>,
    #[serde(default)]
    pub pnr_db: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub adversary_fraction: Option<f64>,
    /// Partition mode override: "iid" or "noniid".
    #[serde(default)]
    pub partition: Option<String>,
}

fn default_source() -> String {
    "generate".into()
}
fn default_schemes() -> Vec<String> {
    Scheme::ALL.iter().map(|s| s.name().to_string()).collect()
}
fn default_frames_per_class() -> usize {
    1000
}
fn default_snr() -> f64 {
    10.0
}
fn default_fading() -> String {
    "none".into()
}
fn default_window() -> usize {
    128
}
fn default_sps() -> usize {
    8
}
fn default_train_fraction() -> f64 {
    0.75
}
fn default_fraction() -> f64 {
    0.3
}
fn default_kind() -> String {
    "fgsm".into()
}
fn default_pnr() -> f64 {
    8.1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_conv1_maps() -> usize {
    16
}
fn default_conv1_kernel() -> [usize; 2] {
    [1, 3]
}
fn default_conv2_maps() -> usize {
    80
}
fn default_conv2_kernel() -> [usize; 2] {
    [2, 3]
}
fn default_dense_units() -> usize {
    256
}
fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    128
}
fn default_epochs() -> usize {
    1
}
fn default_reps() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).context("parsing config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical serialized form (defaults filled in).
    pub fn hash(&self) -> Result<String> {
        let canonical = self.to_toml()?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.source != "generate" && self.dataset.source != "file" {
            bail!(
                "dataset.source must be \"generate\" or \"file\", got {:?}",
                self.dataset.source
            );
        }
        if self.dataset.source == "file" {
            let path = self
                .dataset
                .path
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("dataset.source = \"file\" needs dataset.path"))?;
            if !path.exists() {
                bail!("dataset.path {} does not exist", path.display());
            }
        } else {
            for name in &self.dataset.schemes {
                Scheme::from_name(name)
                    .map_err(|e| anyhow::anyhow!("dataset.schemes: {e}"))?;
            }
            if self.dataset.schemes.is_empty() {
                bail!("dataset.schemes must not be empty");
            }
            if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
                bail!(
                    "dataset.train_fraction must lie in (0, 1), got {}",
                    self.dataset.train_fraction
                );
            }
        }
        parse_fading(&self.dataset.fading)?;
        parse_partition_mode(&self.partition.mode)?;
        if let Some(p) = &self.variants.iter().find_map(|v| v.partition.as_ref()) {
            parse_partition_mode(p)?;
        }
        check_fraction(self.schedule.adversary_fraction)?;
        for v in &self.variants {
            if let Some(f) = v.adversary_fraction {
                check_fraction(f)
                    .with_context(|| format!("variant {:?} adversary_fraction", v.name))?;
            }
            if let Some(kind) = &v.attack {
                parse_attack_kind(kind)
                    .with_context(|| format!("variant {:?} attack", v.name))?;
            }
        }
        parse_attack_kind(&self.attack.kind)?;
        if self.schedule.devices == 0 {
            bail!("schedule.devices must be positive");
        }
        if self.schedule.rounds == 0 {
            bail!("schedule.rounds must be positive");
        }
        if self.schedule.attack_start > self.schedule.rounds {
            bail!(
                "schedule.attack_start {} exceeds schedule.rounds {}",
                self.schedule.attack_start,
                self.schedule.rounds
            );
        }
        if self.seeds.repetitions == 0 {
            bail!("seeds.repetitions must be positive");
        }
        let mut names = HashSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                bail!("duplicate variant name {:?}", v.name);
            }
            if v.name.is_empty() || v.name.contains(['/', '_', ' ']) {
                bail!(
                    "variant name {:?} must be nonempty and free of '_', '/' and spaces",
                    v.name
                );
            }
        }
        Ok(())
    }

    pub fn parsed_schemes(&self) -> Result<Vec<Scheme>> {
        self.dataset
            .schemes
            .iter()
            .map(|n| Scheme::from_name(n).map_err(|e| anyhow::anyhow!("{e}")))
            .collect()
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        Ok(ChannelSpec::new(
            self.dataset.snr_db,
            parse_fading(&self.dataset.fading)?,
            0,
        )?)
    }

    pub fn model_config(&self, classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            window: self.dataset.window,
            classes,
            conv1_maps: self.model.conv1_maps,
            conv1_kernel: (self.model.conv1_kernel[0], self.model.conv1_kernel[1]),
            conv2_maps: self.model.conv2_maps,
            conv2_kernel: (self.model.conv2_kernel[0], self.model.conv2_kernel[1]),
            dense_units: self.model.dense_units,
            seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            local_epochs: self.train.local_epochs,
            shuffle_seed: 0,
        }
    }
}

pub fn parse_fading(name: &str) -> Result<Fading> {
    match name {
        "none" => Ok(Fading::None),
        "rayleigh_flat" => Ok(Fading::RayleighFlat),
        other => bail!("unknown fading {other:?} (expected \"none\" or \"rayleigh_flat\")"),
    }
}

pub fn parse_partition_mode(name: &str) -> Result<PartitionMode> {
    match name {
        "iid" => Ok(PartitionMode::Iid),
        "noniid" => Ok(PartitionMode::NonIid),
        other => bail!("unknown partition mode {other:?} (expected \"iid\" or \"noniid\")"),
    }
}

pub fn parse_attack_kind(name: &str) -> Result<AttackKind> {
    match name {
        "none" => Ok(AttackKind::None),
        "fgsm" => Ok(AttackKind::Fgsm),
        "awgn" => Ok(AttackKind::Awgn),
        "flip" => Ok(AttackKind::Flip),
        other => bail!("unknown attack kind {other:?}"),
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        bail!("adversary fraction {f} must lie in [0, 1]");
    }
    Ok(())
}

/// Resolved settings for one run of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVariant {
    pub name: String,
    pub kind: AttackKind,
    pub pnr_db: f64,
    pub alpha: f64,
    pub adversary_fraction: f64,
    pub partition_mode: PartitionMode,
}

impl ResolvedVariant {
    pub fn adversaries(&self, devices: usize) -> usize {
        (self.adversary_fraction * devices as f64).round() as usize
    }

    pub fn partition_name(&self) -> &'static str {
        match self.partition_mode {
            PartitionMode::Iid => "iid",
            PartitionMode::NonIid => "noniid",
        }
    }

    pub fn attack_spec(&self, classes: usize, flip_map: &Option<Vec<u8>>) -> Result<AttackSpec> {
        let spec = AttackSpec::new(self.kind, self.pnr_db, self.alpha)?;
        if self.kind == AttackKind::Flip {
            let map = match flip_map {
                Some(m) => m.clone(),
                None => fpsim_core::attack::default_flip_map(classes)?,
            };
            return Ok(spec.with_flip_map(map)?);
        }
        Ok(spec)
    }
}

/// Expands the variant list against the base sections. An empty variant list
/// yields a single run family named after the base attack kind.
pub fn resolve_variants(config: &ExperimentConfig) -> Result<Vec<ResolvedVariant>> {
    let base_mode = parse_partition_mode(&config.partition.mode)?;
    let base_kind = parse_attack_kind(&config.attack.kind)?;
    if config.variants.is_empty() {
        return Ok(vec![ResolvedVariant {
            name: base_kind.name().to_string(),
            kind: base_kind,
            pnr_db: config.attack.pnr_db,
            alpha: config.attack.alpha,
            adversary_fraction: if base_kind == AttackKind::None {
                0.0
            } else {
                config.schedule.adversary_fraction
            },
            partition_mode: base_mode,
        }]);
    }
    config
        .variants
        .iter()
        .map(|v| {
            let kind = match &v.attack {
                Some(k) => parse_attack_kind(k)?,
                None => base_kind,
            };
            let fraction = if kind == AttackKind::None {
                0.0
            } else {
                v.adversary_fraction
                    .unwrap_or(config.schedule.adversary_fraction)
            };
            Ok(ResolvedVariant {
                name: v.name.clone(),
                kind,
                pnr_db: v.pnr_db.unwrap_or(config.attack.pnr_db),
                alpha: v.alpha.unwrap_or(config.attack.alpha),
                adversary_fraction: fraction,
                partition_mode: match &v.partition {
                    Some(p) => parse_partition_mode(p)?,
                    None => base_mode,
                },
            })
        })
        .collect()
}
