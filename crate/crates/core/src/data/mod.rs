//! Labeled IQ datasets: synthesis, train/test splitting, and device
//! partitioning.

pub mod format;
pub mod partition;

pub use format::{load_dataset, save_dataset};
pub use partition::{partition_iid, partition_noniid, PartitionMode, PartitionPlan};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::{self, Role};
use crate::signal::{apply_channel, modulate, to_real_frame, ChannelSpec, IQFrame, Scheme};
use crate::Real;

/// Format/generator version stamped into dataset metadata.
pub const GENERATOR_VERSION: u32 = 1;

/// Generation metadata carried alongside the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub snr_db: Real,
    pub seed: u64,
    pub version: u32,
}

/// Frames plus integer class labels over `classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub frames: Vec<IQFrame>,
    pub labels: Vec<u8>,
    pub classes: usize,
    pub scheme_names: Vec<String>,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(
        frames: Vec<IQFrame>,
        labels: Vec<u8>,
        classes: usize,
        scheme_names: Vec<String>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::input(format!(
                "{} frames but {} labels",
                frames.len(),
                labels.len()
            )));
        }
        if scheme_names.len() != classes {
            return Err(Error::input(format!(
                "{} scheme names for {classes} classes",
                scheme_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::input(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(LabeledDataset {
            frames,
            labels,
            classes,
            scheme_names,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Observation window length, zero for an empty dataset.
    pub fn window(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    /// Frame counts per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// New dataset holding the given subset, in index order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut frames = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            let frame = self
                .frames
                .get(ix)
                .ok_or_else(|| Error::input(format!("index {ix} out of bounds")))?;
            frames.push(frame.clone());
            labels.push(self.labels[ix]);
        }
        LabeledDataset::new(
            frames,
            labels,
            self.classes,
            self.scheme_names.clone(),
            self.meta.clone(),
        )
    }
}

/// Synthesizes a balanced dataset: `frames_per_class` frames for every
/// scheme in `schemes`, windows of `window` samples, fully determined by
/// `seed`.
pub fn generate_dataset(
    schemes: &[Scheme],
    frames_per_class: usize,
    spec: &ChannelSpec,
    window: usize,
    samples_per_symbol: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if schemes.is_empty() {
        return Err(Error::config("scheme list must not be empty"));
    }
    if frames_per_class == 0 {
        return Err(Error::config("frames_per_class must be at least 1"));
    }
    if window == 0 || samples_per_symbol == 0 {
        return Err(Error::config(
            "window and samples_per_symbol must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Role::DatasetGen, &[]));
    let symbols_per_frame = window.div_ceil(samples_per_symbol);

    let mut frames = Vec::with_capacity(schemes.len() * frames_per_class);
    let mut labels = Vec::with_capacity(schemes.len() * frames_per_class);
    for (class, &scheme) in schemes.iter().enumerate() {
        let order = scheme.order();
        for _ in 0..frames_per_class {
            let symbols: Vec<usize> = (0..symbols_per_frame)
                .map(|_| rng.random_range(0..order))
                .collect();
            let mut clean = modulate(&symbols, scheme, samples_per_symbol)?;
            clean.truncate(window);
            let received = apply_channel(&clean, spec, &mut rng)?;
            frames.push(to_real_frame(&received)?);
            labels.push(class as u8);
        }
    }

    LabeledDataset::new(
        frames,
        labels,
        schemes.len(),
        schemes.iter().map(|s| s.name().to_string()).collect(),
        DatasetMeta {
            snr_db: spec.snr_db,
            seed,
            version: GENERATOR_VERSION,
        },
    )
}

/// Stratified train/test split: class proportions are preserved within one
/// frame, and the two sides are disjoint.
pub fn split_train_test(
    dataset: &LabeledDataset,
    train_fraction: Real,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Role::TrainTestSplit, &[]));

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes];
    for (ix, &label) in dataset.labels.iter().enumerate() {
        by_class[label as usize].push(ix);
    }

    let mut train_ix = Vec::new();
    let mut test_ix = Vec::new();
    for (class, mut indices) in by_class.into_iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        if indices.len() < 2 {
            return Err(Error::input(format!(
                "class {class} has fewer than 2 frames; cannot split"
            )));
        }
        indices.shuffle(&mut rng);
        let take = ((indices.len() as Real * train_fraction).round() as usize)
            .clamp(1, indices.len() - 1);
        train_ix.extend_from_slice(&indices[..take]);
        test_ix.extend_from_slice(&indices[take..]);
    }
    train_ix.sort_unstable();
    test_ix.sort_unstable();

    Ok((dataset.subset(&train_ix)?, dataset.subset(&test_ix)?))
}

#[cfg(test)]
pub(crate) fn dummy_dataset(per_class: &[usize]) -> LabeledDataset {
    // Cheap dataset with tiny distinct frames for split/partition tests.
    let classes = per_class.len();
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (class, &n) in per_class.iter().enumerate() {
        for k in 0..n {
            let v = 1.0 + (class * 100_000 + k) as Real;
            frames.push(IQFrame::from_interleaved(vec![v, -v]).unwrap());
            labels.push(class as u8);
        }
    }
    LabeledDataset::new(
        frames,
        labels,
        classes,
        (0..classes).map(|c| format!("class{c}")).collect(),
        DatasetMeta {
            snr_db: 10.0,
            seed: 0,
            version: GENERATOR_VERSION,
        },
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Fading;

    fn channel() -> ChannelSpec {
        ChannelSpec::new(10.0, Fading::None, 0).unwrap()
    }

    #[test]
    fn generation_is_balanced_and_counts_add_up() {
        let ds = generate_dataset(&[Scheme::Bpsk, Scheme::Qpsk], 5, &channel(), 64, 8, 7).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.class_counts(), [5, 5]);
        assert_eq!(ds.window(), 64);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&[Scheme::Qam16, Scheme::Gfsk], 8, &channel(), 128, 8, 99).unwrap();
        let b = generate_dataset(&[Scheme::Qam16, Scheme::Gfsk], 8, &channel(), 128, 8, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&[Scheme::Qam16, Scheme::Gfsk], 8, &channel(), 128, 8, 98).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_frames_have_unit_energy() {
        let ds = generate_dataset(&Scheme::ALL, 3, &channel(), 128, 8, 1).unwrap();
        for frame in &ds.frames {
            assert!((frame.energy() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ten_class_paper_scale_counts() {
        // Ten positional classes at 4500 frames each: 45k frames total.
        // Only eight digital schemes exist, so two repeat under new labels.
        let mut schemes = Scheme::ALL.to_vec();
        schemes.push(Scheme::Bpsk);
        schemes.push(Scheme::Qpsk);
        let ds = generate_dataset(&schemes, 4500, &channel(), 16, 8, 3).unwrap();
        assert_eq!(ds.len(), 45_000);
        assert!(ds.class_counts().iter().all(|&c| c == 4500));
    }

    #[test]
    fn split_sizes_match_paper_fractions() {
        let ds = dummy_dataset(&[6000; 10]);
        let (train, test) = split_train_test(&ds, 0.75, 4).unwrap();
        assert_eq!(train.len(), 45_000);
        assert_eq!(test.len(), 15_000);
    }

    #[test]
    fn split_is_disjoint_and_stratified() {
        let ds = dummy_dataset(&[40, 41, 39]);
        let (train, test) = split_train_test(&ds, 0.75, 11).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());

        // Frames are unique by construction, so sample identity doubles as
        // an index check.
        let train_set: std::collections::HashSet<u64> = train
            .frames
            .iter()
            .map(|f| (f.samples()[0] as f64).to_bits())
            .collect();
        assert_eq!(train_set.len(), train.len());
        for frame in &test.frames {
            assert!(!train_set.contains(&(frame.samples()[0] as f64).to_bits()));
        }

        for class in 0..3 {
            let total = ds.class_counts()[class] as Real;
            let got = train.class_counts()[class] as Real;
            assert!((got - total * 0.75).abs() <= 1.0);
        }
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let ds = dummy_dataset(&[5, 1]);
        assert!(split_train_test(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn subset_preserves_order_and_labels() {
        let ds = dummy_dataset(&[3, 3]);
        let sub = ds.subset(&[4, 1]).unwrap();
        assert_eq!(sub.labels, vec![1, 0]);
        assert!(ds.subset(&[17]).is_err());
    }
}
