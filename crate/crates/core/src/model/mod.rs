//! The lightweight two-conv CNN classifier: construction, prediction,
//! one-round local training, and evaluation.
//!
//! Input frames enter as one channel of a `2 x window` image (in-phase row,
//! quadrature row). The stack is conv(16 maps, 1x3) -> ReLU ->
//! conv(80 maps, 2x3) -> ReLU -> flatten -> dense(256) -> ReLU ->
//! dense(classes) -> softmax, all valid convolutions with stride 1.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{backward, forward, sgd_step, Layer, Network, ParamSet, Reduction, Tensor};
use crate::seed::{self, Role};
use crate::signal::IQFrame;
use crate::Real;

/// Frames per forward pass during evaluation and prediction.
const EVAL_BATCH: usize = 256;

/// Classifier architecture parameters. The defaults mirror the lightweight
/// VT-CNN2 layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub window: usize,
    pub classes: usize,
    pub conv1_maps: usize,
    pub conv1_kernel: (usize, usize),
    pub conv2_maps: usize,
    pub conv2_kernel: (usize, usize),
    pub dense_units: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(window: usize, classes: usize, seed: u64) -> Self {
        ModelConfig {
            window,
            classes,
            conv1_maps: 16,
            conv1_kernel: (1, 3),
            conv2_maps: 80,
            conv2_kernel: (2, 3),
            dense_units: 256,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window < 8 {
            return Err(Error::config(format!(
                "window {} is too small (minimum 8)",
                self.window
            )));
        }
        if self.classes < 2 {
            return Err(Error::config("at least 2 classes required"));
        }
        let (h1, w1) = self.conv1_out();
        if self.conv1_kernel.0 > 2 || self.conv1_kernel.1 > self.window {
            return Err(Error::config(format!(
                "conv1 kernel {:?} exceeds the 2x{} input",
                self.conv1_kernel, self.window
            )));
        }
        if self.conv2_kernel.0 > h1 || self.conv2_kernel.1 > w1 {
            return Err(Error::config(format!(
                "conv2 kernel {:?} exceeds the {h1}x{w1} conv1 output",
                self.conv2_kernel
            )));
        }
        Ok(())
    }

    fn conv1_out(&self) -> (usize, usize) {
        (2 - self.conv1_kernel.0 + 1, self.window - self.conv1_kernel.1 + 1)
    }

    fn conv2_out(&self) -> (usize, usize) {
        let (h1, w1) = self.conv1_out();
        (h1 - self.conv2_kernel.0 + 1, w1 - self.conv2_kernel.1 + 1)
    }

    /// Flattened feature count feeding the first dense layer.
    pub fn flat_features(&self) -> usize {
        let (h2, w2) = self.conv2_out();
        self.conv2_maps * h2 * w2
    }
}

/// One-round local training parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: Real,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 128,
            local_epochs: 1,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} invalid", self.lr)));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::config(
                "batch_size and local_epochs must be positive",
            ));
        }
        Ok(())
    }
}

/// The fixed layer stack. Parameter names are frozen; aggregation relies on
/// their order.
pub fn network() -> Network {
    Network {
        layers: vec![
            Layer::Conv2d {
                kernel: "conv1_kernel".into(),
                bias: "conv1_bias".into(),
            },
            Layer::Relu,
            Layer::Conv2d {
                kernel: "conv2_kernel".into(),
                bias: "conv2_bias".into(),
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense {
                weight: "dense1_weight".into(),
                bias: "dense1_bias".into(),
            },
            Layer::Relu,
            Layer::Dense {
                weight: "dense2_weight".into(),
                bias: "dense2_bias".into(),
            },
        ],
    }
}

/// Initializes parameters: kernels and weights uniform in
/// `+/- sqrt(6 / (fan_in + fan_out))`, biases zero, all drawn from the
/// config seed in insertion order.
pub fn build(cfg: &ModelConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, Role::ModelInit, &[]));
    let (k1h, k1w) = cfg.conv1_kernel;
    let (k2h, k2w) = cfg.conv2_kernel;
    let flat = cfg.flat_features();

    let mut params = ParamSet::new();
    let glorot = |rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape, data)
    };

    params.insert(
        "conv1_kernel",
        glorot(
            &mut rng,
            vec![cfg.conv1_maps, 1, k1h, k1w],
            k1h * k1w,
            cfg.conv1_maps * k1h * k1w,
        )?,
    )?;
    params.insert("conv1_bias", Tensor::zeros(vec![cfg.conv1_maps]))?;
    params.insert(
        "conv2_kernel",
        glorot(
            &mut rng,
            vec![cfg.conv2_maps, cfg.conv1_maps, k2h, k2w],
            cfg.conv1_maps * k2h * k2w,
            cfg.conv2_maps * k2h * k2w,
        )?,
    )?;
    params.insert("conv2_bias", Tensor::zeros(vec![cfg.conv2_maps]))?;
    params.insert(
        "dense1_weight",
        glorot(&mut rng, vec![cfg.dense_units, flat], flat, cfg.dense_units)?,
    )?;
    params.insert("dense1_bias", Tensor::zeros(vec![cfg.dense_units]))?;
    params.insert(
        "dense2_weight",
        glorot(
            &mut rng,
            vec![cfg.classes, cfg.dense_units],
            cfg.dense_units,
            cfg.classes,
        )?,
    )?;
    params.insert("dense2_bias", Tensor::zeros(vec![cfg.classes]))?;
    Ok(params)
}

/// Window length a parameter set was built for, recovered from the conv and
/// dense shapes.
pub fn expected_window(params: &ParamSet) -> Result<usize> {
    let k1 = shape_of(params, "conv1_kernel")?;
    let k2 = shape_of(params, "conv2_kernel")?;
    let d1 = shape_of(params, "dense1_weight")?;
    let (k1h, k1w) = (k1[2], k1[3]);
    let (c2, k2h, k2w) = (k2[0], k2[2], k2[3]);
    let flat = d1[1];
    let h2 = (2 - k1h + 1) - k2h + 1;
    if h2 == 0 || flat % (c2 * h2) != 0 {
        return Err(Error::config(format!(
            "dense1 features {flat} inconsistent with conv shapes"
        )));
    }
    let w2 = flat / (c2 * h2);
    Ok(w2 + k2w - 1 + k1w - 1)
}

fn shape_of<'p>(params: &'p ParamSet, name: &str) -> Result<&'p [usize]> {
    params
        .get(name)
        .map(|t| t.shape())
        .ok_or_else(|| Error::config(format!("parameter {name:?} missing")))
}

/// Number of classes a parameter set predicts.
pub fn class_count(params: &ParamSet) -> Result<usize> {
    Ok(shape_of(params, "dense2_weight")?[0])
}

/// Packs frames into a `[batch, 1, 2, window]` input tensor: row 0 carries
/// the in-phase samples, row 1 the quadrature samples.
pub fn batch_input(frames: &[&IQFrame], window: usize) -> Result<Tensor> {
    let batch = frames.len();
    if batch == 0 {
        return Err(Error::input("empty batch"));
    }
    let mut data = vec![0.0; batch * 2 * window];
    for (b, frame) in frames.iter().enumerate() {
        if frame.len() != window {
            return Err(Error::input(format!(
                "frame has window {}, model expects {window}",
                frame.len()
            )));
        }
        let base = b * 2 * window;
        for t in 0..window {
            data[base + t] = frame.i_at(t);
            data[base + window + t] = frame.q_at(t);
        }
    }
    Tensor::new(vec![batch, 1, 2, window], data)
}

/// Class probabilities and the argmax class (ties resolve to the lowest
/// index) for a single frame.
pub fn predict(params: &ParamSet, frame: &IQFrame) -> Result<(Tensor, usize)> {
    let window = expected_window(params)?;
    let input = batch_input(&[frame], window)?;
    let trace = forward(&network(), params, &input)?;
    let classes = trace.classes();
    let row = trace.probs().data()[..classes].to_vec();
    let class = argmax(&row);
    Ok((Tensor::new(vec![classes], row)?, class))
}

fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: Real,
    /// Per-class accuracy; `None` for classes absent from the dataset.
    pub per_class: Vec<Option<Real>>,
    pub mean_loss: Real,
}

/// Accuracy, per-class accuracy, and mean loss of `params` on a dataset.
/// Batches are scored independently (in parallel under the `parallel`
/// feature) and reduced in a fixed order.
pub fn evaluate(params: &ParamSet, dataset: &LabeledDataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    let window = expected_window(params)?;
    let classes = class_count(params)?;
    if dataset.classes > classes {
        return Err(Error::input(format!(
            "dataset has {} classes, model predicts {classes}",
            dataset.classes
        )));
    }
    let net = network();

    struct ChunkStats {
        correct: Vec<usize>,
        total: Vec<usize>,
        loss_sum: Real,
    }

    let chunks: Vec<(usize, usize)> = (0..dataset.len())
        .step_by(EVAL_BATCH)
        .map(|start| (start, (start + EVAL_BATCH).min(dataset.len())))
        .collect();

    let results: Vec<Result<ChunkStats>> = exec::ordered_map(&chunks, |&(start, end)| {
        let frames: Vec<&IQFrame> = dataset.frames[start..end].iter().collect();
        let labels: Vec<usize> = dataset.labels[start..end]
            .iter()
            .map(|&l| l as usize)
            .collect();
        let input = batch_input(&frames, window)?;
        let trace = forward(&net, params, &input)?;
        let losses = trace.losses(&labels)?;

        let mut stats = ChunkStats {
            correct: vec![0; classes],
            total: vec![0; classes],
            loss_sum: losses.iter().sum(),
        };
        let probs = trace.probs().data();
        for (i, &label) in labels.iter().enumerate() {
            let row = &probs[i * classes..(i + 1) * classes];
            stats.total[label] += 1;
            if argmax(row) == label {
                stats.correct[label] += 1;
            }
        }
        Ok(stats)
    });

    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    let mut loss_sum = 0.0;
    for r in results {
        let s = r?;
        for c in 0..classes {
            correct[c] += s.correct[c];
            total[c] += s.total[c];
        }
        loss_sum += s.loss_sum;
    }

    let per_class = (0..classes)
        .map(|c| {
            if total[c] == 0 {
                None
            } else {
                Some(correct[c] as Real / total[c] as Real)
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct.iter().sum::<usize>() as Real / dataset.len() as Real,
        per_class,
        mean_loss: loss_sum / dataset.len() as Real,
    })
}

/// Runs `local_epochs` passes of shuffled mini-batch SGD with mean-reduced
/// cross-entropy, starting from a copy of `params_in`.
pub fn local_train_round(
    params_in: &ParamSet,
    shard: &LabeledDataset,
    tc: &TrainConfig,
) -> Result<ParamSet> {
    tc.validate()?;
    if shard.is_empty() {
        return Err(Error::input("cannot train on an empty shard"));
    }
    let window = expected_window(params_in)?;
    let net = network();
    let mut params = params_in.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(tc.shuffle_seed, Role::BatchShuffle, &[]));

    for _ in 0..tc.local_epochs {
        order.shuffle(&mut rng);
        for (batch_ix, chunk) in order.chunks(tc.batch_size).enumerate() {
            let frames: Vec<&IQFrame> = chunk.iter().map(|&i| &shard.frames[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| shard.labels[i] as usize).collect();
            let input = batch_input(&frames, window)?;
            let step = (|| -> Result<ParamSet> {
                let trace = forward(&net, &params, &input)?;
                let grad = backward(&net, &params, &trace, &labels, Reduction::Mean)?;
                sgd_step(&params, &grad.param_grads, tc.lr)
            })();
            params = step.map_err(|e| match e {
                Error::Numeric { context, message } => Error::Numeric {
                    context: format!("batch {batch_ix}: {context}"),
                    message,
                },
                other => other,
            })?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetMeta, LabeledDataset, GENERATOR_VERSION};
    use crate::signal::{ChannelSpec, Fading, Scheme};
    use approx::assert_relative_eq;

    fn toy_config() -> ModelConfig {
        ModelConfig::new(32, 2, 5)
    }

    fn toy_dataset(per_class: usize, seed: u64) -> LabeledDataset {
        let spec = ChannelSpec::new(10.0, Fading::None, 0).unwrap();
        generate_dataset(&[Scheme::Bpsk, Scheme::Qam16], per_class, &spec, 32, 8, seed).unwrap()
    }

    #[test]
    fn paper_architecture_shapes() {
        let cfg = ModelConfig::new(128, 10, 0);
        assert_eq!(cfg.conv1_out(), (2, 126));
        assert_eq!(cfg.conv2_out(), (1, 124));
        assert_eq!(cfg.flat_features(), 9920);
        let params = build(&cfg).unwrap();
        assert_eq!(params.get("conv1_kernel").unwrap().shape(), [16, 1, 1, 3]);
        assert_eq!(params.get("conv2_kernel").unwrap().shape(), [80, 16, 2, 3]);
        assert_eq!(params.get("dense1_weight").unwrap().shape(), [256, 9920]);
        assert_eq!(params.get("dense2_weight").unwrap().shape(), [10, 256]);
        assert_eq!(expected_window(&params).unwrap(), 128);
        assert_eq!(class_count(&params).unwrap(), 10);
    }

    #[test]
    fn same_seed_same_initialization() {
        let cfg = toy_config();
        assert_eq!(build(&cfg).unwrap(), build(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 6;
        assert_ne!(build(&cfg).unwrap(), build(&other).unwrap());
    }

    #[test]
    fn window_too_small_rejected() {
        let cfg = ModelConfig::new(7, 4, 0);
        assert!(build(&cfg).is_err());
    }

    #[test]
    fn predict_returns_simplex_point_and_valid_class() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(4, 9);
        for frame in &ds.frames {
            let (probs, class) = predict(&params, frame).unwrap();
            let sum: Real = probs.data().iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
            assert!(class < 2);
        }
    }

    #[test]
    fn predict_rejects_wrong_window() {
        let params = build(&toy_config()).unwrap();
        let ds = generate_dataset(
            &[Scheme::Bpsk],
            1,
            &ChannelSpec::new(10.0, Fading::None, 0).unwrap(),
            64,
            8,
            0,
        )
        .unwrap();
        let err = predict(&params, &ds.frames[0]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn fresh_model_scores_chance_level_on_random_labels() {
        // Balanced random labels are independent of the frames, so any fixed
        // predictor lands near 1/C.
        let cfg = ModelConfig::new(32, 4, 11);
        let params = build(&cfg).unwrap();
        let spec = ChannelSpec::new(10.0, Fading::None, 0).unwrap();
        let mut ds = generate_dataset(
            &[Scheme::Bpsk, Scheme::Qpsk, Scheme::Pam4, Scheme::Qam16],
            250,
            &spec,
            32,
            8,
            17,
        )
        .unwrap();
        // Scramble labels deterministically to decouple them from frames.
        for (i, l) in ds.labels.iter_mut().enumerate() {
            *l = ((i * 2654435761) % 4) as u8;
        }
        let report = evaluate(&params, &ds).unwrap();
        assert!(
            (report.accuracy - 0.25).abs() < 0.05,
            "chance-level accuracy off: {}",
            report.accuracy
        );
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(8, 13);
        let tc = TrainConfig {
            lr: 0.0,
            batch_size: 4,
            local_epochs: 2,
            shuffle_seed: 1,
        };
        let out = local_train_round(&params, &ds, &tc).unwrap();
        assert_eq!(out, params);
    }

    #[test]
    fn single_batch_round_matches_hand_stepped_oracle() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(3, 15); // 6 frames, one batch
        let tc = TrainConfig {
            lr: 0.05,
            batch_size: 16,
            local_epochs: 1,
            shuffle_seed: 3,
        };
        let trained = local_train_round(&params, &ds, &tc).unwrap();

        // Oracle: one explicit gradient step over the whole shard. Order
        // within the batch does not matter for the mean gradient.
        let frames: Vec<&IQFrame> = ds.frames.iter().collect();
        let labels: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();
        let input = batch_input(&frames, 32).unwrap();
        let trace = forward(&network(), &params, &input).unwrap();
        let grad = backward(&network(), &params, &trace, &labels, Reduction::Mean).unwrap();
        let expect = sgd_step(&params, &grad.param_grads, 0.05).unwrap();

        for ((_, a), (_, b)) in trained.iter().zip(expect.iter()).map(|(x, y)| (x, y)) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert_relative_eq!(u, v, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn training_does_not_mutate_input_params() {
        let params = build(&toy_config()).unwrap();
        let snapshot = params.clone();
        let ds = toy_dataset(10, 19);
        let tc = TrainConfig {
            lr: 0.02,
            batch_size: 8,
            local_epochs: 1,
            shuffle_seed: 2,
        };
        let _ = local_train_round(&params, &ds, &tc).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn toy_problem_trains_past_ninety_percent() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(100, 23); // 200 frames, 2 classes
        let tc = TrainConfig {
            lr: 0.02,
            batch_size: 32,
            local_epochs: 1,
            shuffle_seed: 0,
        };
        let mut current = params;
        for round in 0..30 {
            let tc_round = TrainConfig {
                shuffle_seed: round as u64,
                ..tc.clone()
            };
            current = local_train_round(&current, &ds, &tc_round).unwrap();
        }
        let report = evaluate(&current, &ds).unwrap();
        assert!(
            report.accuracy > 0.9,
            "training accuracy only reached {}",
            report.accuracy
        );
    }

    #[test]
    fn small_learning_rate_gives_monotone_loss_in_most_trials() {
        let mut non_increasing_trials = 0;
        for trial_seed in 0..10u64 {
            let cfg = ModelConfig::new(32, 2, 100 + trial_seed);
            let params = build(&cfg).unwrap();
            let ds = toy_dataset(30, 200 + trial_seed);
            let mut current = params;
            let mut losses = Vec::new();
            for round in 0..10 {
                let tc = TrainConfig {
                    lr: 0.001,
                    batch_size: 16,
                    local_epochs: 1,
                    shuffle_seed: trial_seed * 100 + round,
                };
                current = local_train_round(&current, &ds, &tc).unwrap();
                losses.push(evaluate(&current, &ds).unwrap().mean_loss);
            }
            if losses.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                non_increasing_trials += 1;
            }
        }
        assert!(
            non_increasing_trials >= 9,
            "only {non_increasing_trials}/10 trials had non-increasing loss"
        );
    }

    #[test]
    fn evaluate_reports_absent_classes_as_none() {
        let params = build(&ModelConfig::new(32, 4, 3)).unwrap();
        // Dataset claims 4 classes but only contains class 0 frames.
        let src = toy_dataset(5, 29);
        let ds = LabeledDataset::new(
            src.frames.clone(),
            vec![0; src.len()],
            4,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            DatasetMeta {
                snr_db: 10.0,
                seed: 0,
                version: GENERATOR_VERSION,
            },
        )
        .unwrap();
        let report = evaluate(&params, &ds).unwrap();
        assert!(report.per_class[0].is_some());
        assert!(report.per_class[1].is_none());
        assert!(report.per_class[2].is_none());
        assert!(report.per_class[3].is_none());
    }

    #[test]
    fn evaluate_is_deterministic() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(40, 31);
        let a = evaluate(&params, &ds).unwrap();
        let b = evaluate(&params, &ds).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_accuracy_equals_mean_of_per_class() {
        let params = build(&toy_config()).unwrap();
        let ds = toy_dataset(25, 37);
        let report = evaluate(&params, &ds).unwrap();
        let mean: Real = report
            .per_class
            .iter()
            .map(|c| c.unwrap())
            .sum::<Real>()
            / 2.0;
        assert_relative_eq!(report.accuracy, mean, epsilon = 1e-12);
    }
}
