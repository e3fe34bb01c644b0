//! Local-data corruptions: L2-budgeted gradient evasion, power-matched AWGN,
//! and label flipping, under perturbation-to-noise-ratio budget arithmetic.
//!
//! The gradient attack perturbs each frame along the loss gradient with
//! respect to the input, normalized in L2 and scaled to the power budget:
//! `delta = sqrt(P) * g / ||g||`. The AWGN baseline draws an isotropic
//! Gaussian direction and rescales it to exactly the same norm, so potency
//! comparisons at equal PNR are per-frame fair. Perturbed frames are *not*
//! re-normalized to unit energy; renormalizing would silently shrink the
//! injected power.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{batch_input, expected_window, network};
use crate::nn::{backward, forward, ParamSet, Reduction};
use crate::seed::{self, Role};
use crate::signal::IQFrame;
use crate::Real;

/// Gradient norms below this are treated as degenerate: the frame is left
/// unperturbed and the event is counted.
pub const DEGENERATE_GRAD_NORM: Real = 1e-12;

/// Frames per crafting batch. Fixed, so poisoning is deterministic and
/// independent of the training batch size.
const CRAFT_BATCH: usize = 256;

/// Attack families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    Fgsm,
    Awgn,
    Flip,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Awgn => "awgn",
            AttackKind::Flip => "flip",
        }
    }
}

/// What a compromised device does to its shard each round.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Perturbation-to-noise ratio in dB. Unused for label flipping.
    pub pnr_db: Real,
    /// Weight scaling the adversary applies before transmission.
    pub alpha: Real,
    /// Label permutation for flipping; must be a derangement.
    pub flip_map: Option<Vec<u8>>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, pnr_db: Real, alpha: Real) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(AttackSpec {
            kind,
            pnr_db,
            alpha,
            flip_map: None,
        })
    }

    pub fn with_flip_map(mut self, map: Vec<u8>) -> Result<Self> {
        check_derangement(&map)?;
        self.flip_map = Some(map);
        Ok(self)
    }
}

/// Squared-L2 perturbation budget derived from PNR, SNR, and signal energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBudget {
    /// Squared-L2 budget: every crafted perturbation has
    /// `||delta||_2 = sqrt(P)`.
    pub p: Real,
    pub pnr_db: Real,
    pub psr_db: Real,
    pub snr_db: Real,
}

/// Budget arithmetic: `PSR [dB] = PNR [dB] - SNR [dB]`,
/// `P = signal_energy * 10^(PSR/10)`.
pub fn budget_from_pnr(pnr_db: Real, snr_db: Real, signal_energy: Real) -> Result<PowerBudget> {
    if !(signal_energy > 0.0) {
        return Err(Error::config(format!(
            "signal energy must be positive, got {signal_energy}"
        )));
    }
    let psr_db = pnr_db - snr_db;
    Ok(PowerBudget {
        p: signal_energy * (10.0 as Real).powf(psr_db / 10.0),
        pnr_db,
        psr_db,
        snr_db,
    })
}

fn check_derangement(map: &[u8]) -> Result<()> {
    let c = map.len();
    let mut seen = vec![false; c];
    for (from, &to) in map.iter().enumerate() {
        if to as usize >= c {
            return Err(Error::config(format!(
                "flip map entry {to} out of range for {c} classes"
            )));
        }
        if to as usize == from {
            return Err(Error::config(format!(
                "flip map fixes class {from}; a derangement is required"
            )));
        }
        if seen[to as usize] {
            return Err(Error::config(format!(
                "flip map repeats class {to}; not a permutation"
            )));
        }
        seen[to as usize] = true;
    }
    Ok(())
}

/// Default derangement: swap classes (2i, 2i+1); with an odd class count the
/// last three classes rotate.
pub fn default_flip_map(classes: usize) -> Result<Vec<u8>> {
    if classes < 2 {
        return Err(Error::config("label flipping needs at least 2 classes"));
    }
    let mut map: Vec<u8> = (0..classes as u8).collect();
    let pairs = if classes % 2 == 0 {
        classes / 2
    } else {
        classes / 2 - 1
    };
    for i in 0..pairs {
        map[2 * i] = (2 * i + 1) as u8;
        map[2 * i + 1] = (2 * i) as u8;
    }
    if classes % 2 == 1 {
        let a = classes - 3;
        map[a] = (a + 1) as u8;
        map[a + 1] = (a + 2) as u8;
        map[a + 2] = a as u8;
    }
    check_derangement(&map)?;
    Ok(map)
}

fn scaled_delta_applied(
    frame: &IQFrame,
    direction: &[Real],
    norm: Real,
    p: Real,
) -> (IQFrame, Real) {
    let scale = p.sqrt() / norm;
    let mut data = frame.samples().to_vec();
    let mut delta_sq = 0.0;
    for (v, g) in data.iter_mut().zip(direction) {
        let d = g * scale;
        delta_sq += d * d;
        *v += d;
    }
    (
        IQFrame::from_interleaved(data).expect("perturbed frame stays finite"),
        delta_sq.sqrt(),
    )
}

/// Crafts the gradient-evasion perturbation for one frame at the given
/// parameters. Returns the perturbed frame and the realized perturbation
/// norm; a degenerate (near-zero) gradient leaves the frame untouched and
/// reports norm zero.
pub fn craft_fgsm(
    frame: &IQFrame,
    label: usize,
    params: &ParamSet,
    budget: &PowerBudget,
) -> Result<(IQFrame, Real)> {
    let window = expected_window(params)?;
    let input = batch_input(&[frame], window)?;
    let net = network();
    let trace = forward(&net, params, &input)?;
    let grad = backward(&net, params, &trace, &[label], Reduction::Sum)?;

    let direction = input_grad_rows(grad.input_grad.data(), window, 0);
    let norm = l2(&direction);
    if norm < DEGENERATE_GRAD_NORM || budget.p == 0.0 {
        return Ok((frame.clone(), 0.0));
    }
    Ok(scaled_delta_applied(frame, &direction, norm, budget.p))
}

/// Power-matched Gaussian baseline: an isotropic direction rescaled so the
/// perturbation norm equals `sqrt(P)` exactly.
pub fn craft_awgn<R: Rng>(
    frame: &IQFrame,
    budget: &PowerBudget,
    rng: &mut R,
) -> Result<(IQFrame, Real)> {
    if budget.p == 0.0 {
        return Ok((frame.clone(), 0.0));
    }
    let n = frame.samples().len();
    let mut direction = vec![0.0; n];
    let mut norm = 0.0;
    while norm < DEGENERATE_GRAD_NORM {
        for d in &mut direction {
            *d = rng.sample(StandardNormal);
        }
        norm = l2(&direction);
    }
    Ok(scaled_delta_applied(frame, &direction, norm, budget.p))
}

/// Remaps every label through a derangement; frames are untouched.
pub fn flip_labels(shard: &LabeledDataset, flip_map: &[u8]) -> Result<LabeledDataset> {
    if flip_map.len() != shard.classes {
        return Err(Error::config(format!(
            "flip map covers {} classes, shard has {}",
            flip_map.len(),
            shard.classes
        )));
    }
    check_derangement(flip_map)?;
    let labels = shard.labels.iter().map(|&l| flip_map[l as usize]).collect();
    LabeledDataset::new(
        shard.frames.clone(),
        labels,
        shard.classes,
        shard.scheme_names.clone(),
        shard.meta.clone(),
    )
}

/// Crafting statistics for one poisoned shard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonStats {
    /// Mean perturbation norm over non-degenerate frames (zero if none).
    pub mean_delta_norm: Real,
    /// Frames left unperturbed because the input gradient vanished.
    pub degenerate_count: usize,
    pub frames: usize,
}

/// Applies the attack to a whole shard against the current round's
/// parameters. Gradient and noise attacks perturb every frame (crafted in
/// fixed-size chunks, in parallel under the `parallel` feature); flipping
/// remaps every label. `seed` keys the per-frame noise substreams.
pub fn poison_shard(
    shard: &LabeledDataset,
    spec: &AttackSpec,
    params: &ParamSet,
    snr_db: Real,
    seed: u64,
) -> Result<(LabeledDataset, PoisonStats)> {
    match spec.kind {
        AttackKind::None => Err(Error::config("poison_shard requires an active attack kind")),
        AttackKind::Flip => {
            let default_map;
            let map = match &spec.flip_map {
                Some(m) => m.as_slice(),
                None => {
                    default_map = default_flip_map(shard.classes)?;
                    &default_map
                }
            };
            let poisoned = flip_labels(shard, map)?;
            Ok((
                poisoned,
                PoisonStats {
                    mean_delta_norm: 0.0,
                    degenerate_count: 0,
                    frames: shard.len(),
                },
            ))
        }
        AttackKind::Fgsm => poison_frames(shard, params, |_, frames, labels| {
            craft_fgsm_batch(frames, labels, params, spec.pnr_db, snr_db)
        }),
        AttackKind::Awgn => poison_frames(shard, params, |chunk_start, frames, _labels| {
            frames
                .iter()
                .enumerate()
                .map(|(i, frame)| {
                    let budget = budget_from_pnr(spec.pnr_db, snr_db, frame.energy())?;
                    let frame_seed =
                        seed::derive(seed, Role::AwgnCraft, &[(chunk_start + i) as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
                    craft_awgn(frame, &budget, &mut rng)
                })
                .collect()
        }),
    }
}

/// Chunks the shard, crafts per-frame perturbations, and folds the stats in
/// frame order.
fn poison_frames<F>(
    shard: &LabeledDataset,
    params: &ParamSet,
    craft: F,
) -> Result<(LabeledDataset, PoisonStats)>
where
    F: Fn(usize, &[IQFrame], &[usize]) -> Result<Vec<(IQFrame, Real)>> + Sync + Send,
{
    if shard.is_empty() {
        return Err(Error::input("cannot poison an empty shard"));
    }
    let _ = expected_window(params)?;
    let chunks: Vec<(usize, usize)> = (0..shard.len())
        .step_by(CRAFT_BATCH)
        .map(|start| (start, (start + CRAFT_BATCH).min(shard.len())))
        .collect();

    let results: Vec<Result<Vec<(IQFrame, Real)>>> = exec::ordered_map(&chunks, |&(start, end)| {
        let labels: Vec<usize> = shard.labels[start..end]
            .iter()
            .map(|&l| l as usize)
            .collect();
        craft(start, &shard.frames[start..end], &labels)
    });

    let mut frames = Vec::with_capacity(shard.len());
    let mut norm_sum = 0.0;
    let mut crafted = 0usize;
    let mut degenerate = 0usize;
    for chunk in results {
        for (frame, norm) in chunk? {
            if norm == 0.0 {
                degenerate += 1;
            } else {
                norm_sum += norm;
                crafted += 1;
            }
            frames.push(frame);
        }
    }
    let stats = PoisonStats {
        mean_delta_norm: if crafted > 0 {
            norm_sum / crafted as Real
        } else {
            0.0
        },
        degenerate_count: degenerate,
        frames: shard.len(),
    };
    let poisoned = LabeledDataset::new(
        frames,
        shard.labels.clone(),
        shard.classes,
        shard.scheme_names.clone(),
        shard.meta.clone(),
    )?;
    Ok((poisoned, stats))
}

/// Batched gradient crafting: one forward/backward per chunk with sum
/// reduction, so per-sample input gradients come out unscaled.
fn craft_fgsm_batch(
    frames: &[IQFrame],
    labels: &[usize],
    params: &ParamSet,
    pnr_db: Real,
    snr_db: Real,
) -> Result<Vec<(IQFrame, Real)>> {
    let window = expected_window(params)?;
    let refs: Vec<&IQFrame> = frames.iter().collect();
    let input = batch_input(&refs, window)?;
    let net = network();
    let trace = forward(&net, params, &input)?;
    let grad = backward(&net, params, &trace, labels, Reduction::Sum)?;

    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let direction = input_grad_rows(grad.input_grad.data(), window, i);
            let norm = l2(&direction);
            if norm < DEGENERATE_GRAD_NORM {
                return Ok((frame.clone(), 0.0));
            }
            let budget = budget_from_pnr(pnr_db, snr_db, frame.energy())?;
            if budget.p == 0.0 {
                return Ok((frame.clone(), 0.0));
            }
            Ok(scaled_delta_applied(frame, &direction, norm, budget.p))
        })
        .collect()
}

/// Extracts sample `i`'s input gradient from a `[batch, 1, 2, window]`
/// gradient tensor, interleaved back into frame layout `[i, q]` rows.
fn input_grad_rows(grad: &[Real], window: usize, i: usize) -> Vec<Real> {
    let base = i * 2 * window;
    let mut out = Vec::with_capacity(2 * window);
    for t in 0..window {
        out.push(grad[base + t]);
        out.push(grad[base + window + t]);
    }
    out
}

fn l2(v: &[Real]) -> Real {
    v.iter().map(|x| x * x).sum::<Real>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;
    use crate::model::{build, ModelConfig};
    use crate::signal::{ChannelSpec, Fading, Scheme};
    use approx::assert_relative_eq;

    fn setup(classes: usize, per_class: usize) -> (ParamSet, LabeledDataset) {
        let schemes: Vec<Scheme> = [Scheme::Bpsk, Scheme::Qpsk, Scheme::Pam4, Scheme::Qam16]
            [..classes]
            .to_vec();
        let spec = ChannelSpec::new(10.0, Fading::None, 0).unwrap();
        let ds = generate_dataset(&schemes, per_class, &spec, 32, 8, 51).unwrap();
        let params = build(&ModelConfig::new(32, classes, 7)).unwrap();
        (params, ds)
    }

    #[test]
    fn budget_arithmetic_matches_closed_form() {
        // PNR 8.1 dB at SNR 10 dB gives PSR -1.9 dB.
        let b = budget_from_pnr(8.1, 10.0, 1.0).unwrap();
        assert_relative_eq!(b.psr_db, -1.9, max_relative = 1e-12);
        // Direct evaluation of the closed form.
        assert_relative_eq!(b.p, (10.0 as Real).powf(-0.19), max_relative = 1e-12);
        assert!((b.p - 0.6457).abs() < 1e-4);

        // PNR equal to SNR leaves the budget at the signal energy.
        let eq = budget_from_pnr(10.0, 10.0, 0.37).unwrap();
        assert_relative_eq!(eq.p, 0.37, max_relative = 1e-12);
    }

    #[test]
    fn budget_reconstruction_is_exact() {
        for (pnr, snr) in [(8.1, 10.0), (6.7, 10.0), (-3.0, 5.0), (0.0, 0.0)] {
            let b = budget_from_pnr(pnr, snr, 1.0).unwrap();
            assert!(((b.psr_db + b.snr_db) - b.pnr_db).abs() < 1e-12);
            assert_eq!(b.pnr_db, pnr);
        }
    }

    #[test]
    fn fgsm_norm_equals_budget() {
        let (params, ds) = setup(2, 10);
        for frame in &ds.frames {
            let budget = budget_from_pnr(8.1, 10.0, frame.energy()).unwrap();
            let (perturbed, norm) = craft_fgsm(frame, 0, &params, &budget).unwrap();
            assert_relative_eq!(norm, budget.p.sqrt(), max_relative = 1e-6);
            // Realized delta in the frame matches the reported norm.
            let delta: Real = perturbed
                .samples()
                .iter()
                .zip(frame.samples())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<Real>()
                .sqrt();
            assert_relative_eq!(delta, norm, max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_budget_leaves_frame_unchanged() {
        let (params, ds) = setup(2, 1);
        let budget = PowerBudget {
            p: 0.0,
            pnr_db: Real::NEG_INFINITY,
            psr_db: Real::NEG_INFINITY,
            snr_db: 10.0,
        };
        let (perturbed, norm) = craft_fgsm(&ds.frames[0], 0, &params, &budget).unwrap();
        assert_eq!(perturbed, ds.frames[0]);
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn fgsm_ascends_the_loss_for_small_budgets() {
        // First-order check: the gradient direction locally increases the
        // loss at the crafting weights.
        let (params, ds) = setup(4, 125); // 500 frames
        let net = network();
        let mut ascents = 0;
        for (frame, &label) in ds.frames.iter().zip(&ds.labels) {
            let budget = budget_from_pnr(-20.0, 10.0, frame.energy()).unwrap();
            let (perturbed, _) = craft_fgsm(frame, label as usize, &params, &budget).unwrap();
            let before = loss_of(&net, &params, frame, label as usize);
            let after = loss_of(&net, &params, &perturbed, label as usize);
            if after >= before {
                ascents += 1;
            }
        }
        assert!(ascents >= 400, "loss increased on only {ascents}/500 frames");
    }

    fn loss_of(
        net: &crate::nn::Network,
        params: &ParamSet,
        frame: &IQFrame,
        label: usize,
    ) -> Real {
        let input = batch_input(&[frame], frame.len()).unwrap();
        let trace = forward(net, params, &input).unwrap();
        trace.loss(&[label], Reduction::Mean).unwrap()
    }

    #[test]
    fn awgn_norm_is_exact_and_seeded() {
        let (_, ds) = setup(2, 4);
        let budget = budget_from_pnr(8.1, 10.0, 1.0).unwrap();
        let frame = &ds.frames[0];
        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        let (a, norm_a) = craft_awgn(frame, &budget, &mut rng_a).unwrap();
        let (b, _) = craft_awgn(frame, &budget, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(norm_a, budget.p.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn awgn_directions_cover_the_sphere_symmetrically() {
        // Mean of many unit directions concentrates near zero.
        let (_, ds) = setup(2, 1);
        let frame = &ds.frames[0];
        let budget = budget_from_pnr(0.0, 0.0, 1.0).unwrap(); // sqrt(P) = 1
        let n = frame.samples().len();
        let draws = 10_000;
        let mut mean = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..draws {
            let (p, _) = craft_awgn(frame, &budget, &mut rng).unwrap();
            for (m, (a, b)) in mean.iter_mut().zip(p.samples().iter().zip(frame.samples())) {
                *m += a - b;
            }
        }
        for m in &mut mean {
            *m /= draws as Real;
        }
        // E||mean||^2 = 1/draws for unit vectors; allow 9x.
        let norm_sq: Real = mean.iter().map(|m| m * m).sum();
        assert!(
            norm_sq < 9.0 / draws as Real,
            "mean direction norm^2 {norm_sq} too large"
        );
    }

    #[test]
    fn flip_map_validation_and_involution() {
        let map = default_flip_map(4).unwrap();
        assert_eq!(map, vec![1, 0, 3, 2]);
        let odd = default_flip_map(5).unwrap();
        assert_eq!(odd, vec![1, 0, 3, 4, 2]);
        assert!(default_flip_map(1).is_err());

        let (_, ds) = setup(4, 3);
        let flipped = flip_labels(&ds, &map).unwrap();
        assert_eq!(flipped.frames, ds.frames);
        for (a, b) in flipped.labels.iter().zip(&ds.labels) {
            assert_eq!(*a, map[*b as usize]);
            assert_ne!(a, b);
        }
        let back = flip_labels(&flipped, &map).unwrap();
        assert_eq!(back.labels, ds.labels);

        // Fixed point rejected.
        assert!(flip_labels(&ds, &[0, 2, 3, 1]).is_err());
    }

    #[test]
    fn poison_rejects_inactive_kind() {
        let (params, ds) = setup(2, 2);
        let spec = AttackSpec::new(AttackKind::None, 8.1, 1.0).unwrap();
        assert!(poison_shard(&ds, &spec, &params, 10.0, 0).is_err());
    }

    #[test]
    fn poison_fgsm_preserves_labels_and_hits_budget() {
        let (params, ds) = setup(2, 20);
        let spec = AttackSpec::new(AttackKind::Fgsm, 8.1, 1.0).unwrap();
        let (poisoned, stats) = poison_shard(&ds, &spec, &params, 10.0, 3).unwrap();
        assert_eq!(poisoned.len(), ds.len());
        assert_eq!(poisoned.labels, ds.labels);
        assert_eq!(stats.degenerate_count, 0);
        let expect = (10.0 as Real).powf(-0.19).sqrt();
        assert_relative_eq!(stats.mean_delta_norm, expect, max_relative = 1e-6);
    }

    #[test]
    fn poison_is_deterministic_and_tracks_params() {
        let (params, ds) = setup(2, 8);
        let spec = AttackSpec::new(AttackKind::Fgsm, 8.1, 1.0).unwrap();
        let (a, _) = poison_shard(&ds, &spec, &params, 10.0, 11).unwrap();
        let (b, _) = poison_shard(&ds, &spec, &params, 10.0, 11).unwrap();
        assert_eq!(a, b);

        // Different crafting weights move the perturbations.
        let other = build(&ModelConfig::new(32, 2, 99)).unwrap();
        let (c, _) = poison_shard(&ds, &spec, &other, 10.0, 11).unwrap();
        assert_ne!(a, c);

        let spec_awgn = AttackSpec::new(AttackKind::Awgn, 8.1, 1.0).unwrap();
        let (d, _) = poison_shard(&ds, &spec_awgn, &params, 10.0, 11).unwrap();
        let (e, _) = poison_shard(&ds, &spec_awgn, &params, 10.0, 11).unwrap();
        assert_eq!(d, e);
        let (f, _) = poison_shard(&ds, &spec_awgn, &params, 10.0, 12).unwrap();
        assert_ne!(d, f);
    }

    #[test]
    fn batched_and_single_frame_crafting_agree() {
        let (params, ds) = setup(2, 20);
        let spec = AttackSpec::new(AttackKind::Fgsm, 8.1, 1.0).unwrap();
        let (poisoned, _) = poison_shard(&ds, &spec, &params, 10.0, 0).unwrap();
        for (i, frame) in ds.frames.iter().enumerate() {
            let budget = budget_from_pnr(8.1, 10.0, frame.energy()).unwrap();
            let (single, _) = craft_fgsm(frame, ds.labels[i] as usize, &params, &budget).unwrap();
            for (a, b) in poisoned.frames[i].samples().iter().zip(single.samples()) {
                assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }
}
