//! Channel impairments: AWGN at a target SNR, optionally behind a single
//! Rayleigh tap per frame.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::Real;

type C = Complex<Real>;

/// Fading applied before the additive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// Identity channel; the received frame is the clean signal plus noise.
    None,
    /// One circular complex Gaussian tap drawn per frame and applied to
    /// every sample.
    RayleighFlat,
}

/// Channel description for frame generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// Target signal-to-noise ratio in dB. `Real::INFINITY` disables noise.
    pub snr_db: Real,
    pub fading: Fading,
    /// Seed for the generator-level noise stream.
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(snr_db: Real, fading: Fading, seed: u64) -> Result<Self> {
        if snr_db.is_nan() {
            return Err(Error::config("snr_db must not be NaN"));
        }
        Ok(ChannelSpec {
            snr_db,
            fading,
            seed,
        })
    }
}

/// Passes a clean baseband sequence through the channel: applies the fading
/// tap, then adds circular complex Gaussian noise whose per-sample variance
/// sets mean signal power over mean noise power to `10^(snr_db/10)`.
pub fn apply_channel<R: Rng>(clean: &[C], spec: &ChannelSpec, rng: &mut R) -> Result<Vec<C>> {
    if clean.is_empty() {
        return Err(Error::input("cannot apply a channel to an empty frame"));
    }
    let mut signal: Vec<C> = match spec.fading {
        Fading::None => clean.to_vec(),
        Fading::RayleighFlat => {
            let re: Real = rng.sample(StandardNormal);
            let im: Real = rng.sample(StandardNormal);
            let tap = C::new(re, im) / (2.0 as Real).sqrt();
            clean.iter().map(|s| s * tap).collect()
        }
    };
    if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
        return Ok(signal);
    }
    let mean_power: Real =
        signal.iter().map(|s| s.norm_sqr()).sum::<Real>() / signal.len() as Real;
    let snr_linear = (10.0 as Real).powf(spec.snr_db / 10.0);
    // Per-component standard deviation of the circular complex noise.
    let sigma = (mean_power / snr_linear / 2.0).sqrt();
    for s in &mut signal {
        let re: Real = rng.sample(StandardNormal);
        let im: Real = rng.sample(StandardNormal);
        *s += C::new(re * sigma, im * sigma);
    }
    Ok(signal)
}
