//! Baseband synthesis for the eight digital modulation schemes.
//!
//! Linear schemes map Gray-coded symbol indices onto unit-average-power
//! constellations and hold each point for `samples_per_symbol` samples
//! (rectangular pulse). CPFSK and GFSK integrate a frequency pulse into a
//! continuous phase, so their envelope is exactly constant; GFSK smooths the
//! frequency pulse with a Gaussian filter first.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::Real;

type C = Complex<Real>;

/// Modulation schemes the generator understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Bpsk,
    Qpsk,
    Psk8,
    Pam4,
    Qam16,
    Qam64,
    Cpfsk,
    Gfsk,
}

/// CPFSK/GFSK modulation index.
const FSK_MOD_INDEX: Real = 0.5;
/// GFSK Gaussian filter bandwidth-time product.
const GFSK_BT: Real = 0.35;
/// GFSK filter span on each side, in symbols.
const GFSK_SPAN: usize = 2;

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Bpsk,
        Scheme::Qpsk,
        Scheme::Psk8,
        Scheme::Pam4,
        Scheme::Qam16,
        Scheme::Qam64,
        Scheme::Cpfsk,
        Scheme::Gfsk,
    ];

    /// Number of points in the scheme's alphabet.
    pub fn order(self) -> usize {
        match self {
            Scheme::Bpsk | Scheme::Cpfsk | Scheme::Gfsk => 2,
            Scheme::Qpsk | Scheme::Pam4 => 4,
            Scheme::Psk8 => 8,
            Scheme::Qam16 => 16,
            Scheme::Qam64 => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bpsk => "bpsk",
            Scheme::Qpsk => "qpsk",
            Scheme::Psk8 => "8psk",
            Scheme::Pam4 => "pam4",
            Scheme::Qam16 => "qam16",
            Scheme::Qam64 => "qam64",
            Scheme::Cpfsk => "cpfsk",
            Scheme::Gfsk => "gfsk",
        }
    }

    pub fn from_name(name: &str) -> Result<Scheme> {
        let lower = name.to_ascii_lowercase();
        let key = if lower == "psk8" { "8psk" } else { lower.as_str() };
        Scheme::ALL
            .iter()
            .copied()
            .find(|s| s.name() == key)
            .ok_or_else(|| Error::config(format!("unknown modulation scheme {name:?}")))
    }
}

/// Binary-reflected Gray code of `i`.
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

/// Gray-coded amplitude levels `{-(L-1), ..., L-1}` in steps of 2, before
/// power normalization.
fn pam_levels(order: usize) -> Vec<Real> {
    (0..order)
        .map(|i| (2 * gray(i)) as Real - (order - 1) as Real)
        .collect()
}

/// Constellation of a linear scheme, normalized to unit average power.
pub fn constellation(scheme: Scheme) -> Result<Vec<C>> {
    let points: Vec<C> = match scheme {
        Scheme::Bpsk => vec![C::new(1.0, 0.0), C::new(-1.0, 0.0)],
        Scheme::Qpsk => (0..4)
            .map(|i| {
                let phase = std::f64::consts::FRAC_PI_4 as Real
                    + (gray(i) as Real) * std::f64::consts::FRAC_PI_2 as Real;
                C::new(phase.cos(), phase.sin())
            })
            .collect(),
        Scheme::Psk8 => (0..8)
            .map(|i| {
                let phase = (gray(i) as Real) * (std::f64::consts::PI as Real) / 4.0;
                C::new(phase.cos(), phase.sin())
            })
            .collect(),
        Scheme::Pam4 => pam_levels(4).into_iter().map(|a| C::new(a, 0.0)).collect(),
        Scheme::Qam16 | Scheme::Qam64 => {
            let side = if scheme == Scheme::Qam16 { 4 } else { 8 };
            let levels = pam_levels(side);
            // Gray code per axis; symbol index splits into (row, column).
            let mut pts = Vec::with_capacity(side * side);
            for i in 0..side {
                for q in 0..side {
                    pts.push(C::new(levels[i], levels[q]));
                }
            }
            pts
        }
        Scheme::Cpfsk | Scheme::Gfsk => {
            return Err(Error::config(format!(
                "{} is not a linear constellation scheme",
                scheme.name()
            )))
        }
    };
    let mean_power: Real =
        points.iter().map(|p| p.norm_sqr()).sum::<Real>() / points.len() as Real;
    let scale = mean_power.sqrt();
    Ok(points.into_iter().map(|p| p / scale).collect())
}

/// Modulates a symbol stream into a complex baseband sequence of
/// `symbols.len() * samples_per_symbol` samples.
pub fn modulate(symbols: &[usize], scheme: Scheme, samples_per_symbol: usize) -> Result<Vec<C>> {
    if samples_per_symbol == 0 {
        return Err(Error::config("samples_per_symbol must be positive"));
    }
    let order = scheme.order();
    if let Some(&bad) = symbols.iter().find(|&&s| s >= order) {
        return Err(Error::config(format!(
            "symbol {bad} out of range for {} (order {order})",
            scheme.name()
        )));
    }
    match scheme {
        Scheme::Cpfsk => Ok(fsk_modulate(symbols, samples_per_symbol, None)),
        Scheme::Gfsk => Ok(fsk_modulate(
            symbols,
            samples_per_symbol,
            Some(gaussian_taps(samples_per_symbol)),
        )),
        _ => {
            let points = constellation(scheme)?;
            let mut out = Vec::with_capacity(symbols.len() * samples_per_symbol);
            for &s in symbols {
                out.extend(std::iter::repeat(points[s]).take(samples_per_symbol));
            }
            Ok(out)
        }
    }
}

/// Gaussian frequency-pulse taps with unit sum, truncated to `GFSK_SPAN`
/// symbols on each side.
fn gaussian_taps(sps: usize) -> Vec<Real> {
    let half = (GFSK_SPAN * sps) as isize;
    let ln2: Real = (2.0 as Real).ln();
    let sigma = (sps as Real) * ln2.sqrt() / (2.0 * std::f64::consts::PI as Real * GFSK_BT);
    let mut taps: Vec<Real> = (-half..=half)
        .map(|k| (-0.5 * (k as Real / sigma).powi(2)).exp())
        .collect();
    let sum: Real = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Continuous-phase binary FSK; `taps` smooths the NRZ frequency pulse.
fn fsk_modulate(symbols: &[usize], sps: usize, taps: Option<Vec<Real>>) -> Vec<C> {
    let n = symbols.len() * sps;
    // NRZ frequency waveform at sample rate: +1/-1 held per symbol.
    let mut freq: Vec<Real> = Vec::with_capacity(n);
    for &s in symbols {
        let level = if s == 0 { 1.0 } else { -1.0 };
        freq.extend(std::iter::repeat(level).take(sps));
    }
    if let Some(taps) = taps {
        // Zero-padded convolution, centered.
        let half = taps.len() / 2;
        let mut smooth = vec![0.0; n];
        for (i, out) in smooth.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &tap) in taps.iter().enumerate() {
                let j = i as isize + k as isize - half as isize;
                if j >= 0 && (j as usize) < n {
                    acc += tap * freq[j as usize];
                }
            }
            *out = acc;
        }
        freq = smooth;
    }
    // Phase increment per sample: pi * h * f / sps.
    let step = std::f64::consts::PI as Real * FSK_MOD_INDEX / sps as Real;
    let mut phase: Real = 0.0;
    let mut out = Vec::with_capacity(n);
    for f in freq {
        out.push(C::new(phase.cos(), phase.sin()));
        phase += step * f;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bpsk_maps_to_unit_points() {
        let out = modulate(&[0, 1], Scheme::Bpsk, 1).unwrap();
        assert_eq!(out[0], C::new(1.0, 0.0));
        assert_eq!(out[1], C::new(-1.0, 0.0));
    }

    #[test]
    fn qam16_has_sixteen_distinct_unit_power_points() {
        let points = constellation(Scheme::Qam16).unwrap();
        assert_eq!(points.len(), 16);
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                assert!((a - b).norm() > 1e-9, "duplicate constellation point");
            }
        }
        let mean_power: Real = points.iter().map(|p| p.norm_sqr()).sum::<Real>() / 16.0;
        assert_relative_eq!(mean_power, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn all_linear_constellations_are_unit_power() {
        for scheme in [
            Scheme::Bpsk,
            Scheme::Qpsk,
            Scheme::Psk8,
            Scheme::Pam4,
            Scheme::Qam16,
            Scheme::Qam64,
        ] {
            let points = constellation(scheme).unwrap();
            assert_eq!(points.len(), scheme.order());
            let mean_power: Real =
                points.iter().map(|p| p.norm_sqr()).sum::<Real>() / points.len() as Real;
            assert_relative_eq!(mean_power, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn cpfsk_envelope_is_constant() {
        let symbols = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0];
        let out = modulate(&symbols, Scheme::Cpfsk, 8).unwrap();
        assert_eq!(out.len(), 128);
        for s in &out {
            assert_relative_eq!(s.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gfsk_envelope_is_constant_and_phase_smoothed() {
        let symbols = [0, 1, 0, 1, 1, 0, 1, 0];
        let out = modulate(&symbols, Scheme::Gfsk, 8).unwrap();
        for s in &out {
            assert_relative_eq!(s.norm(), 1.0, epsilon = 1e-12);
        }
        // The smoothed instantaneous frequency must differ from hard CPFSK
        // switching around symbol boundaries.
        let hard = modulate(&symbols, Scheme::Cpfsk, 8).unwrap();
        let differs = out
            .iter()
            .zip(&hard)
            .any(|(a, b)| (a - b).norm() > 1e-6);
        assert!(differs);
    }

    #[test]
    fn symbol_out_of_range_rejected() {
        assert!(modulate(&[2], Scheme::Bpsk, 4).is_err());
        assert!(modulate(&[16], Scheme::Qam16, 4).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for scheme in Scheme::ALL {
            assert_eq!(Scheme::from_name(scheme.name()).unwrap(), scheme);
        }
        assert!(Scheme::from_name("am-dsb").is_err());
    }
}
