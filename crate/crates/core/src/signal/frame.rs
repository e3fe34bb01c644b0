//! Real-valued IQ frames.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::Real;

/// One received signal as an `len x 2` real matrix stored row-major:
/// column 0 is the in-phase component, column 1 the quadrature component.
/// Frames produced by the generator are normalized to unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame {
    data: Vec<Real>,
}

impl IQFrame {
    /// Wraps interleaved `[i, q]` rows without normalizing.
    pub fn from_interleaved(data: Vec<Real>) -> Result<Self> {
        if data.is_empty() || data.len() % 2 != 0 {
            return Err(Error::input(format!(
                "IQ frame needs interleaved pairs, got {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("IQ frame contains non-finite values"));
        }
        Ok(IQFrame { data })
    }

    /// Observation window length.
    pub fn len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interleaved `[i, q]` rows.
    pub fn samples(&self) -> &[Real] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn i_at(&self, t: usize) -> Real {
        self.data[2 * t]
    }

    pub fn q_at(&self, t: usize) -> Real {
        self.data[2 * t + 1]
    }

    /// Total energy across both columns.
    pub fn energy(&self) -> Real {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Converts a complex sequence into an IQ frame normalized to unit energy.
pub fn to_real_frame(sequence: &[Complex<Real>]) -> Result<IQFrame> {
    if sequence.is_empty() {
        return Err(Error::input("cannot convert an empty sequence"));
    }
    let energy: Real = sequence.iter().map(|s| s.norm_sqr()).sum();
    if energy <= 0.0 {
        return Err(Error::input("cannot normalize an all-zero frame"));
    }
    let scale = energy.sqrt();
    let mut data = Vec::with_capacity(sequence.len() * 2);
    for s in sequence {
        data.push(s.re / scale);
        data.push(s.im / scale);
    }
    IQFrame::from_interleaved(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex;

    #[test]
    fn conversion_normalizes_and_orders_columns() {
        let seq = [Complex::new(1.0, 1.0), Complex::new(1.0, -1.0)];
        let frame = to_real_frame(&seq).unwrap();
        // energy 4 -> scale 2, every entry +/- 0.5
        assert_relative_eq!(frame.i_at(0), 0.5);
        assert_relative_eq!(frame.q_at(0), 0.5);
        assert_relative_eq!(frame.i_at(1), 0.5);
        assert_relative_eq!(frame.q_at(1), -0.5);
        assert_relative_eq!(frame.energy(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn random_frames_have_unit_energy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..32 {
            let seq: Vec<Complex<Real>> = (0..64)
                .map(|_| Complex::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            let frame = to_real_frame(&seq).unwrap();
            assert_relative_eq!(frame.energy(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let seq = [
            Complex::new(3.0, -1.0),
            Complex::new(0.25, 2.0),
            Complex::new(-1.5, 0.5),
        ];
        let once = to_real_frame(&seq).unwrap();
        let twice = to_real_frame(
            &(0..once.len())
                .map(|t| Complex::new(once.i_at(t), once.q_at(t)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        for (a, b) in once.samples().iter().zip(twice.samples()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_zero_frame_is_an_input_error() {
        let seq = [Complex::new(0.0, 0.0); 4];
        assert!(to_real_frame(&seq).is_err());
    }
}
