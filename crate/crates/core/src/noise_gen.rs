//! Stationary classical noise synthesised from a single-sideband PSD.
//!
//! A realization is produced by attaching a uniformly random phase to the
//! square root of every PSD sample, completing the spectrum with its
//! Hermitian mirror and taking the real inverse FFT. The amplitude of bin `j`
//! is `(M/√T)·√S_j`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg2::{Axis, C64};
use crate::rng::{self, Purpose, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("negative frequency {0}")]
    NegativeFrequency(f64),
    #[error("grid size {0} is not an even power of two")]
    BadGridSize(usize),
    #[error("PSD has {got} samples, expected M/2 = {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("PSD sample {index} is negative or not finite ({value})")]
    InvalidValue { index: usize, value: f64 },
    #[error("total time must be positive, got {0}")]
    BadTime(f64),
}

/// Dephasing PSD: `1/(f+1) + 0.8·exp(−(f−20)²/10)` up to 50, flat 0.25 plus the
/// same Gaussian bump above. `f = 0` evaluates to the right limit.
pub fn psd_z(f: f64) -> Result<f64, NoiseError> {
    if f < 0.0 || f.is_nan() {
        return Err(NoiseError::NegativeFrequency(f));
    }
    let bump = 0.8 * (-(f - 20.0).powi(2) / 10.0).exp();
    Ok(if f <= 50.0 { 1.0 / (f + 1.0) + bump } else { 0.25 + bump })
}

/// Transverse PSD: `(f+1)^{-1.5} + 0.5·exp(−(f−15)²/10)` up to 20, `5/48` plus
/// the bump above.
pub fn psd_x(f: f64) -> Result<f64, NoiseError> {
    if f < 0.0 || f.is_nan() {
        return Err(NoiseError::NegativeFrequency(f));
    }
    let bump = 0.5 * (-(f - 15.0).powi(2) / 10.0).exp();
    Ok(if f <= 20.0 {
        (f + 1.0).powf(-1.5) + bump
    } else {
        5.0 / 48.0 + bump
    })
}

/// Named PSD families used by datasets and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsdShape {
    /// [`psd_z`]
    DephasingZ,
    /// [`psd_x`]
    TransverseX,
    Flat { level: f64 },
    /// `amplitude·exp(−(f−center)²/(2·width²))`
    Tone { amplitude: f64, center: f64, width: f64 },
}

impl PsdShape {
    pub fn eval(&self, f: f64) -> Result<f64, NoiseError> {
        match *self {
            PsdShape::DephasingZ => psd_z(f),
            PsdShape::TransverseX => psd_x(f),
            PsdShape::Flat { level } => {
                if f < 0.0 {
                    Err(NoiseError::NegativeFrequency(f))
                } else {
                    Ok(level)
                }
            }
            PsdShape::Tone {
                amplitude,
                center,
                width,
            } => {
                if f < 0.0 {
                    Err(NoiseError::NegativeFrequency(f))
                } else {
                    Ok(amplitude * (-(f - center).powi(2) / (2.0 * width * width)).exp())
                }
            }
        }
    }
}

/// Single-sideband PSD sampled at `f_j = j/T`, `j = 0..M/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSpec {
    pub axis: Axis,
    #[serde(rename = "T")]
    pub total_time: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub values: Vec<f64>,
}

pub fn check_grid(m: usize) -> Result<(), NoiseError> {
    if m < 2 || !m.is_power_of_two() {
        return Err(NoiseError::BadGridSize(m));
    }
    Ok(())
}

impl PsdSpec {
    pub fn new(axis: Axis, total_time: f64, m: usize, values: Vec<f64>) -> Result<Self, NoiseError> {
        let spec = PsdSpec {
            axis,
            total_time,
            m,
            values,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_shape(axis: Axis, shape: &PsdShape, total_time: f64, m: usize) -> Result<Self, NoiseError> {
        check_grid(m)?;
        let values = (0..m / 2)
            .map(|j| shape.eval(j as f64 / total_time))
            .collect::<Result<Vec<_>, _>>()?;
        PsdSpec::new(axis, total_time, m, values)
    }

    pub fn zero(axis: Axis, total_time: f64, m: usize) -> Result<Self, NoiseError> {
        PsdSpec::new(axis, total_time, m, vec![0.0; m / 2])
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        check_grid(self.m)?;
        if !(self.total_time > 0.0) {
            return Err(NoiseError::BadTime(self.total_time));
        }
        if self.values.len() != self.m / 2 {
            return Err(NoiseError::LengthMismatch {
                got: self.values.len(),
                expected: self.m / 2,
            });
        }
        if let Some((index, &value)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(NoiseError::InvalidValue { index, value });
        }
        Ok(())
    }

    pub fn frequency(&self, j: usize) -> f64 {
        j as f64 / self.total_time
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub axis: Axis,
    pub index: u64,
    pub samples: Vec<f64>,
    /// Largest `|Im|` of the inverse transform before the real part was taken.
    pub max_imag_residue: f64,
}

/// Hermitian-symmetric spectrum for one realization.
///
/// Bins `1..N` carry `(M/√T)·√S_j·e^{2πiφ_j}` and their mirrored conjugates.
/// The DC bin keeps only the real part of its random-phase amplitude and the
/// Nyquist bin, which the `N`-point PSD grid does not cover, is zero.
pub fn random_phase_spectrum<R: Rng>(spec: &PsdSpec, rng: &mut R) -> Vec<C64> {
    let m = spec.m;
    let n = m / 2;
    let amp = m as f64 / spec.total_time.sqrt();
    let mut x = vec![C64::new(0.0, 0.0); m];
    for j in 0..n {
        let phi: f64 = rng.gen();
        let p = C64::from_polar(amp * spec.values[j].sqrt(), 2.0 * PI * phi);
        if j == 0 {
            x[0] = C64::new(p.re, 0.0);
        } else {
            x[j] = p;
            x[m - j] = p.conj();
        }
    }
    x
}

pub fn generate_noise_with<R: Rng>(spec: &PsdSpec, index: u64, rng: &mut R) -> Result<NoiseRealization, NoiseError> {
    spec.validate()?;
    let mut x = random_phase_spectrum(spec, rng);
    fft::inverse(&mut x);
    let max_imag_residue = x.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    Ok(NoiseRealization {
        axis: spec.axis,
        index,
        samples: x.into_iter().map(|z| z.re).collect(),
        max_imag_residue,
    })
}

/// Realization drawn from the stream identified by `stream_id`.
pub fn generate_noise(spec: &PsdSpec, stream_id: u64, index: u64) -> Result<NoiseRealization, NoiseError> {
    let mut rng = noise_stream(stream_id);
    generate_noise_with(spec, index, &mut rng)
}

pub fn noise_stream(stream_id: u64) -> StreamRng {
    rng::stream(Purpose::Noise, &[stream_id])
}

/// Iterative radix-2 FFT.
pub mod fft {
    use super::C64;
    use std::f64::consts::PI;

    fn bit_reverse(x: &mut [C64]) {
        let n = x.len();
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                x.swap(i, j);
            }
        }
    }

    fn transform(x: &mut [C64], sign: f64) {
        let n = x.len();
        assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length");
        bit_reverse(x);
        let mut len = 2;
        while len <= n {
            let ang = sign * 2.0 * PI / len as f64;
            let half = len / 2;
            // Twiddles computed directly rather than by recurrence to keep the error flat.
            let tw: Vec<C64> = (0..half).map(|k| C64::from_polar(1.0, ang * k as f64)).collect();
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let u = x[start + k];
                    let v = x[start + k + half] * tw[k];
                    x[start + k] = u + v;
                    x[start + k + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// `X_k = Σ x_n e^{−2πikn/N}`.
    pub fn forward(x: &mut [C64]) {
        transform(x, -1.0);
    }

    /// `x_n = (1/N) Σ X_k e^{2πikn/N}`.
    pub fn inverse(x: &mut [C64]) {
        transform(x, 1.0);
        let s = 1.0 / x.len() as f64;
        for z in x.iter_mut() {
            *z *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn psd_z_values() {
        assert!((psd_z(20.0).unwrap() - (1.0 / 21.0 + 0.8)).abs() < 1e-12);
        assert!((psd_z(20.0).unwrap() - 0.84762).abs() < 1e-5);
        assert!((psd_z(50.0).unwrap() - 0.019608).abs() < 1e-6);
        assert!((psd_z(1e6).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(psd_z(0.0).unwrap(), 1.0 + 0.8 * (-40.0f64).exp());
        assert!(matches!(psd_z(-1.0), Err(NoiseError::NegativeFrequency(_))));
    }

    #[test]
    fn psd_x_values() {
        assert!((psd_x(15.0).unwrap() - 0.515625).abs() < 1e-12);
        assert!((psd_x(20.0).unwrap() - 0.0514338).abs() < 1e-6);
        assert!((psd_x(1e6).unwrap() - 5.0 / 48.0).abs() < 1e-12);
        assert!(psd_x(-0.5).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            PsdSpec::from_shape(Axis::Z, &PsdShape::DephasingZ, 1.0, 1000),
            Err(NoiseError::BadGridSize(1000))
        ));
        assert!(PsdSpec::new(Axis::Z, 1.0, 8, vec![1.0; 3]).is_err());
        assert!(PsdSpec::new(Axis::Z, 1.0, 8, vec![1.0, -1.0, 0.0, 0.0]).is_err());
        assert!(PsdSpec::new(Axis::Z, 0.0, 8, vec![1.0; 4]).is_err());
    }

    #[test]
    fn zero_psd_gives_zero_noise() {
        let spec = PsdSpec::zero(Axis::Z, 1.0, 256).unwrap();
        let r = generate_noise(&spec, 11, 0).unwrap();
        assert!(r.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn realization_is_real_and_deterministic() {
        let spec = PsdSpec::from_shape(Axis::Z, &PsdShape::DephasingZ, 1.0, 4096).unwrap();
        let a = generate_noise(&spec, 99, 3).unwrap();
        let b = generate_noise(&spec, 99, 3).unwrap();
        assert!(a.max_imag_residue < 1e-9);
        assert_eq!(
            a.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = generate_noise(&spec, 100, 3).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<C64> = (0..64).map(|_| C64::new(rng.gen(), rng.gen())).collect();
        let mut y = x.clone();
        fft::forward(&mut y);
        for (k, yk) in y.iter().enumerate() {
            let naive: C64 = x
                .iter()
                .enumerate()
                .map(|(n, xn)| xn * C64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / 64.0))
                .sum();
            assert!((naive - yk).norm() < 1e-12);
        }
        fft::inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
