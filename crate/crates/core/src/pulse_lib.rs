//! Parameterised control pulses: CPMG-style Gaussian and square trains, their
//! randomisation, discretisation onto the time grid and the normalised feature
//! view consumed by the recurrent blackbox.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg2::Axis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("pulse spacing {spacing:.4e} is below the minimum {minimum:.4e}")]
    PulsesOverlap { spacing: f64, minimum: f64 },
    #[error("randomisation produced no valid sequence after {0} attempts")]
    RandomizationFailed(usize),
    #[error("invalid pulse parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Gaussian,
    Square,
}

impl PulseShape {
    /// Amplitude of a π-pulse of width `sigma`.
    pub fn pi_amplitude(self, sigma: f64) -> f64 {
        match self {
            PulseShape::Gaussian => PI / (2.0 * PI * sigma * sigma).sqrt(),
            PulseShape::Square => PI / sigma,
        }
    }

    /// Smallest allowed gap between neighbouring centres.
    fn min_gap(self, sigma: f64) -> f64 {
        match self {
            PulseShape::Gaussian => 6.0 * sigma,
            PulseShape::Square => sigma,
        }
    }
}

/// Width used for every pulse of a family: `6T/M`.
pub fn standard_width(total_time: f64, m: usize) -> f64 {
    6.0 * total_time / m as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub tau: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub sigma: f64,
}

/// One axis worth of pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub axis: Axis,
    pub shape: PulseShape,
    pub pulses: Vec<Pulse>,
}

impl PulseParams {
    pub fn empty(axis: Axis, shape: PulseShape) -> Self {
        PulseParams {
            axis,
            shape,
            pulses: Vec::new(),
        }
    }

    pub fn validate(&self, total_time: f64) -> Result<(), PulseError> {
        let mut prev: Option<f64> = None;
        for p in &self.pulses {
            if !(p.tau > 0.0 && p.tau < total_time) {
                return Err(PulseError::Invalid(format!("position {} outside (0, T)", p.tau)));
            }
            if !(p.sigma > 0.0) || !p.amplitude.is_finite() {
                return Err(PulseError::Invalid(format!("bad pulse {p:?}")));
            }
            if let Some(t) = prev {
                if p.tau <= t {
                    return Err(PulseError::Invalid("pulses not sorted by position".into()));
                }
            }
            prev = Some(p.tau);
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Gaussian => self
                .pulses
                .iter()
                .map(|p| p.amplitude * (-(t - p.tau).powi(2) / (2.0 * p.sigma * p.sigma)).exp())
                .sum(),
            PulseShape::Square => self
                .pulses
                .iter()
                .filter(|p| t >= p.tau - 0.5 * p.sigma && t <= p.tau + 0.5 * p.sigma)
                .map(|p| p.amplitude)
                .sum(),
        }
    }

    /// Analytic pulse area, `∫ f dt`.
    pub fn area(&self) -> f64 {
        self.pulses
            .iter()
            .map(|p| match self.shape {
                PulseShape::Gaussian => p.amplitude * (2.0 * PI * p.sigma * p.sigma).sqrt(),
                PulseShape::Square => p.amplitude * p.sigma,
            })
            .sum()
    }
}

fn cpmg(axis: Axis, shape: PulseShape, n_max: usize, total_time: f64, m: usize) -> Result<PulseParams, PulseError> {
    let sigma = standard_width(total_time, m);
    if n_max >= 2 {
        let spacing = total_time / n_max as f64;
        let minimum = 12.0 * sigma;
        if spacing < minimum {
            return Err(PulseError::PulsesOverlap { spacing, minimum });
        }
    } else if n_max == 1 && 6.0 * sigma >= total_time {
        return Err(PulseError::PulsesOverlap {
            spacing: total_time,
            minimum: 6.0 * sigma,
        });
    }
    let amplitude = shape.pi_amplitude(sigma);
    let pulses = (1..=n_max)
        .map(|n| Pulse {
            tau: (n as f64 - 0.5) / n_max as f64 * total_time,
            amplitude,
            sigma,
        })
        .collect();
    Ok(PulseParams { axis, shape, pulses })
}

/// CPMG train of Gaussian π-pulses, `σ = 6T/M`, `A = π/√(2πσ²)`,
/// `τ_n = (n − ½)/n_max · T`.
pub fn cpmg_gaussian(axis: Axis, n_max: usize, total_time: f64, m: usize) -> Result<PulseParams, PulseError> {
    cpmg(axis, PulseShape::Gaussian, n_max, total_time, m)
}

/// CPMG train of square π-pulses, `σ = 6T/M`, `A = π/σ`.
pub fn cpmg_square(axis: Axis, n_max: usize, total_time: f64, m: usize) -> Result<PulseParams, PulseError> {
    cpmg(axis, PulseShape::Square, n_max, total_time, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationConfig {
    /// Jitter half-range in units of σ.
    pub jitter_sigmas: f64,
    /// Amplitude scale drawn from `[power_min, power_max]`.
    pub power_min: f64,
    pub power_max: f64,
    pub randomize_positions: bool,
    pub randomize_power: bool,
    pub max_attempts: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            jitter_sigmas: 6.0,
            power_min: 0.0,
            power_max: 2.0,
            randomize_positions: true,
            randomize_power: true,
            max_attempts: 10_000,
        }
    }
}

impl RandomizationConfig {
    pub fn none() -> Self {
        RandomizationConfig {
            randomize_positions: false,
            randomize_power: false,
            ..Default::default()
        }
    }

    pub fn positions_only() -> Self {
        RandomizationConfig {
            randomize_power: false,
            ..Default::default()
        }
    }
}

fn is_valid_jitter(pulses: &[Pulse], shape: PulseShape, total_time: f64) -> bool {
    pulses.iter().all(|p| p.tau > 0.0 && p.tau < total_time)
        && pulses
            .windows(2)
            .all(|w| w[1].tau - w[0].tau >= shape.min_gap(w[0].sigma.max(w[1].sigma)))
}

/// Jitter every position by an independent `U[−6σ, 6σ]` shift and scale all
/// amplitudes by one shared `U[0, 2]` factor.
///
/// Jittered sequences that leave `(0, T)` or bring two pulses closer than the
/// shape's minimum gap are redrawn.
pub fn randomize<R: Rng>(
    p: &PulseParams,
    cfg: &RandomizationConfig,
    total_time: f64,
    rng: &mut R,
) -> Result<PulseParams, PulseError> {
    let mut out = p.clone();
    if cfg.randomize_positions && !p.pulses.is_empty() {
        let mut accepted = false;
        for _ in 0..cfg.max_attempts {
            for (q, orig) in out.pulses.iter_mut().zip(&p.pulses) {
                let half = cfg.jitter_sigmas * orig.sigma;
                q.tau = orig.tau + rng.gen_range(-half..=half);
            }
            if is_valid_jitter(&out.pulses, p.shape, total_time) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(PulseError::RandomizationFailed(cfg.max_attempts));
        }
    }
    if cfg.randomize_power {
        let scale = rng.gen_range(cfg.power_min..=cfg.power_max);
        for q in &mut out.pulses {
            q.amplitude *= scale;
        }
    }
    Ok(out)
}

/// Midpoint grid `t_j = (j + ½)·T/M`.
pub fn time_grid(total_time: f64, m: usize) -> Vec<f64> {
    let dt = total_time / m as f64;
    (0..m).map(|j| (j as f64 + 0.5) * dt).collect()
}

/// Evaluate one axis on the midpoint grid.
pub fn discretize_axis(p: &PulseParams, total_time: f64, m: usize) -> Vec<f64> {
    let dt = total_time / m as f64;
    let mut out = vec![0.0; m];
    match p.shape {
        PulseShape::Gaussian => {
            for pulse in &p.pulses {
                let inv = 1.0 / (2.0 * pulse.sigma * pulse.sigma);
                // Contributions beyond 40σ underflow; skip them.
                let reach = 40.0 * pulse.sigma;
                let lo = (((pulse.tau - reach) / dt - 0.5).floor().max(0.0)) as usize;
                let hi = ((((pulse.tau + reach) / dt - 0.5).ceil()).max(0.0) as usize).min(m);
                for (j, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
                    let t = (j as f64 + 0.5) * dt;
                    *v += pulse.amplitude * (-(t - pulse.tau).powi(2) * inv).exp();
                }
            }
        }
        PulseShape::Square => {
            for (j, v) in out.iter_mut().enumerate() {
                *v = p.value_at((j as f64 + 0.5) * dt);
            }
        }
    }
    out
}

/// Vector–Jacobian product of [`discretize_axis`]: given `∂L/∂f_j`, return
/// `(∂L/∂τ_n, ∂L/∂A_n)` per pulse. Square pulses have zero position gradient
/// almost everywhere.
pub fn discretize_axis_vjp(p: &PulseParams, total_time: f64, m: usize, wave_grad: &[f64]) -> Vec<(f64, f64)> {
    let dt = total_time / m as f64;
    p.pulses
        .iter()
        .map(|pulse| {
            let mut d_tau = 0.0;
            let mut d_amp = 0.0;
            for (j, g) in wave_grad.iter().enumerate().take(m) {
                let t = (j as f64 + 0.5) * dt;
                match p.shape {
                    PulseShape::Gaussian => {
                        let e = (-(t - pulse.tau).powi(2) / (2.0 * pulse.sigma * pulse.sigma)).exp();
                        d_amp += g * e;
                        d_tau += g * pulse.amplitude * e * (t - pulse.tau) / (pulse.sigma * pulse.sigma);
                    }
                    PulseShape::Square => {
                        if t >= pulse.tau - 0.5 * pulse.sigma && t <= pulse.tau + 0.5 * pulse.sigma {
                            d_amp += g;
                        }
                    }
                }
            }
            (d_tau, d_amp)
        })
        .collect()
}

/// Multi-axis control sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub trains: Vec<PulseParams>,
}

impl ControlSequence {
    pub fn train(&self, axis: Axis) -> Option<&PulseParams> {
        self.trains.iter().find(|t| t.axis == axis)
    }

    pub fn validate(&self, total_time: f64) -> Result<(), PulseError> {
        self.trains.iter().try_for_each(|t| t.validate(total_time))
    }
}

/// Discretised control waveform; axes without control are absent (identically zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub y: Vec<f64>,
    #[serde(default)]
    pub z: Vec<f64>,
}

impl Waveform {
    pub fn zeros() -> Self {
        Waveform {
            x: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
        }
    }

    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
            Axis::I => &[],
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut Vec<f64> {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
            Axis::Z | Axis::I => &mut self.z,
        }
    }

    #[inline]
    pub fn sample(&self, axis: Axis, j: usize) -> f64 {
        self.axis(axis).get(j).copied().unwrap_or(0.0)
    }

    /// Length check: every present axis must have `m` samples.
    pub fn is_consistent(&self, m: usize) -> bool {
        [&self.x, &self.y, &self.z]
            .iter()
            .all(|v| v.is_empty() || v.len() == m)
            && [&self.x, &self.y, &self.z].iter().flat_map(|v| v.iter()).all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Waveform) -> f64 {
        let mut worst = 0.0f64;
        for axis in Axis::PAULIS {
            let a = self.axis(axis);
            let b = other.axis(axis);
            let n = a.len().max(b.len());
            for j in 0..n {
                let va = a.get(j).copied().unwrap_or(0.0);
                let vb = b.get(j).copied().unwrap_or(0.0);
                worst = worst.max((va - vb).abs());
            }
        }
        worst
    }
}

pub fn discretize(seq: &ControlSequence, total_time: f64, m: usize) -> Waveform {
    let mut w = Waveform::zeros();
    for train in &seq.trains {
        let samples = discretize_axis(train, total_time, m);
        let slot = w.axis_mut(train.axis);
        if slot.is_empty() {
            *slot = samples;
        } else {
            for (a, b) in slot.iter_mut().zip(samples) {
                *a += b;
            }
        }
    }
    w
}

/// Layout of the normalised feature sequence: `n_max` steps, each holding
/// `(τ/T, A/A_ref, σ/T)` for every controlled axis in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub axes: Vec<Axis>,
    pub shape: PulseShape,
    pub n_max: usize,
    pub total_time: f64,
    pub a_ref: f64,
}

pub const FEATURES_PER_AXIS: usize = 3;

impl FeatureLayout {
    pub fn width(&self) -> usize {
        FEATURES_PER_AXIS * self.axes.len()
    }

    pub fn normalize(&self, seq: &ControlSequence) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.width()]; self.n_max];
        for (ai, axis) in self.axes.iter().enumerate() {
            if let Some(train) = seq.train(*axis) {
                for (n, p) in train.pulses.iter().enumerate().take(self.n_max) {
                    let row = &mut out[n][ai * FEATURES_PER_AXIS..(ai + 1) * FEATURES_PER_AXIS];
                    row[0] = p.tau / self.total_time;
                    row[1] = p.amplitude / self.a_ref;
                    row[2] = p.sigma / self.total_time;
                }
            }
        }
        out
    }

    /// Inverse of [`normalize`](Self::normalize); all-zero slots are padding.
    pub fn denormalize(&self, features: &[Vec<f64>]) -> ControlSequence {
        let trains = self
            .axes
            .iter()
            .enumerate()
            .map(|(ai, axis)| {
                let pulses = features
                    .iter()
                    .map(|row| &row[ai * FEATURES_PER_AXIS..(ai + 1) * FEATURES_PER_AXIS])
                    .filter(|v| v.iter().any(|x| *x != 0.0))
                    .map(|v| Pulse {
                        tau: v[0] * self.total_time,
                        amplitude: v[1] * self.a_ref,
                        sigma: v[2] * self.total_time,
                    })
                    .collect();
                PulseParams {
                    axis: *axis,
                    shape: self.shape,
                    pulses,
                }
            })
            .collect();
        ControlSequence { trains }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const M: usize = 4096;

    #[test]
    fn gaussian_cpmg_single_pulse() {
        let p = cpmg_gaussian(Axis::X, 1, 1.0, M).unwrap();
        assert_eq!(p.pulses.len(), 1);
        assert_eq!(p.pulses[0].tau, 0.5);
        assert!((p.pulses[0].sigma - 1.4648e-3).abs() < 1e-7);
        assert!((p.area() - PI).abs() < 1e-12);
    }

    #[test]
    fn gaussian_cpmg_28_is_equally_spaced() {
        let p = cpmg_gaussian(Axis::X, 28, 1.0, M).unwrap();
        assert_eq!(p.pulses.len(), 28);
        for w in p.pulses.windows(2) {
            assert!((w[1].tau - w[0].tau - 1.0 / 28.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cpmg_is_free_evolution() {
        let p = cpmg_gaussian(Axis::X, 0, 1.0, M).unwrap();
        assert!(p.pulses.is_empty());
        assert!(discretize_axis(&p, 1.0, M).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn overlapping_cpmg_is_rejected() {
        assert!(matches!(
            cpmg_gaussian(Axis::X, 80, 1.0, M),
            Err(PulseError::PulsesOverlap { .. })
        ));
        assert!(matches!(
            cpmg_square(Axis::X, 80, 1.0, M),
            Err(PulseError::PulsesOverlap { .. })
        ));
    }

    #[test]
    fn square_cpmg_area_and_support() {
        let p = cpmg_square(Axis::X, 1, 1.0, M).unwrap();
        let pulse = p.pulses[0];
        assert!((pulse.amplitude * pulse.sigma - PI).abs() < 1e-12);
        assert!((pulse.amplitude - 2144.66).abs() < 0.01);
        let w = discretize_axis(&p, 1.0, M);
        let nonzero: Vec<_> = w.iter().filter(|v| **v != 0.0).collect();
        let dt = 1.0 / M as f64;
        let expected = (pulse.sigma / dt).ceil() as i64;
        assert!((nonzero.len() as i64 - expected).abs() <= 1);
        assert!(nonzero.iter().all(|v| **v == pulse.amplitude));
        assert_eq!(w[0], 0.0);
        assert_eq!(w[M - 1], 0.0);
    }

    #[test]
    fn riemann_sum_of_gaussian_pi_pulse() {
        let p = cpmg_gaussian(Axis::X, 1, 1.0, M).unwrap();
        let w = discretize_axis(&p, 1.0, M);
        let area: f64 = w.iter().sum::<f64>() / M as f64;
        assert!((area - PI).abs() / PI < 1e-4);
    }

    #[test]
    fn randomize_identity_when_flags_off() {
        let p = cpmg_gaussian(Axis::X, 5, 1.0, M).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = randomize(&p, &RandomizationConfig::none(), 1.0, &mut rng).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn zero_power_draw_gives_free_evolution() {
        let p = cpmg_gaussian(Axis::X, 5, 1.0, M).unwrap();
        let cfg = RandomizationConfig {
            power_min: 0.0,
            power_max: 0.0,
            randomize_positions: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = randomize(&p, &cfg, 1.0, &mut rng).unwrap();
        assert!(discretize_axis(&q, 1.0, M).iter().all(|v| *v == 0.0));
    }

    /// Two-sided Kolmogorov–Smirnov p-value via the asymptotic series.
    fn ks_pvalue(d: f64, n: usize) -> f64 {
        let sn = (n as f64).sqrt();
        let lambda = (sn + 0.12 + 0.11 / sn) * d;
        let mut sum = 0.0;
        for k in 1..200 {
            let k = k as f64;
            sum += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        sum.clamp(0.0, 1.0)
    }

    #[test]
    fn jitter_is_uniform() {
        let p = cpmg_gaussian(Axis::X, 1, 1.0, M).unwrap();
        let sigma = p.pulses[0].sigma;
        let cfg = RandomizationConfig::positions_only();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let q = randomize(&p, &cfg, 1.0, &mut rng).unwrap();
                (q.pulses[0].tau - 0.5) / (6.0 * sigma)
            })
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len();
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = ((x + 1.0) / 2.0).clamp(0.0, 1.0);
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks_pvalue(d, n) > 0.01, "KS statistic {d}");
        assert!(draws[0] >= -1.0 && draws[n - 1] <= 1.0);
    }

    #[test]
    fn normalize_examples() {
        let p = cpmg_gaussian(Axis::X, 1, 1.0, M).unwrap();
        let a_ref = 2.0 * p.pulses[0].amplitude;
        let layout = FeatureLayout {
            axes: vec![Axis::X],
            shape: PulseShape::Gaussian,
            n_max: 4,
            total_time: 1.0,
            a_ref,
        };
        let seq = ControlSequence { trains: vec![p.clone()] };
        let f = layout.normalize(&seq);
        assert_eq!(f.len(), 4);
        assert_eq!(f[0][0], 0.5);
        assert_eq!(f[0][1], 0.5);
        assert!(f[1..].iter().all(|r| r.iter().all(|v| *v == 0.0)));

        let mut big = p;
        big.pulses[0].amplitude = a_ref;
        let f = layout.normalize(&ControlSequence { trains: vec![big] });
        assert_eq!(f[0][1], 1.0);

        let empty = layout.normalize(&ControlSequence { trains: vec![] });
        assert!(empty.iter().all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut p = cpmg_gaussian(Axis::X, 3, 1.0, 1024).unwrap();
        p.pulses[1].amplitude *= 0.7;
        let m = 1024;
        let g: Vec<f64> = (0..m).map(|j| ((j as f64) * 0.37).sin()).collect();
        let loss = |q: &PulseParams| -> f64 {
            discretize_axis(q, 1.0, m).iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let grads = discretize_axis_vjp(&p, 1.0, m, &g);
        for n in 0..3 {
            let h = 1e-7;
            let mut a = p.clone();
            let mut b = p.clone();
            a.pulses[n].tau += h;
            b.pulses[n].tau -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - grads[n].0).abs() <= 1e-5 * fd.abs().max(1.0), "tau {n}: {fd} vs {}", grads[n].0);
            let mut a = p.clone();
            let mut b = p.clone();
            a.pulses[n].amplitude += 1e-3;
            b.pulses[n].amplitude -= 1e-3;
            let fd = (loss(&a) - loss(&b)) / 2e-3;
            assert!((fd - grads[n].1).abs() <= 1e-7 * fd.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn jitter_keeps_order_and_relative_heights(seed in any::<u64>(), order in 1usize..=28) {
            let p = cpmg_gaussian(Axis::X, order, 1.0, M).unwrap();
            let mut p2 = p.clone();
            for (i, q) in p2.pulses.iter_mut().enumerate() {
                q.amplitude *= 1.0 + 0.1 * i as f64;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = randomize(&p2, &RandomizationConfig::default(), 1.0, &mut rng).unwrap();
            prop_assert!(q.pulses.windows(2).all(|w| w[0].tau < w[1].tau));
            prop_assert!(q.validate(1.0).is_ok());
            if q.pulses[0].amplitude != 0.0 {
                for (a, b) in q.pulses.iter().zip(&p2.pulses) {
                    let ratio = a.amplitude / b.amplitude;
                    prop_assert!((ratio - q.pulses[0].amplitude / p2.pulses[0].amplitude).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn features_determine_waveform(seed in any::<u64>(), nx in 0usize..=7, ny in 0usize..=7) {
            let m = 1024;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = RandomizationConfig::default();
            let px = randomize(&cpmg_gaussian(Axis::X, nx, 1.0, 4096).unwrap(), &cfg, 1.0, &mut rng).unwrap();
            let py = randomize(&cpmg_gaussian(Axis::Y, ny, 1.0, 4096).unwrap(), &cfg, 1.0, &mut rng).unwrap();
            let a_ref = 2.0 * PulseShape::Gaussian.pi_amplitude(standard_width(1.0, 4096));
            let layout = FeatureLayout {
                axes: vec![Axis::X, Axis::Y],
                shape: PulseShape::Gaussian,
                n_max: 7,
                total_time: 1.0,
                a_ref,
            };
            let seq = ControlSequence { trains: vec![px, py] };
            let feats = layout.normalize(&seq);
            prop_assert!(feats.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            let back = layout.denormalize(&feats);
            let w0 = discretize(&seq, 1.0, m);
            let w1 = discretize(&back, 1.0, m);
            prop_assert!(w0.max_abs_diff(&w1) < 1e-12 * a_ref);
        }
    }
}
