//! Dephasing-noise spectroscopy from CPMG coherences.
//!
//! A Gaussian dephasing channel with switching function `y(t)` scales the
//! `X+ → X` coherence by `exp(−χ)`. The noise generator emits one tone per
//! PSD bin `f_j = j/T` with amplitude `2√(S_j/T)` (the DC bin `√(S_0/T)`),
//! so `χ = Σ_j S_j·|Y(f_j)|²/T` with the DC term weighted by ¼. The sum runs
//! over the generator's own line spectrum, which is exact for it; a
//! continuous integral would only approximate that grid.
//!
//! Each tone has a fixed amplitude and a uniform phase, so the exact average
//! over the generator is `Π_j J0(2√χ_j)` rather than `exp(−Σ_j χ_j)`. The
//! two agree for weak lines and part once a single line carries `χ_j ≳ 0.1`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Recipe, REFERENCE_M};
use crate::graybox_model::{ModelError, ModelState};
use crate::linalg2::{Axis, C64};
use crate::mc_simulator::{MeasurementRecord, NoiseModel, SimError, SimulationConfig, Simulator};
use crate::noise_gen::{fft, PsdSpec};
use crate::pulse_lib::{cpmg_gaussian, discretize, ControlSequence, RandomizationConfig, Waveform, PulseShape};
use crate::util::pairwise_sum;

/// Scale between the line-sum `χ` and the simulator's decay. The value
/// follows from the generator's amplitude convention; the flat-PSD check in
/// the integration tests pins it against Monte Carlo.
pub const CALIBRATION: f64 = 1.0;

/// Index of `(X+, X)` in a measurement record.
const PREP_X_PLUS: usize = 0;
const OBS_X: usize = 0;

#[derive(Debug, Error)]
pub enum SpectroscopyError {
    #[error("order {order} outside the model's range 1..={n_max}")]
    OrderOutOfRange { order: usize, n_max: usize },
    #[error("coherence for order {order} is not positive ({value})")]
    NonPositiveCoherence { order: usize, value: f64 },
    #[error("model does not control the X axis")]
    NoXAxis,
    #[error("waveform has {got} samples, PSD grid has {expected}")]
    GridMismatch { got: usize, expected: usize },
    #[error("need at least one order")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Probe frequency of CPMG order `n`.
pub fn probe_frequency(n: usize, total_time: f64) -> f64 {
    n as f64 / (2.0 * total_time)
}

/// Nominal π-power Gaussian CPMG train on X at the dataset pulse width.
pub fn cpmg_sequence(n: usize, total_time: f64) -> ControlSequence {
    let train = cpmg_gaussian(Axis::X, n, total_time, REFERENCE_M).expect("CPMG orders up to 50 fit the reference grid");
    ControlSequence { trains: vec![train] }
}

/// Training distribution of the spectroscopy model: X-axis Gaussian CPMG
/// orders `1..=n_top` under pure dephasing, positions jittered by up to ±σ, power fixed.
pub fn spectroscopy_recipe(n_top: usize) -> Recipe {
    Recipe {
        shape: PulseShape::Gaussian,
        axes: vec![Axis::X],
        noise: NoiseModel::dephasing(),
        configurations: (1..=n_top).map(|n| vec![n]).collect(),
        n_max: n_top,
        // Queries use exact CPMG positions; a ±6σ jitter broadens the
        // order-n filter peak enough that those positions are never seen.
        randomization: RandomizationConfig {
            jitter_sigmas: 1.0,
            ..RandomizationConfig::positions_only()
        },
    }
}

pub fn spectroscopy_dataset_name(n_top: usize) -> String {
    format!("CPMG_G_X_{n_top}_dephasing")
}

/// `cos θ(t_j)` where `θ` is the X rotation angle accumulated up to the
/// midpoint of step `j`; the toggling-frame weight of `σ_z`.
pub fn switching_function(wave: &Waveform, dt: f64) -> Vec<f64> {
    let x = wave.axis(Axis::X);
    let mut theta = 0.0;
    x.iter()
        .map(|v| {
            let mid = theta + 0.5 * v * dt;
            theta += v * dt;
            mid.cos()
        })
        .collect()
}

/// Per-bin filter weights `|Y(f_j)|²/T` for `j = 0..M/2`, DC scaled by ¼.
pub fn filter_weights(wave: &Waveform, total_time: f64, m: usize) -> Vec<f64> {
    let dt = total_time / m as f64;
    let y = if wave.axis(Axis::X).is_empty() {
        vec![1.0; m]
    } else {
        switching_function(wave, dt)
    };
    let mut buf: Vec<C64> = y.iter().map(|v| C64::new(*v, 0.0)).collect();
    fft::forward(&mut buf);
    // The half-sample shift of the midpoint grid only changes the phase.
    (0..m / 2)
        .map(|j| {
            let w = buf[j].norm_sqr() * dt * dt / total_time;
            if j == 0 {
                0.25 * w
            } else {
                w
            }
        })
        .collect()
}

/// Decay exponent `χ` of the `X+ → X` coherence under dephasing noise `spec`
/// for the control waveform `wave` sampled on the same grid.
pub fn filter_oracle(spec: &PsdSpec, wave: &Waveform) -> Result<f64, SpectroscopyError> {
    let x = wave.axis(Axis::X);
    if !x.is_empty() && x.len() != spec.m {
        return Err(SpectroscopyError::GridMismatch {
            got: x.len(),
            expected: spec.m,
        });
    }
    let w = filter_weights(wave, spec.total_time, spec.m);
    let terms: Vec<f64> = spec.values.iter().zip(&w).map(|(s, w)| s * w).collect();
    Ok(CALIBRATION * pairwise_sum(&terms))
}

/// Coherences per CPMG order with their closed-system references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub total_time: f64,
    pub orders: Vec<usize>,
    pub coherences: Vec<f64>,
    /// Noiseless `(X+, X)` value for the same sequence.
    pub references: Vec<f64>,
    /// Standard error of each coherence, when it comes from sampling.
    pub std_errors: Option<Vec<f64>>,
}

impl CoherenceCurve {
    pub fn frequencies(&self) -> Vec<f64> {
        self.orders.iter().map(|n| probe_frequency(*n, self.total_time)).collect()
    }

    /// `χ_n = −ln(|C_n| / |C_n⁽⁰⁾|)`.
    pub fn decay_exponents(&self) -> Result<Vec<f64>, SpectroscopyError> {
        self.orders
            .iter()
            .zip(self.coherences.iter().zip(&self.references))
            .map(|(&order, (&c, &r))| {
                if c.abs() == 0.0 || !c.is_finite() {
                    return Err(SpectroscopyError::NonPositiveCoherence { order, value: c });
                }
                if r.abs() == 0.0 {
                    return Err(SpectroscopyError::NonPositiveCoherence { order, value: r });
                }
                Ok(-(c.abs() / r.abs()).ln())
            })
            .collect()
    }
}

/// Model-predicted coherences on the nominal CPMG trains.
pub fn predict_coherences(model: &ModelState, orders: &[usize]) -> Result<CoherenceCurve, SpectroscopyError> {
    let layout = &model.layout;
    if !layout.axes.contains(&Axis::X) {
        return Err(SpectroscopyError::NoXAxis);
    }
    if orders.is_empty() {
        return Err(SpectroscopyError::Empty);
    }
    if let Some(&order) = orders.iter().find(|n| **n == 0 || **n > layout.n_max) {
        return Err(SpectroscopyError::OrderOutOfRange {
            order,
            n_max: layout.n_max,
        });
    }
    let t = model.total_time;
    let pairs = orders
        .par_iter()
        .map(|&n| {
            let seq = cpmg_sequence(n, t);
            let wave = discretize(&seq, t, model.m_model);
            let p = model.predict(&layout.normalize(&seq), &wave)?;
            let reference = MeasurementRecord::from_unitary(&p.control_unitary).get(PREP_X_PLUS, OBS_X);
            Ok((p.outputs.get(PREP_X_PLUS, OBS_X), reference))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let (coherences, references) = pairs.into_iter().unzip();
    Ok(CoherenceCurve {
        total_time: t,
        orders: orders.to_vec(),
        coherences,
        references,
        std_errors: None,
    })
}

/// Monte Carlo coherences on the nominal CPMG trains, with standard errors.
pub fn simulate_coherences(cfg: &SimulationConfig, orders: &[usize], seed: u64) -> Result<CoherenceCurve, SpectroscopyError> {
    if orders.is_empty() {
        return Err(SpectroscopyError::Empty);
    }
    let sim = Simulator::new(cfg.clone())?;
    let clean = Simulator::new(SimulationConfig {
        noise: NoiseModel::none(),
        ..cfg.clone()
    })?;
    let k = if sim.is_noiseless() { 1 } else { cfg.k };
    let mut curve = CoherenceCurve {
        total_time: cfg.total_time,
        orders: orders.to_vec(),
        coherences: Vec::new(),
        references: Vec::new(),
        std_errors: Some(Vec::new()),
    };
    for (i, &n) in orders.iter().enumerate() {
        let wave = discretize(&cpmg_sequence(n, cfg.total_time), cfg.total_time, cfg.m);
        let rows = sim.realizations(&wave, seed.wrapping_add(i as u64), 0..k as u64)?;
        // Rotation entry (X, X) is the (X+, X) outcome.
        let values: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mean = pairwise_sum(&values) / k as f64;
        let var = if k > 1 {
            pairwise_sum(&values.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / (k - 1) as f64
        } else {
            0.0
        };
        curve.coherences.push(mean);
        curve.references.push(clean.simulate(&wave, seed)?.get(PREP_X_PLUS, OBS_X));
        if let Some(se) = &mut curve.std_errors {
            se.push((var / k as f64).sqrt());
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    /// `S(f_n) = χ_n·π²/(4T)`: only the first harmonic of each filter.
    Harmonic,
    /// Non-negative Tikhonov fit of a piecewise-linear PSD through the full
    /// filter overlap matrix.
    Full,
}

/// Statistics of the dephasing noise assumed when turning coherences into
/// decay exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStatistics {
    /// `C = exp(−χ)`.
    Gaussian,
    /// Fixed-amplitude tones with uniform phases, as the noise generator
    /// emits: `C = Π_j J0(2√χ_j)`.
    RandomPhase,
}

/// `−ln J0(2√χ) − χ ≥ 0`: the excess decay of one random-phase line over a
/// Gaussian line of the same power.
fn random_phase_excess(chi: f64) -> f64 {
    // J0's first zero is at 2.405; beyond it the line alone can flip the sign
    // of the coherence, which no positive decay describes.
    let a = (2.0 * chi.max(0.0).sqrt()).min(2.3);
    -libm::j0(a).ln() - 0.25 * a * a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub mode: InversionMode,
    /// Full mode only; the harmonic shortcut is always Gaussian.
    pub statistics: NoiseStatistics,
    /// Noise grid size the coherences were produced on (full mode).
    pub m: usize,
    /// Weight of the first-difference penalty relative to `‖A‖²_F / knots`.
    pub smoothing: f64,
}

impl InversionConfig {
    pub fn harmonic() -> Self {
        InversionConfig {
            mode: InversionMode::Harmonic,
            statistics: NoiseStatistics::Gaussian,
            m: 0,
            smoothing: 0.0,
        }
    }

    /// Full inversion matched to the simulator's random-phase noise.
    pub fn full(m: usize) -> Self {
        InversionConfig {
            mode: InversionMode::Full,
            statistics: NoiseStatistics::RandomPhase,
            m,
            smoothing: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub mode: InversionMode,
    pub frequencies: Vec<f64>,
    /// Clipped at zero.
    pub values: Vec<f64>,
    /// Before clipping; negative entries flag inconsistent coherences.
    pub raw: Vec<f64>,
    pub decay_exponents: Vec<f64>,
    pub calibration: f64,
}

impl SpectrumEstimate {
    pub fn clipped(&self) -> usize {
        self.raw.iter().filter(|v| **v < 0.0).count()
    }
}

/// Knots of the piecewise-linear PSD model: zero, every probe frequency,
/// then doublings up to the grid's top bin.
fn knots(probes: &[f64], f_top: f64) -> Vec<f64> {
    let mut k = vec![0.0];
    k.extend(probes.iter().copied().filter(|f| *f > 0.0 && *f < f_top));
    let mut f = *k.last().unwrap();
    while f > 0.0 && 2.0 * f < f_top {
        f *= 2.0;
        k.push(f);
    }
    if *k.last().unwrap() < f_top {
        k.push(f_top);
    }
    k
}

/// Hat-function weights of `f` on `knots`; constant beyond the ends.
fn hat_weights(f: f64, knots: &[f64]) -> [(usize, f64); 2] {
    let last = knots.len() - 1;
    if f >= knots[last] {
        return [(last, 1.0), (last, 0.0)];
    }
    let i = knots.partition_point(|k| *k <= f).saturating_sub(1);
    let u = (f - knots[i]) / (knots[i + 1] - knots[i]);
    [(i, 1.0 - u), (i + 1, u)]
}

/// Filter weights per order (rows) and bin (columns), calibrated.
fn weight_matrix(orders: &[usize], total_time: f64, m: usize) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = orders
        .par_iter()
        .map(|&n| filter_weights(&discretize(&cpmg_sequence(n, total_time), total_time, m), total_time, m))
        .collect();
    DMatrix::from_fn(orders.len(), m / 2, |i, j| CALIBRATION * rows[i][j])
}

/// Bins (rows) by knots (columns): `H_jk = h_k(f_j)`.
fn hat_matrix(bins: usize, total_time: f64, knots: &[f64]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(bins, knots.len());
    for j in 0..bins {
        for (k, v) in hat_weights(j as f64 / total_time, knots) {
            h[(j, k)] += v;
        }
    }
    h
}

/// Lawson–Hanson active-set solver for `min ‖Ax − b‖, x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0) * b.norm().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|i| passive[*i]).collect();
        let sub = a.select_columns(&cols);
        let sol = sub.svd(true, true).solve(b, 1e-14).expect("SVD computed with both factors");
        let mut full = DVector::zeros(n);
        for (c, v) in cols.iter().zip(sol.iter()) {
            full[*c] = *v;
        }
        full
    };
    for _ in 0..3 * n {
        let w = a.transpose() * (b - a * &x);
        let Some((j, wj)) = (0..n).filter(|i| !passive[*i]).map(|i| (i, w[i])).max_by(|p, q| p.1.total_cmp(&q.1))
        else {
            break;
        };
        if wj <= tol {
            break;
        }
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|i| passive[*i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..n)
                .filter(|i| passive[*i] && s[*i] <= 0.0)
                .map(|i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

const MAX_FIXED_POINT: usize = 100;

/// Estimate the dephasing PSD at the probe frequencies of `curve`.
pub fn invert_as(curve: &CoherenceCurve, cfg: &InversionConfig) -> Result<SpectrumEstimate, SpectroscopyError> {
    if curve.orders.is_empty() {
        return Err(SpectroscopyError::Empty);
    }
    let t = curve.total_time;
    let chi = curve.decay_exponents()?;
    let probes = curve.frequencies();
    let raw: Vec<f64> = match cfg.mode {
        InversionMode::Harmonic => chi.iter().map(|c| c * PI * PI / (4.0 * t) / CALIBRATION).collect(),
        InversionMode::Full => {
            let f_top = (cfg.m / 2 - 1) as f64 / t;
            let kn = knots(&probes, f_top);
            let w = weight_matrix(&curve.orders, t, cfg.m);
            let h = hat_matrix(cfg.m / 2, t, &kn);
            let a = &w * &h;
            let nk = kn.len();
            let lambda = cfg.smoothing * a.norm_squared() / nk as f64;
            let mut aug = DMatrix::zeros(a.nrows() + nk - 1, nk);
            aug.view_mut((0, 0), (a.nrows(), nk)).copy_from(&a);
            let root = lambda.sqrt();
            for i in 0..nk - 1 {
                aug[(a.nrows() + i, i)] = -root;
                aug[(a.nrows() + i, i + 1)] = root;
            }
            let measured = DVector::from_column_slice(&chi);
            let mut rhs = DVector::zeros(a.nrows() + nk - 1);
            rhs.rows_mut(0, a.nrows()).copy_from(&measured);
            let mut s = nnls(&aug, &rhs);
            if cfg.statistics == NoiseStatistics::RandomPhase {
                // Fixed point: fit the Gaussian part after removing the
                // excess the current estimate implies. The excess grows
                // with S, so the iterates decrease monotonically.
                for _ in 0..MAX_FIXED_POINT {
                    let lines = &h * &s;
                    let excess = DVector::from_fn(w.nrows(), |n, _| {
                        (0..w.ncols()).map(|j| random_phase_excess(w[(n, j)] * lines[j].max(0.0))).sum::<f64>()
                    });
                    rhs.rows_mut(0, a.nrows()).copy_from(&(&measured - excess));
                    let next = nnls(&aug, &rhs);
                    let change = (&next - &s).amax();
                    s = next;
                    if change <= 1e-10 * s.amax().max(1e-300) {
                        break;
                    }
                }
            }
            probes
                .iter()
                .map(|f| hat_weights(*f, &kn).iter().map(|(k, h)| h * s[*k]).sum())
                .collect()
        }
    };
    Ok(SpectrumEstimate {
        mode: cfg.mode,
        frequencies: probes,
        values: raw.iter().map(|v| v.max(0.0)).collect(),
        raw,
        decay_exponents: chi,
        calibration: CALIBRATION,
    })
}

/// Coherences implied by a known PSD through [`filter_oracle`], assuming
/// Gaussian noise.
pub fn oracle_coherences(spec: &PsdSpec, orders: &[usize]) -> Result<CoherenceCurve, SpectroscopyError> {
    oracle_coherences_as(spec, orders, NoiseStatistics::Gaussian)
}

/// Coherences implied by a known PSD under the given noise statistics.
pub fn oracle_coherences_as(
    spec: &PsdSpec,
    orders: &[usize],
    statistics: NoiseStatistics,
) -> Result<CoherenceCurve, SpectroscopyError> {
    let t = spec.total_time;
    let decay = |n: usize| -> Result<f64, SpectroscopyError> {
        let wave = discretize(&cpmg_sequence(n, t), t, spec.m);
        let chi = filter_oracle(spec, &wave)?;
        Ok(match statistics {
            NoiseStatistics::Gaussian => chi,
            NoiseStatistics::RandomPhase => {
                let w = filter_weights(&wave, t, spec.m);
                let excess: Vec<f64> =
                    spec.values.iter().zip(&w).map(|(s, w)| random_phase_excess(CALIBRATION * s * w)).collect();
                chi + pairwise_sum(&excess)
            }
        })
    };
    let chi = orders.iter().map(|&n| decay(n)).collect::<Result<Vec<_>, _>>()?;
    Ok(CoherenceCurve {
        total_time: t,
        orders: orders.to_vec(),
        coherences: chi.iter().map(|c| (-c).exp()).collect(),
        references: vec![1.0; orders.len()],
        std_errors: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_gen::{psd_z, PsdShape};

    const M: usize = 1024;

    fn spec(shape: PsdShape) -> PsdSpec {
        PsdSpec::from_shape(Axis::Z, &shape, 1.0, M).unwrap()
    }

    #[test]
    fn zero_psd_gives_zero_decay() {
        let s = PsdSpec::zero(Axis::Z, 1.0, M).unwrap();
        let w = discretize(&cpmg_sequence(4, 1.0), 1.0, M);
        assert_eq!(filter_oracle(&s, &w).unwrap(), 0.0);
    }

    #[test]
    fn free_evolution_only_sees_dc() {
        // Y(j/T) vanishes for j ≥ 1 and Y(0) = T, so χ = S_0·T/4.
        let s = spec(PsdShape::Flat { level: 0.8 });
        let chi = filter_oracle(&s, &Waveform::zeros()).unwrap();
        assert!((chi - 0.2).abs() < 1e-12, "{chi}");
    }

    #[test]
    fn even_cpmg_on_flat_psd_sums_odd_harmonics() {
        // Square-wave filter: χ = Σ_{k odd} S·4T/(π²k²) → S·T/2 as k → ∞.
        // The truncated series up to the top bin, minus finite-width loss:
        let level = 0.6;
        let s = spec(PsdShape::Flat { level });
        for n in [2usize, 4, 8] {
            let chi = filter_oracle(&s, &discretize(&cpmg_sequence(n, 1.0), 1.0, M)).unwrap();
            let kmax = (M / 2 - 1) * 2 / n;
            let series: f64 = (1..=kmax).step_by(2).map(|k| 4.0 * level / (PI * PI * (k * k) as f64)).sum();
            assert!((chi - series).abs() / series < 0.02, "n={n}: {chi} vs {series}");
        }
    }

    #[test]
    fn single_tone_sits_on_its_probe() {
        // Only bin 4 carries power; CPMG-8 probes f = 4 with weight 4T/π².
        let mut s = PsdSpec::zero(Axis::Z, 1.0, M).unwrap();
        s.values[4] = 0.5;
        let chi = filter_oracle(&s, &discretize(&cpmg_sequence(8, 1.0), 1.0, M)).unwrap();
        let ideal = 0.5 * 4.0 / (PI * PI);
        assert!((chi - ideal).abs() / ideal < 0.01, "{chi} vs {ideal}");
        let curve = oracle_coherences(&s, &[8]).unwrap();
        let est = invert_as(&curve, &InversionConfig::harmonic()).unwrap();
        assert!((est.values[0] - 0.5).abs() < 0.005, "{}", est.values[0]);
    }

    #[test]
    fn zero_noise_inverts_to_zero() {
        let curve = CoherenceCurve {
            total_time: 1.0,
            orders: vec![1, 2, 3],
            coherences: vec![-0.8, 0.9, 0.5],
            references: vec![-0.8, 0.9, 0.5],
            std_errors: None,
        };
        for cfg in [InversionConfig::harmonic(), InversionConfig::full(M)] {
            let est = invert_as(&curve, &cfg).unwrap();
            assert!(est.values.iter().all(|v| v.abs() < 1e-12), "{:?}", est.values);
        }
    }

    #[test]
    fn non_positive_coherence_is_rejected() {
        let curve = CoherenceCurve {
            total_time: 1.0,
            orders: vec![2],
            coherences: vec![0.0],
            references: vec![1.0],
            std_errors: None,
        };
        assert!(matches!(
            invert_as(&curve, &InversionConfig::harmonic()),
            Err(SpectroscopyError::NonPositiveCoherence { order: 2, .. })
        ));
    }

    #[test]
    fn full_inversion_recovers_smooth_psd() {
        let shape = PsdShape::Tone {
            amplitude: 1.0,
            center: 12.0,
            width: 4.0,
        };
        let s = spec(shape);
        let orders: Vec<usize> = (1..=50).collect();
        for statistics in [NoiseStatistics::Gaussian, NoiseStatistics::RandomPhase] {
            let curve = oracle_coherences_as(&s, &orders, statistics).unwrap();
            let cfg = InversionConfig {
                statistics,
                ..InversionConfig::full(M)
            };
            let est = invert_as(&curve, &cfg).unwrap();
            for (f, v) in est.frequencies.iter().zip(&est.values) {
                let truth = shape.eval(*f).unwrap();
                if (4.0..=20.0).contains(f) {
                    assert!((v - truth).abs() / truth < 0.2, "{statistics:?} f={f}: {v} vs {truth}");
                }
            }
        }
    }

    #[test]
    fn random_phase_excess_is_quartic_for_weak_lines() {
        // −ln J0(a) = a²/4 + a⁴/64 + …, and a²/4 = χ.
        for chi in [1e-4, 1e-3, 1e-2] {
            let e = random_phase_excess(chi);
            assert!((e / (chi * chi / 4.0) - 1.0).abs() < 0.05, "{chi}: {e}");
        }
        assert_eq!(random_phase_excess(0.0), 0.0);
    }

    #[test]
    fn gaussian_inversion_overestimates_random_phase_lines() {
        let s = spec(PsdShape::DephasingZ);
        let orders: Vec<usize> = (1..=50).collect();
        let curve = oracle_coherences_as(&s, &orders, NoiseStatistics::RandomPhase).unwrap();
        let at_bump = |statistics| {
            let cfg = InversionConfig {
                statistics,
                ..InversionConfig::full(M)
            };
            invert_as(&curve, &cfg).unwrap().values[39]
        };
        let truth = psd_z(20.0).unwrap();
        let matched = at_bump(NoiseStatistics::RandomPhase);
        let gaussian = at_bump(NoiseStatistics::Gaussian);
        assert!(gaussian > matched, "{gaussian} vs {matched}");
        assert!((matched - truth).abs() < (gaussian - truth).abs(), "{matched} {gaussian} {truth}");
    }

    #[test]
    fn coherence_rises_with_order_for_decreasing_psd() {
        let s = spec(PsdShape::Tone {
            amplitude: 1.0,
            center: 0.0,
            width: 6.0,
        });
        let even: Vec<usize> = (1..=10).map(|k| 2 * k).collect();
        let c = oracle_coherences(&s, &even).unwrap().coherences;
        assert!(c.windows(2).all(|w| w[1] > w[0]), "{c:?}");
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior_and_clips_otherwise() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        let b = DVector::from_column_slice(&[-1.0, 2.0, 1.0]);
        let x = nnls(&a, &b);
        // With x0 clipped at zero the best x1 is the mean of 2 and 1.
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }
}
