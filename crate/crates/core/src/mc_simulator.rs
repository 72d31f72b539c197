//! Monte Carlo simulation of a driven qubit under classical noise.
//!
//! Every realization draws one noise trace per noisy axis, assembles the
//! piecewise-constant Hamiltonian
//! `½(Ω + β_z + f_z)σ_z + ½(f_x + β_x)σ_x + ½(f_y + β_y)σ_y` on the midpoint
//! grid and multiplies the step propagators in time order. The 18
//! prepare/measure outcomes of one realization are the signed entries of the
//! Bloch rotation of `U`, so all configurations share the same realizations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg2::{expm_hermitian, expm_pauli, pauli, Axis, LinalgError, Operator2};
use crate::noise_gen::{generate_noise_with, NoiseError, PsdShape, PsdSpec};
use crate::pulse_lib::Waveform;
use crate::rng::{self, Purpose};
use crate::util::{linear_slope, pairwise_sum_rows};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("waveform has wrong length or non-finite samples for M = {0}")]
    BadWaveform(usize),
}

/// Noise PSD per axis; absent axes are noiseless.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<PsdShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<PsdShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<PsdShape>,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dephasing() -> Self {
        NoiseModel {
            z: Some(PsdShape::DephasingZ),
            ..Default::default()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.x.is_none() && self.y.is_none() && self.z.is_none()
    }

    fn entries(&self) -> impl Iterator<Item = (Axis, &PsdShape)> {
        [(Axis::X, &self.x), (Axis::Y, &self.y), (Axis::Z, &self.z)]
            .into_iter()
            .filter_map(|(a, s)| s.as_ref().map(|s| (a, s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(rename = "T")]
    pub total_time: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub omega: f64,
    pub noise: NoiseModel,
}

impl SimulationConfig {
    /// Full-size grid: `M = 4096`, `K = 1000`.
    pub fn paper(noise: NoiseModel) -> Self {
        SimulationConfig {
            total_time: 1.0,
            m: 4096,
            k: 1000,
            omega: 10.0,
            noise,
        }
    }

    /// Reduced grid for quick runs: `M = 1024`, `K = 200`.
    pub fn desk(noise: NoiseModel) -> Self {
        SimulationConfig {
            m: 1024,
            k: 200,
            ..Self::paper(noise)
        }
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.m as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(SimError::InvalidConfig(format!("T = {}", self.total_time)));
        }
        if self.m < 2 || !self.m.is_power_of_two() {
            return Err(SimError::InvalidConfig(format!("M = {} is not a power of two", self.m)));
        }
        if self.k == 0 {
            return Err(SimError::InvalidConfig("K must be at least 1".into()));
        }
        if !self.omega.is_finite() {
            return Err(SimError::InvalidConfig("Ω must be finite".into()));
        }
        Ok(())
    }
}

/// Number of prepare/measure outcomes.
pub const N_OUTCOMES: usize = 18;

/// Preparations in output order: `X+, X−, Y+, Y−, Z+, Z−`.
pub const PREPARATIONS: [(Axis, f64); 6] = [
    (Axis::X, 1.0),
    (Axis::X, -1.0),
    (Axis::Y, 1.0),
    (Axis::Y, -1.0),
    (Axis::Z, 1.0),
    (Axis::Z, -1.0),
];

pub const OBSERVABLES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// Position of `(preparation, observable)` in a record.
#[inline]
pub fn outcome_index(prep: usize, obs: usize) -> usize {
    prep * 3 + obs
}

/// `(I ± σ)/2`.
pub fn initial_state(prep: usize) -> Operator2 {
    let (axis, sign) = PREPARATIONS[prep];
    (Operator2::identity() + pauli(axis).scale_re(sign)).scale_re(0.5)
}

pub fn outcome_labels() -> Vec<String> {
    let mut out = Vec::with_capacity(N_OUTCOMES);
    for (axis, sign) in PREPARATIONS {
        for o in OBSERVABLES {
            out.push(format!("{}{}:{}", axis.name(), if sign > 0.0 { "+" } else { "-" }, o.name()));
        }
    }
    out
}

/// Averaged expectation values for the 18 configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementRecord(pub [f64; N_OUTCOMES]);

impl MeasurementRecord {
    pub fn get(&self, prep: usize, obs: usize) -> f64 {
        self.0[outcome_index(prep, obs)]
    }

    /// Expand a Bloch rotation `R_ab = ½ tr(σ_b U σ_a U†)` into the record.
    pub fn from_rotation(r: &[f64; 9]) -> Self {
        let mut out = [0.0; N_OUTCOMES];
        for (p, (axis, sign)) in PREPARATIONS.iter().enumerate() {
            for o in 0..3 {
                out[outcome_index(p, o)] = sign * r[axis.index() * 3 + o];
            }
        }
        MeasurementRecord(out)
    }

    pub fn from_unitary(u: &Operator2) -> Self {
        Self::from_rotation(&bloch_rotation(u))
    }
}

/// `R_ab = ½ Re tr(σ_b U σ_a U†)`, row-major in `a`.
pub fn bloch_rotation(u: &Operator2) -> [f64; 9] {
    let ud = u.dagger();
    let mut r = [0.0; 9];
    for a in 0..3 {
        let conj = *u * pauli(OBSERVABLES[a]) * ud;
        for b in 0..3 {
            r[a * 3 + b] = 0.5 * (pauli(OBSERVABLES[b]) * conj).trace().re;
        }
    }
    r
}

/// Time-ordered product `Π_{j=M−1..0} exp(−i·H_j·dt)`.
pub fn evolve(hs: &[Operator2], dt: f64) -> Result<Operator2, LinalgError> {
    let mut u = Operator2::identity();
    for h in hs {
        u = expm_hermitian(h, dt)? * u;
    }
    Ok(u)
}

/// Pauli components of the step Hamiltonian at sample `j`.
#[inline]
pub fn step_components(omega: f64, fx: f64, fy: f64, fz: f64, bx: f64, by: f64, bz: f64) -> [f64; 3] {
    [0.5 * (fx + bx), 0.5 * (fy + by), 0.5 * (omega + bz + fz)]
}

/// Closed-loop evolution for explicit noise traces; empty slices mean zero.
pub fn evolve_waveform(cfg: &SimulationConfig, wave: &Waveform, noise: [&[f64]; 3]) -> Operator2 {
    let dt = cfg.dt();
    let at = |v: &[f64], j: usize| v.get(j).copied().unwrap_or(0.0);
    let mut u = Operator2::identity();
    for j in 0..cfg.m {
        let b = step_components(
            cfg.omega,
            wave.sample(Axis::X, j),
            wave.sample(Axis::Y, j),
            wave.sample(Axis::Z, j),
            at(noise[0], j),
            at(noise[1], j),
            at(noise[2], j),
        );
        u = expm_pauli(0.0, b, dt) * u;
    }
    u
}

/// Control-only (noise-free) propagator.
pub fn control_unitary(cfg: &SimulationConfig, wave: &Waveform) -> Operator2 {
    evolve_waveform(cfg, wave, [&[], &[], &[]])
}

/// A configured simulator with its PSD grids precomputed.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimulationConfig,
    specs: Vec<PsdSpec>,
}

impl Simulator {
    pub fn new(cfg: SimulationConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let specs = cfg
            .noise
            .entries()
            .map(|(axis, shape)| PsdSpec::from_shape(axis, shape, cfg.total_time, cfg.m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Simulator { cfg, specs })
    }

    pub fn with_specs(cfg: SimulationConfig, specs: Vec<PsdSpec>) -> Result<Self, SimError> {
        cfg.validate()?;
        for s in &specs {
            s.validate()?;
            if s.m != cfg.m || s.total_time != cfg.total_time {
                return Err(SimError::InvalidConfig("PSD grid does not match T/M".into()));
            }
        }
        Ok(Simulator { cfg, specs })
    }

    pub fn is_noiseless(&self) -> bool {
        self.specs.iter().all(|s| s.is_zero())
    }

    /// Bloch rotation of realization `k` under noise stream `seed`.
    pub fn realization(&self, wave: &Waveform, seed: u64, k: u64) -> Result<[f64; 9], SimError> {
        let mut traces: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for spec in &self.specs {
            let mut rng = rng::stream(Purpose::Noise, &[seed, k, spec.axis.index() as u64]);
            traces[spec.axis.index()] = generate_noise_with(spec, k, &mut rng)?.samples;
        }
        let u = evolve_waveform(&self.cfg, wave, [&traces[0], &traces[1], &traces[2]]);
        Ok(bloch_rotation(&u))
    }

    /// Rotations for realizations `range`, in order.
    pub fn realizations(&self, wave: &Waveform, seed: u64, range: std::ops::Range<u64>) -> Result<Vec<[f64; 9]>, SimError> {
        if !wave.is_consistent(self.cfg.m) {
            return Err(SimError::BadWaveform(self.cfg.m));
        }
        range
            .into_par_iter()
            .map(|k| self.realization(wave, seed, k))
            .collect()
    }

    /// Average over `K` realizations. Noiseless configurations run a single
    /// deterministic realization.
    pub fn simulate(&self, wave: &Waveform, seed: u64) -> Result<MeasurementRecord, SimError> {
        let k = if self.is_noiseless() { 1 } else { self.cfg.k };
        let rows = self.realizations(wave, seed, 0..k as u64)?;
        Ok(MeasurementRecord::from_rotation(&mean_rotation(&rows)))
    }

    /// Nested-prefix study: for each `K` in `k_grid`, compare the mean over the
    /// first `K` realizations with the mean over the first `K/2`.
    pub fn convergence_study(&self, wave: &Waveform, seed: u64, k_grid: &[usize]) -> Result<ConvergenceStudy, SimError> {
        let k_max = k_grid.iter().copied().max().unwrap_or(0);
        if k_grid.iter().any(|k| *k < 2) {
            return Err(SimError::InvalidConfig("convergence grid needs K ≥ 2".into()));
        }
        let rows = self.realizations(wave, seed, 0..k_max as u64)?;
        let mut grid: Vec<usize> = k_grid.to_vec();
        grid.sort_unstable();
        grid.dedup();
        let points = grid
            .iter()
            .map(|&k| {
                let full = MeasurementRecord::from_rotation(&mean_rotation(&rows[..k]));
                let half = MeasurementRecord::from_rotation(&mean_rotation(&rows[..k / 2]));
                let drift: Vec<f64> = full.0.iter().zip(half.0.iter()).map(|(a, b)| (a - b).abs()).collect();
                let rms = (drift.iter().map(|d| d * d).sum::<f64>() / drift.len() as f64).sqrt();
                let max = drift.iter().copied().fold(0.0, f64::max);
                ConvergencePoint {
                    k,
                    record: full,
                    drift,
                    rms_drift: rms,
                    max_drift: max,
                }
            })
            .collect::<Vec<_>>();
        let slope = if points.len() >= 2 && points.iter().all(|p| p.rms_drift > 0.0) {
            let xs: Vec<f64> = points.iter().map(|p| (p.k as f64).ln()).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.rms_drift.ln()).collect();
            Some(linear_slope(&xs, &ys))
        } else {
            None
        };
        Ok(ConvergenceStudy { points, slope })
    }
}

pub fn mean_rotation(rows: &[[f64; 9]]) -> [f64; 9] {
    let mut s = pairwise_sum_rows(rows);
    let n = rows.len() as f64;
    for v in &mut s {
        *v /= n;
    }
    s
}

/// One-shot convenience wrapper.
pub fn simulate(cfg: &SimulationConfig, wave: &Waveform, seed: u64) -> Result<MeasurementRecord, SimError> {
    Simulator::new(cfg.clone())?.simulate(wave, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergencePoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub record: MeasurementRecord,
    /// `|mean_K − mean_{K/2}|` per outcome.
    pub drift: Vec<f64>,
    pub rms_drift: f64,
    pub max_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub points: Vec<ConvergencePoint>,
    /// Fitted log-log slope of the RMS drift against `K`.
    pub slope: Option<f64>,
}
