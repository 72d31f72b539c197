//! Gate synthesis through a frozen model.
//!
//! The decision variables are the normalised pulse features the model was
//! trained on. Widths stay at the training width, every pulse of one axis
//! shares one amplitude (the training data only ever scaled whole trains),
//! and each position may move within the training jitter window around its
//! nominal CPMG slot. The objective sums `(F − 1)²` over the three
//! `F(V_O, I)` terms and `F(U_c, G)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::REFERENCE_M;
use crate::graybox_model::tape::{NodeId, Tape, Value};
use crate::graybox_model::{AdamState, ControlInput, ModelError, ModelState};
use crate::linalg2::{fidelity_raw, hadamard, pauli, rotation, Axis, Operator2};
use crate::pulse_lib::{
    discretize, discretize_axis_vjp, standard_width, ControlSequence, Pulse, PulseParams, Waveform, FEATURES_PER_AXIS,
};
use crate::rng::{self, Purpose};
use crate::trainer::{adam_step, TrainConfig};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("target gate is not unitary")]
    NotUnitary,
    #[error("invalid control problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Named target gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Gate {
    #[value(name = "I")]
    I,
    #[value(name = "X")]
    X,
    #[value(name = "Y")]
    Y,
    #[value(name = "Z")]
    Z,
    #[value(name = "H")]
    H,
    #[serde(rename = "RX45")]
    #[value(name = "RX45")]
    Rx45,
}

impl Gate {
    pub const ALL: [Gate; 6] = [Gate::I, Gate::X, Gate::Y, Gate::Z, Gate::H, Gate::Rx45];

    pub fn name(self) -> &'static str {
        match self {
            Gate::I => "I",
            Gate::X => "X",
            Gate::Y => "Y",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::Rx45 => "RX45",
        }
    }

    pub fn unitary(self) -> Operator2 {
        match self {
            Gate::I => Operator2::identity(),
            Gate::X => pauli(Axis::X),
            Gate::Y => pauli(Axis::Y),
            Gate::Z => pauli(Axis::Z),
            Gate::H => hadamard(),
            Gate::Rx45 => rotation(Axis::X, std::f64::consts::FRAC_PI_4),
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gate {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Gate::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ControlError::Invalid(format!("unknown gate {s:?}; expected one of I, X, Y, Z, H, RX45")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    /// Objective below which a run counts as converged.
    pub tolerance: f64,
    /// A restart stops after this many steps without a relative gain of 1e-4.
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 2000,
            learning_rate: 1e-2,
            restarts: 8,
            tolerance: 1e-3,
            patience: 200,
        }
    }
}

/// Pulse family searched by the optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFamily {
    /// Pulse count per layout axis, each in `1..=n_max`.
    pub counts: Vec<usize>,
    pub width: f64,
    /// Half-width of the position window, in pulse widths.
    pub window_sigmas: f64,
}

impl PulseFamily {
    /// Full-length trains at the dataset pulse width.
    pub fn for_model(model: &ModelState) -> Self {
        PulseFamily {
            counts: vec![model.layout.n_max; model.layout.axes.len()],
            width: standard_width(model.total_time, REFERENCE_M),
            window_sigmas: 6.0,
        }
    }
}

pub struct ControlProblem<'a> {
    pub target: Operator2,
    pub model: &'a ModelState,
    pub family: PulseFamily,
    pub optimizer: OptimizerConfig,
    /// Weights of `F(V_X,I)`, `F(V_Y,I)`, `F(V_Z,I)`, `F(U_c,G)`.
    pub weights: [f64; 4],
}

/// Free coordinates: one normalised position per pulse, then one normalised
/// amplitude per axis.
#[derive(Debug, Clone, PartialEq)]
struct Coordinates {
    taus: Vec<Vec<f64>>,
    amps: Vec<f64>,
}

impl Coordinates {
    fn flatten(&self) -> Vec<f64> {
        self.taus.iter().flatten().copied().chain(self.amps.iter().copied()).collect()
    }

    fn unflatten(&self, v: &[f64]) -> Self {
        let mut it = v.iter().copied();
        let taus = self.taus.iter().map(|t| t.iter().map(|_| it.next().unwrap()).collect()).collect();
        let amps = self.amps.iter().map(|_| it.next().unwrap()).collect();
        Coordinates { taus, amps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelities {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub control: f64,
}

impl Fidelities {
    fn from_raw(f: [f64; 4]) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        Fidelities {
            vx: c(f[0]),
            vy: c(f[1]),
            vz: c(f[2]),
            control: c(f[3]),
        }
    }

    pub fn min(&self) -> f64 {
        self.vx.min(self.vy).min(self.vz).min(self.control)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub fidelities: Fidelities,
    /// Gradient with respect to the flattened free coordinates.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub gate: Option<Gate>,
    /// Optimised normalised features, `n_max × width`.
    pub features: Vec<Vec<f64>>,
    pub sequence: ControlSequence,
    pub fidelities: Fidelities,
    pub objective: f64,
    pub converged: bool,
    pub restart: usize,
    /// Objective of the selected restart after each step.
    pub trace: Vec<f64>,
    pub waveform: Waveform,
}

impl<'a> ControlProblem<'a> {
    pub fn new(model: &'a ModelState, target: Operator2) -> Result<Self, ControlError> {
        let p = ControlProblem {
            target,
            model,
            family: PulseFamily::for_model(model),
            optimizer: OptimizerConfig::default(),
            weights: [1.0; 4],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !self.target.is_unitary(1e-10) {
            return Err(ControlError::NotUnitary);
        }
        let l = &self.model.layout;
        let f = &self.family;
        if f.counts.len() != l.axes.len() || f.counts.iter().any(|&n| n == 0 || n > l.n_max) {
            return Err(ControlError::Invalid(format!("pulse counts must be one per axis in 1..={}", l.n_max)));
        }
        if !(f.width > 0.0) || !(f.window_sigmas >= 0.0) {
            return Err(ControlError::Invalid("pulse width must be positive".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(ControlError::Invalid("objective weights must be non-negative".into()));
        }
        Ok(())
    }

    fn nominal_tau(&self, axis: usize, k: usize) -> f64 {
        (k as f64 + 0.5) / self.family.counts[axis] as f64
    }

    /// Box for normalised positions of pulse `k` on axis `axis`.
    fn tau_bounds(&self, axis: usize, k: usize) -> (f64, f64) {
        let half = self.family.window_sigmas * self.family.width / self.model.total_time;
        let c = self.nominal_tau(axis, k);
        ((c - half).max(0.0), (c + half).min(1.0))
    }

    fn project(&self, c: &mut Coordinates) {
        for (a, taus) in c.taus.iter_mut().enumerate() {
            for (k, t) in taus.iter_mut().enumerate() {
                let (lo, hi) = self.tau_bounds(a, k);
                *t = t.clamp(lo, hi);
            }
        }
        for a in &mut c.amps {
            *a = a.clamp(0.0, 1.0);
        }
    }

    fn nominal(&self) -> Coordinates {
        let taus = self
            .family
            .counts
            .iter()
            .enumerate()
            .map(|(a, &n)| (0..n).map(|k| self.nominal_tau(a, k)).collect())
            .collect();
        // A_ref is twice the π amplitude.
        Coordinates {
            taus,
            amps: vec![0.5; self.family.counts.len()],
        }
    }

    fn random_start(&self, seed: u64, restart: u64) -> Coordinates {
        let mut rng = rng::stream(Purpose::Restart, &[seed, restart]);
        let mut c = self.nominal();
        for (a, taus) in c.taus.iter_mut().enumerate() {
            for (k, t) in taus.iter_mut().enumerate() {
                let (lo, hi) = self.tau_bounds(a, k);
                *t = rng.gen_range(lo..=hi);
            }
        }
        for a in &mut c.amps {
            *a = rng.gen_range(0.0..=1.0);
        }
        c
    }

    fn features(&self, c: &Coordinates) -> Vec<Vec<f64>> {
        let l = &self.model.layout;
        let mut out = vec![vec![0.0; l.width()]; l.n_max];
        let width = self.family.width / self.model.total_time;
        for (a, taus) in c.taus.iter().enumerate() {
            for (k, t) in taus.iter().enumerate() {
                let row = &mut out[k][a * FEATURES_PER_AXIS..(a + 1) * FEATURES_PER_AXIS];
                row.copy_from_slice(&[*t, c.amps[a], width]);
            }
        }
        out
    }

    fn sequence(&self, c: &Coordinates) -> ControlSequence {
        let l = &self.model.layout;
        let trains = l
            .axes
            .iter()
            .enumerate()
            .map(|(a, axis)| PulseParams {
                axis: *axis,
                shape: l.shape,
                pulses: c.taus[a]
                    .iter()
                    .map(|t| Pulse {
                        tau: t * l.total_time,
                        amplitude: c.amps[a] * l.a_ref,
                        sigma: self.family.width,
                    })
                    .collect(),
            })
            .collect();
        ControlSequence { trains }
    }

    fn evaluate_at(&self, c: &Coordinates) -> Evaluation {
        let model = self.model;
        let features = self.features(c);
        let seq = self.sequence(c);
        let wave = discretize(&seq, model.total_time, model.m_model);
        let mut tape = Tape::new();
        let rec = model.record(&mut tape, &features, ControlInput::Waveform(&wave));

        // F = |tr(G†M)|²/4 has adjoint (t/2)·G with t = tr(G†M).
        let targets = [Operator2::identity(), Operator2::identity(), Operator2::identity(), self.target];
        let nodes: [NodeId; 4] = [rec.vo[0], rec.vo[1], rec.vo[2], rec.unitary];
        let mut raw = [0.0; 4];
        let mut objective = 0.0;
        let mut seeds = Vec::with_capacity(4);
        for i in 0..4 {
            let m = tape.value(nodes[i]).op();
            let t = (targets[i].dagger() * *m).trace();
            raw[i] = fidelity_raw(&targets[i], m);
            let d = raw[i] - 1.0;
            objective += self.weights[i] * d * d;
            let scale = 2.0 * self.weights[i] * d;
            seeds.push((nodes[i], Value::Op(targets[i].scale(t * (0.5 * scale)))));
        }
        let mut scratch = vec![0.0; model.params.len()];
        let adj = tape.backward(&model.params, &mut scratch, seeds);

        let l = &model.layout;
        let width = l.width();
        let g_feat = adj.real(rec.features).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; l.n_max * width]);
        let g_wave = adj.real(rec.waveform.expect("waveform recorded")).map(<[f64]>::to_vec);
        let m = model.m_model;
        let mut grad = Coordinates {
            taus: c.taus.iter().map(|t| vec![0.0; t.len()]).collect(),
            amps: vec![0.0; c.amps.len()],
        };
        for (a, axis) in l.axes.iter().enumerate() {
            for k in 0..c.taus[a].len() {
                grad.taus[a][k] += g_feat[k * width + a * FEATURES_PER_AXIS];
                grad.amps[a] += g_feat[k * width + a * FEATURES_PER_AXIS + 1];
            }
            if let Some(gw) = &g_wave {
                let slice = &gw[axis.index() * m..(axis.index() + 1) * m];
                let train = seq.train(*axis).expect("axis present");
                for (k, (d_tau, d_amp)) in discretize_axis_vjp(train, l.total_time, m, slice).into_iter().enumerate() {
                    grad.taus[a][k] += d_tau * l.total_time;
                    grad.amps[a] += d_amp * l.a_ref;
                }
            }
        }
        Evaluation {
            objective,
            fidelities: Fidelities::from_raw(raw),
            gradient: grad.flatten(),
        }
    }

    /// Objective and gradient at normalised features `alpha` (`n_max × width`).
    /// Positions are read from the active slots; amplitudes from the first
    /// pulse of each axis.
    pub fn control_objective(&self, alpha: &[Vec<f64>]) -> Result<Evaluation, ControlError> {
        self.model.check_features(alpha)?;
        let c = self.coordinates_from_features(alpha)?;
        Ok(self.evaluate_at(&c))
    }

    fn coordinates_from_features(&self, alpha: &[Vec<f64>]) -> Result<Coordinates, ControlError> {
        let mut c = self.nominal();
        for (a, taus) in c.taus.iter_mut().enumerate() {
            for (k, t) in taus.iter_mut().enumerate() {
                *t = alpha[k][a * FEATURES_PER_AXIS];
            }
            c.amps[a] = alpha[0][a * FEATURES_PER_AXIS + 1];
        }
        let mut projected = c.clone();
        self.project(&mut projected);
        if projected != c {
            return Err(ControlError::Invalid("features outside the trusted box".into()));
        }
        Ok(c)
    }

    fn run(&self, start: Coordinates) -> (Coordinates, Evaluation, Vec<f64>) {
        let cfg = TrainConfig {
            learning_rate: self.optimizer.learning_rate,
            ..TrainConfig::default()
        };
        let mut c = start;
        self.project(&mut c);
        let mut x = c.flatten();
        let mut state = AdamState::new(x.len());
        let mut best = (c.clone(), self.evaluate_at(&c));
        let mut trace = Vec::with_capacity(self.optimizer.steps);
        let mut current = best.1.clone();
        let mut since_best = 0;
        for _ in 0..self.optimizer.steps {
            if since_best >= self.optimizer.patience {
                break;
            }
            adam_step(&mut x, &current.gradient, &mut state, &cfg);
            let mut next = c.unflatten(&x);
            self.project(&mut next);
            x = next.flatten();
            c = next;
            current = self.evaluate_at(&c);
            trace.push(current.objective);
            // Gains below one part in 10⁴ do not reset the stall count.
            if current.objective < best.1.objective * (1.0 - 1e-4) {
                since_best = 0;
            } else {
                since_best += 1;
            }
            if current.objective < best.1.objective {
                best = (c.clone(), current.clone());
            }
        }
        (best.0, best.1, trace)
    }

    /// Multi-start Adam with box projection. Restart 0 starts from the
    /// nominal CPMG trains; the rest from seeded draws inside the box.
    pub fn optimize(&self, seed: u64) -> Result<ControlResult, ControlError> {
        self.validate()?;
        let runs: Vec<_> = (0..self.optimizer.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let start = if r == 0 { self.nominal() } else { self.random_start(seed, r as u64) };
                self.run(start)
            })
            .collect();
        let mut chosen = 0;
        for (i, run) in runs.iter().enumerate() {
            if run.1.objective < runs[chosen].1.objective {
                chosen = i;
            }
        }
        let (c, eval, trace) = runs.into_iter().nth(chosen).expect("at least one restart");
        let sequence = self.sequence(&c);
        let waveform = discretize(&sequence, self.model.total_time, self.model.m_model);
        Ok(ControlResult {
            gate: None,
            features: self.features(&c),
            sequence,
            fidelities: eval.fidelities,
            objective: eval.objective,
            converged: eval.objective < self.optimizer.tolerance,
            restart: chosen,
            trace,
            waveform,
        })
    }
}

/// Optimise a named gate with default settings.
pub fn optimize_control(model: &ModelState, gate: Gate, seed: u64) -> Result<ControlResult, ControlError> {
    let problem = ControlProblem::new(model, gate.unitary())?;
    let mut result = problem.optimize(seed)?;
    result.gate = Some(gate);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graybox_model::whitebox::VoParams;
    use crate::pulse_lib::{FeatureLayout, PulseShape};

    const T: f64 = 1.0;
    const M: usize = 1024;

    fn layout(axes: Vec<Axis>, n_max: usize) -> FeatureLayout {
        let sigma = standard_width(T, REFERENCE_M);
        FeatureLayout {
            axes,
            shape: PulseShape::Gaussian,
            n_max,
            total_time: T,
            a_ref: 2.0 * PulseShape::Gaussian.pi_amplitude(sigma),
        }
    }

    /// A model whose heads emit the identity parameters for every input:
    /// all weights zero, dense biases set to the identity head values.
    fn noiseless_model(axes: Vec<Axis>, n_max: usize, omega: f64) -> ModelState {
        let mut s = ModelState::zeroed(layout(axes, n_max), omega, M);
        for o in 0..3 {
            let p = VoParams::identity_for(crate::mc_simulator::OBSERVABLES[o]);
            let bias = s.arch.dense_offset(o) + 4 * s.arch.final_hidden;
            // μ passes through a sigmoid; a large logit gives μ ≈ 1.
            s.params[bias..bias + 4].copy_from_slice(&[p.psi, p.theta, p.delta, 40.0]);
        }
        s
    }

    #[test]
    fn gate_names_round_trip() {
        for g in Gate::ALL {
            assert_eq!(g.name().parse::<Gate>().unwrap(), g);
            assert!(g.unitary().is_unitary(1e-12));
        }
        assert!("T".parse::<Gate>().is_err());
    }

    #[test]
    fn rejects_non_unitary_target() {
        let m = noiseless_model(vec![Axis::X], 2, 0.0);
        assert!(matches!(
            ControlProblem::new(&m, Operator2::identity().scale_re(2.0)),
            Err(ControlError::NotUnitary)
        ));
    }

    #[test]
    fn exact_realisation_has_zero_objective() {
        // No drift and two π pulses on X compose to −I, which is I up to phase.
        let m = noiseless_model(vec![Axis::X], 2, 0.0);
        let p = ControlProblem::new(&m, Operator2::identity()).unwrap();
        let e = p.evaluate_at(&p.nominal());
        assert!(e.objective < 1e-6, "{}", e.objective);
        assert!(e.fidelities.min() > 1.0 - 1e-3);
    }

    #[test]
    fn objective_is_phase_invariant_in_target() {
        let m = noiseless_model(vec![Axis::X, Axis::Y], 3, 10.0);
        let g = hadamard();
        let a = ControlProblem::new(&m, g).unwrap();
        let b = ControlProblem::new(&m, g.scale(num_complex::Complex64::from_polar(1.0, 0.7))).unwrap();
        let c = a.random_start(1, 1);
        assert!((a.evaluate_at(&c).objective - b.evaluate_at(&c).objective).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = ModelState::new(layout(vec![Axis::X, Axis::Y], 3), 10.0, M, 5);
        // Keep μ away from the sigmoid tails so every term contributes.
        for o in 0..3 {
            let bias = m.arch.dense_offset(o) + 4 * m.arch.final_hidden;
            m.params[bias + 3] = 1.0;
        }
        let p = ControlProblem::new(&m, rotation(Axis::X, 1.0)).unwrap();
        let c = p.random_start(3, 2);
        let e = p.evaluate_at(&c);
        let x = c.flatten();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (p.evaluate_at(&c.unflatten(&a)).objective - p.evaluate_at(&c.unflatten(&b)).objective) / (2.0 * h);
            let err = (fd - e.gradient[i]).abs() / fd.abs().max(1e-6);
            assert!(err < 1e-4, "coordinate {i}: {} vs {fd}", e.gradient[i]);
        }
    }

    #[test]
    fn optimisation_reaches_x_gate_and_leaves_model_untouched() {
        let m = noiseless_model(vec![Axis::X, Axis::Y], 2, 0.0);
        let before: Vec<u64> = m.params.iter().map(|v| v.to_bits()).collect();
        let mut p = ControlProblem::new(&m, pauli(Axis::X)).unwrap();
        p.optimizer.steps = 300;
        p.optimizer.restarts = 3;
        let r = p.optimize(11).unwrap();
        assert!(r.fidelities.control > 0.999, "{:?}", r.fidelities);
        assert!(r.features.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let after: Vec<u64> = m.params.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        let again = p.optimize(11).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn restarts_stop_once_the_objective_stalls() {
        let m = noiseless_model(vec![Axis::X, Axis::Y], 2, 0.0);
        let mut p = ControlProblem::new(&m, pauli(Axis::X)).unwrap();
        p.optimizer.restarts = 1;
        p.optimizer.patience = 5;
        let r = p.optimize(3).unwrap();
        assert!(r.trace.len() < p.optimizer.steps, "{}", r.trace.len());
    }

    #[test]
    fn features_round_trip_through_coordinates() {
        let m = noiseless_model(vec![Axis::X, Axis::Y], 4, 10.0);
        let p = ControlProblem::new(&m, Operator2::identity()).unwrap();
        let c = p.random_start(9, 4);
        let f = p.features(&c);
        assert_eq!(p.coordinates_from_features(&f).unwrap(), c);
        let e = p.control_objective(&f).unwrap();
        assert_eq!(e, p.evaluate_at(&c));
        let mut bad = f.clone();
        bad[0][1] = 1.5;
        assert!(p.control_objective(&bad).is_err());
    }
}
