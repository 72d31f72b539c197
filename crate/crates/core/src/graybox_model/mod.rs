//! Hybrid model of the noisy qubit.
//!
//! The blackbox half is a recurrent network over the normalised pulse
//! features: one small GRU whose whole output sequence feeds three wider GRUs,
//! one per observable, each followed by a four-unit dense head
//! `(ψ, θ, Δ, sigmoid → μ)`. The whitebox half turns the waveform into the
//! control propagator and combines it with the per-observable noise operator
//! `V_O` to produce the 18 expectation values.

pub mod gru;
pub mod tape;
pub mod whitebox;

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg2::{Axis, Operator2};
use crate::mc_simulator::{initial_state, outcome_index, MeasurementRecord, N_OUTCOMES, OBSERVABLES, PREPARATIONS};
use crate::pulse_lib::{FeatureLayout, Waveform};
use crate::rng::{self, Purpose};

pub use gru::GruDims;
pub use tape::{Adjoints, NodeId, Tape, Value};
pub use whitebox::{construct_vo, measure, whitebox_evolution, whitebox_hamiltonian, VoParams};

pub const CHECKPOINT_FORMAT: &str = "gbq-model";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const HEAD_OUTPUTS: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("μ = {0} is outside [0, 1]")]
    MuOutOfRange(f64),
    #[error("non-physical state: {0}")]
    NonPhysicalState(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Layer sizes. The parameter count follows from these alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub n_max: usize,
    pub initial_hidden: usize,
    pub final_hidden: usize,
}

impl Architecture {
    pub fn for_layout(layout: &FeatureLayout) -> Self {
        Architecture {
            input_dim: layout.width(),
            n_max: layout.n_max,
            initial_hidden: 10,
            final_hidden: 60,
        }
    }

    pub fn initial_dims(&self) -> GruDims {
        GruDims {
            input: self.input_dim,
            hidden: self.initial_hidden,
        }
    }

    pub fn final_dims(&self) -> GruDims {
        GruDims {
            input: self.initial_hidden,
            hidden: self.final_hidden,
        }
    }

    pub fn dense_len(&self) -> usize {
        HEAD_OUTPUTS * self.final_hidden + HEAD_OUTPUTS
    }

    pub fn final_offset(&self, o: usize) -> usize {
        self.initial_dims().len() + o * self.final_dims().len()
    }

    pub fn dense_offset(&self, o: usize) -> usize {
        self.initial_dims().len() + 3 * self.final_dims().len() + o * self.dense_len()
    }

    pub fn param_count(&self) -> usize {
        self.initial_dims().len() + 3 * self.final_dims().len() + 3 * self.dense_len()
    }

    /// `(offset, fan_in, fan_out, is_bias)` for every weight block.
    fn blocks(&self) -> Vec<(usize, usize, usize, bool)> {
        let mut out = Vec::new();
        let mut gru = |base: usize, d: GruDims| {
            for g in 0..3 {
                let w = base + g * d.gate_len();
                let u = w + d.hidden * d.input;
                let b = u + d.hidden * d.hidden;
                out.push((w, d.input, d.hidden, false));
                out.push((u, d.hidden, d.hidden, false));
                out.push((b, 0, d.hidden, true));
            }
        };
        gru(0, self.initial_dims());
        for o in 0..3 {
            gru(self.final_offset(o), self.final_dims());
        }
        for o in 0..3 {
            let base = self.dense_offset(o);
            out.push((base, self.final_hidden, HEAD_OUTPUTS, false));
            out.push((base + HEAD_OUTPUTS * self.final_hidden, 0, HEAD_OUTPUTS, true));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset: String,
    pub iterations: usize,
    pub train_seed: u64,
}

/// Complete trainable model plus the constants it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    pub layout: FeatureLayout,
    pub omega: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub m_model: usize,
    pub init_seed: u64,
    pub params: Vec<f64>,
    pub adam: AdamState,
    pub meta: TrainingMeta,
}

/// Where the control propagator comes from when recording a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum ControlInput<'a> {
    /// Precomputed; no gradient flows into it.
    Unitary(Operator2),
    /// Evolved on the tape, so waveform gradients are available.
    Waveform(&'a Waveform),
}

/// Node ids of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// Stacked `n_max × input_dim` feature leaf.
    pub features: NodeId,
    pub waveform: Option<NodeId>,
    pub unitary: NodeId,
    pub heads: [NodeId; 3],
    pub vo: [NodeId; 3],
    pub outputs: [NodeId; N_OUTCOMES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub outputs: MeasurementRecord,
    pub vo_params: [VoParams; 3],
    pub vo: [Operator2; 3],
    pub control_unitary: Operator2,
}

impl ModelState {
    /// Glorot-uniform weights, zero biases.
    pub fn new(layout: FeatureLayout, omega: f64, m_model: usize, seed: u64) -> Self {
        let mut state = Self::zeroed(layout, omega, m_model);
        state.init_seed = seed;
        let mut rng = rng::stream(Purpose::Init, &[seed]);
        for (offset, fan_in, fan_out, is_bias) in state.arch.blocks() {
            if is_bias {
                continue;
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut state.params[offset..offset + fan_in * fan_out] {
                *v = rng.gen_range(-limit..=limit);
            }
        }
        state
    }

    pub fn zeroed(layout: FeatureLayout, omega: f64, m_model: usize) -> Self {
        let arch = Architecture::for_layout(&layout);
        let n = arch.param_count();
        ModelState {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch,
            total_time: layout.total_time,
            layout,
            omega,
            m_model,
            init_seed: 0,
            params: vec![0.0; n],
            adam: AdamState::new(n),
            meta: TrainingMeta::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.m_model as f64
    }

    pub fn check_features(&self, features: &[Vec<f64>]) -> Result<(), ModelError> {
        if features.len() != self.arch.n_max || features.iter().any(|f| f.len() != self.arch.input_dim) {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} feature vectors of width {}",
                self.arch.n_max, self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn check_waveform(&self, w: &Waveform) -> Result<(), ModelError> {
        if !w.is_consistent(self.m_model) {
            return Err(ModelError::ShapeMismatch(format!(
                "waveform must have {} finite samples per present axis",
                self.m_model
            )));
        }
        Ok(())
    }

    /// Control propagator on the model grid.
    pub fn control_unitary(&self, w: &Waveform) -> Operator2 {
        whitebox_evolution(w, self.omega, self.m_model, self.dt())
    }

    /// Record blackbox, whitebox and measurement layers on `tape`.
    pub fn record(&self, tape: &mut Tape, features: &[Vec<f64>], control: ControlInput<'_>) -> Recorded {
        let a = &self.arch;
        let p = &self.params;
        let feature_id = tape.leaf(Value::Real(features.concat()));
        let sequence = tape.gru_layer(p, a.initial_dims(), 0, feature_id, false);
        let mut heads = [0; 3];
        let mut vo = [0; 3];
        for o in 0..3 {
            let g = tape.gru_layer(p, a.final_dims(), a.final_offset(o), sequence, true);
            let d = tape.dense(p, HEAD_OUTPUTS, a.dense_offset(o), g);
            heads[o] = tape.head(d);
            vo[o] = tape.construct_vo(heads[o], OBSERVABLES[o]);
        }

        let (waveform, unitary) = match control {
            ControlInput::Unitary(u) => (None, tape.leaf(Value::Op(u))),
            ControlInput::Waveform(w) => {
                let m = self.m_model;
                let mut stacked = Vec::with_capacity(3 * m);
                for axis in [Axis::X, Axis::Y, Axis::Z] {
                    stacked.extend((0..m).map(|j| w.sample(axis, j)));
                }
                let wave = tape.leaf(Value::Real(stacked));
                let dt = self.dt();
                let mut u = tape.leaf(Value::Op(Operator2::identity()));
                for j in 0..m {
                    let b = tape.step_components(wave, j, m, self.omega);
                    let e = tape.expm(b, dt);
                    u = tape.matmul(e, u);
                }
                (Some(wave), u)
            }
        };

        let mut outputs = [0; N_OUTCOMES];
        for prep in 0..PREPARATIONS.len() {
            let rho = initial_state(prep);
            for (o, obs) in OBSERVABLES.iter().enumerate() {
                outputs[outcome_index(prep, o)] = tape.measure(vo[o], unitary, rho, *obs);
            }
        }
        Recorded {
            features: feature_id,
            waveform,
            unitary,
            heads,
            vo,
            outputs,
        }
    }

    fn prediction_from(tape: &Tape, rec: &Recorded) -> Prediction {
        let mut outputs = [0.0; N_OUTCOMES];
        for (o, id) in outputs.iter_mut().zip(rec.outputs) {
            *o = tape.value(id).real()[0];
        }
        let params = |id: NodeId| {
            let v = tape.value(id).real();
            VoParams {
                psi: v[0],
                theta: v[1],
                delta: v[2],
                mu: v[3],
            }
        };
        Prediction {
            outputs: MeasurementRecord(outputs),
            vo_params: rec.heads.map(params),
            vo: rec.vo.map(|id| *tape.value(id).op()),
            control_unitary: *tape.value(rec.unitary).op(),
        }
    }

    pub fn predict(&self, features: &[Vec<f64>], w: &Waveform) -> Result<Prediction, ModelError> {
        self.check_waveform(w)?;
        self.predict_with_unitary(features, self.control_unitary(w))
    }

    pub fn predict_with_unitary(&self, features: &[Vec<f64>], u: Operator2) -> Result<Prediction, ModelError> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, features, ControlInput::Unitary(u));
        Ok(Self::prediction_from(&tape, &rec))
    }

    pub fn blackbox_forward(&self, features: &[Vec<f64>]) -> Result<[VoParams; 3], ModelError> {
        Ok(self.predict_with_unitary(features, Operator2::identity())?.vo_params)
    }

    /// Squared-error sum over the 18 outputs; adds `weight·∂(Σ err²)/∂params`
    /// into `grad`.
    pub fn accumulate_gradient(
        &self,
        features: &[Vec<f64>],
        u: Operator2,
        target: &MeasurementRecord,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, features, ControlInput::Unitary(u));
        let mut sse = 0.0;
        let mut seeds = Vec::with_capacity(N_OUTCOMES);
        for (k, id) in rec.outputs.iter().enumerate() {
            let e = tape.value(*id).real()[0] - target.0[k];
            sse += e * e;
            seeds.push((*id, Value::Real(vec![2.0 * weight * e])));
        }
        tape.backward(&self.params, grad, seeds);
        sse
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let s = serde_json::to_string(self).map_err(|e| ModelError::Format(e.to_string()))?;
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = fs::read_to_string(path)?;
        let m: ModelState = serde_json::from_str(&s).map_err(|e| ModelError::Format(e.to_string()))?;
        if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint {} v{}", m.format, m.version)));
        }
        let n = m.arch.param_count();
        if m.params.len() != n || m.adam.m.len() != n || m.adam.v.len() != n {
            return Err(ModelError::Format(format!("expected {n} parameters")));
        }
        Ok(m)
    }
}
