//! Python bindings: simulation, datasets, training, prediction, control and
//! spectroscopy. Pulse sequences cross the boundary as JSON strings in the
//! same format the command line reads.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gbq::controller::{ControlProblem, Gate};
use gbq::dataset::{generate_dataset, split_paths, Dataset, DatasetId, GenerationOptions, Scale};
use gbq::graybox_model::whitebox::{construct_vo, VoParams};
use gbq::graybox_model::ModelState;
use gbq::linalg2::{Axis, Operator2};
use gbq::mc_simulator::{outcome_labels, NoiseModel, SimulationConfig, Simulator};
use gbq::noise_gen::{psd_x, psd_z};
use gbq::pulse_lib::{discretize, ControlSequence, Waveform};
use gbq::spectroscopy::{invert_as, predict_coherences, InversionConfig};
use gbq::trainer::{summarize, train, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_scale(s: &str) -> PyResult<Scale> {
    match s {
        "desk" => Ok(Scale::Desk),
        "paper" => Ok(Scale::Paper),
        _ => Err(value_err(format!("scale must be 'desk' or 'paper', got {s:?}"))),
    }
}

fn parse_noise(s: &str) -> PyResult<NoiseModel> {
    match s {
        "none" => Ok(NoiseModel::none()),
        "dephasing" => Ok(NoiseModel::dephasing()),
        "transverse" => Ok(NoiseModel {
            x: Some(gbq::noise_gen::PsdShape::TransverseX),
            z: Some(gbq::noise_gen::PsdShape::DephasingZ),
            ..Default::default()
        }),
        _ => Err(value_err(format!("noise must be none, dephasing or transverse, got {s:?}"))),
    }
}

fn parse_sequence(json: &str) -> PyResult<ControlSequence> {
    serde_json::from_str(json).map_err(value_err)
}

fn parse_axis(s: &str) -> PyResult<Axis> {
    match s {
        "X" | "x" => Ok(Axis::X),
        "Y" | "y" => Ok(Axis::Y),
        "Z" | "z" => Ok(Axis::Z),
        _ => Err(value_err(format!("observable must be X, Y or Z, got {s:?}"))),
    }
}

type Matrix = Vec<Vec<(f64, f64)>>;

fn matrix(o: &Operator2) -> Matrix {
    (0..2)
        .map(|r| (0..2).map(|c| (o.m[2 * r + c].re, o.m[2 * r + c].im)).collect())
        .collect()
}

/// Labels of the 18 outputs, preparation-major.
#[pyfunction]
fn output_labels() -> Vec<String> {
    outcome_labels()
}

/// Dephasing and transverse noise PSDs.
#[pyfunction]
fn psd(axis: &str, f: f64) -> PyResult<f64> {
    match axis {
        "z" | "Z" => psd_z(f),
        "x" | "X" => psd_x(f),
        _ => return Err(value_err("axis must be 'x' or 'z'")),
    }
    .map_err(value_err)
}

/// `V_O` for head parameters `(ψ, θ, Δ, μ)` and observable `O`.
#[pyfunction]
fn vo_operator(psi: f64, theta: f64, delta: f64, mu: f64, observable: &str) -> PyResult<Matrix> {
    let v = construct_vo(&VoParams { psi, theta, delta, mu }, parse_axis(observable)?).map_err(value_err)?;
    Ok(matrix(&v))
}

/// Monte Carlo expectations; free evolution when `pulses` is None.
#[pyfunction]
#[pyo3(signature = (pulses=None, noise="none", scale="desk", seed=0, k=None, m=None))]
fn simulate(
    pulses: Option<&str>,
    noise: &str,
    scale: &str,
    seed: u64,
    k: Option<usize>,
    m: Option<usize>,
) -> PyResult<Vec<f64>> {
    let mut cfg: SimulationConfig = parse_scale(scale)?.simulation(parse_noise(noise)?);
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(m) = m {
        cfg.m = m;
    }
    let wave = match pulses {
        None => Waveform::zeros(),
        Some(json) => discretize(&parse_sequence(json)?, cfg.total_time, cfg.m),
    };
    let sim = Simulator::new(cfg).map_err(value_err)?;
    Ok(sim.simulate(&wave, seed).map_err(runtime_err)?.0.to_vec())
}

/// Write `<name>_train.jsonl` and `<name>_test.jsonl` into `out_dir`.
#[pyfunction]
#[pyo3(signature = (name, out_dir, scale="desk", seed=0, instances=None, k=None, m=None))]
fn generate(
    name: &str,
    out_dir: PathBuf,
    scale: &str,
    seed: u64,
    instances: Option<usize>,
    k: Option<usize>,
    m: Option<usize>,
) -> PyResult<(PathBuf, PathBuf)> {
    let id: DatasetId = name.parse().map_err(value_err)?;
    let opts = GenerationOptions {
        scale: parse_scale(scale)?,
        seed,
        instances,
        k,
        m,
    };
    let (tr, te) = generate_dataset(id, &opts).map_err(runtime_err)?;
    std::fs::create_dir_all(&out_dir).map_err(runtime_err)?;
    let (tp, ep) = split_paths(&out_dir, id.name());
    tr.write_jsonl(&tp).map_err(runtime_err)?;
    te.write_jsonl(&ep).map_err(runtime_err)?;
    Ok((tp, ep))
}

/// A trained (or freshly initialised) model checkpoint.
#[pyclass(module = "pygbq")]
struct Model {
    state: ModelState,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            state: ModelState::load(&path).map_err(value_err)?,
        })
    }

    /// Train on `train_path` (optionally scoring `test_path`); returns
    /// `(model, train_mse, test_mse)`.
    #[staticmethod]
    #[pyo3(signature = (train_path, test_path=None, iterations=3000, learning_rate=1e-3, final_learning_rate=1e-5, seed=0))]
    fn fit(
        train_path: PathBuf,
        test_path: Option<PathBuf>,
        iterations: u64,
        learning_rate: f64,
        final_learning_rate: f64,
        seed: u64,
    ) -> PyResult<(Self, f64, Option<f64>)> {
        let tr = Dataset::read_jsonl(&train_path).map_err(value_err)?;
        let te = test_path.map(|p| Dataset::read_jsonl(&p)).transpose().map_err(value_err)?;
        let init = ModelState::new(tr.header.layout.clone(), tr.header.config.omega, tr.header.config.m, seed);
        let cfg = TrainConfig {
            iterations,
            learning_rate,
            final_learning_rate: Some(final_learning_rate),
            seed,
            ..TrainConfig::default()
        };
        let (state, _) = train(init, &tr, te.as_ref(), &cfg, |_, _| {}).map_err(runtime_err)?;
        let s = summarize(&state, &tr, te.as_ref()).map_err(runtime_err)?;
        Ok((Model { state }, s.train_mse, s.test_mse))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save(&path).map_err(runtime_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.state.params.len()
    }

    /// The 18 predicted expectations for a JSON pulse sequence.
    fn predict(&self, pulses: &str) -> PyResult<Vec<f64>> {
        let s = &self.state;
        let seq = parse_sequence(pulses)?;
        let w = discretize(&seq, s.total_time, s.m_model);
        let p = s.predict(&s.layout.normalize(&seq), &w).map_err(value_err)?;
        Ok(p.outputs.0.to_vec())
    }

    /// `[(ψ, θ, Δ, μ, matrix)]` for `V_X`, `V_Y`, `V_Z`.
    fn extract_vo(&self, pulses: &str) -> PyResult<Vec<(f64, f64, f64, f64, Matrix)>> {
        let s = &self.state;
        let seq = parse_sequence(pulses)?;
        let w = discretize(&seq, s.total_time, s.m_model);
        let p = s.predict(&s.layout.normalize(&seq), &w).map_err(value_err)?;
        Ok(p.vo_params.iter().zip(&p.vo).map(|(q, v)| (q.psi, q.theta, q.delta, q.mu, matrix(v))).collect())
    }

    /// Optimise pulses for `gate`; returns the four fidelities and the
    /// optimised sequence as JSON.
    #[pyo3(signature = (gate, seed=0, steps=2000, restarts=8))]
    fn optimize_control(&self, gate: &str, seed: u64, steps: usize, restarts: usize) -> PyResult<((f64, f64, f64, f64), String)> {
        let g: Gate = gate.parse().map_err(value_err)?;
        let mut problem = ControlProblem::new(&self.state, g.unitary()).map_err(value_err)?;
        problem.optimizer.steps = steps;
        problem.optimizer.restarts = restarts;
        let r = problem.optimize(seed).map_err(runtime_err)?;
        let f = r.fidelities;
        let seq = serde_json::to_string(&r.sequence).map_err(runtime_err)?;
        Ok(((f.vx, f.vy, f.vz, f.control), seq))
    }

    /// `(frequencies, estimates)` from model-predicted CPMG coherences.
    #[pyo3(signature = (orders, full=true))]
    fn estimate_spectrum(&self, orders: Vec<usize>, full: bool) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let curve = predict_coherences(&self.state, &orders).map_err(value_err)?;
        let cfg = if full {
            InversionConfig::full(self.state.m_model)
        } else {
            InversionConfig::harmonic()
        };
        let est = invert_as(&curve, &cfg).map_err(runtime_err)?;
        Ok((est.frequencies, est.values))
    }
}

#[pymodule]
fn pygbq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(output_labels, m)?)?;
    m.add_function(wrap_pyfunction!(psd, m)?)?;
    m.add_function(wrap_pyfunction!(vo_operator, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
