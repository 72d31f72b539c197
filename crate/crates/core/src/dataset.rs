//! Named training datasets, their generation and JSON-lines storage.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg2::Axis;
use crate::mc_simulator::{outcome_labels, MeasurementRecord, NoiseModel, SimError, SimulationConfig, Simulator};
use crate::noise_gen::PsdShape;
use crate::pulse_lib::{
    cpmg_gaussian, cpmg_square, discretize, randomize, standard_width, ControlSequence, FeatureLayout, PulseError,
    PulseParams, PulseShape, RandomizationConfig, Waveform,
};
use crate::rng::{self, Purpose};

pub const FORMAT_NAME: &str = "gbq-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Grid on which pulse widths are defined, independent of the simulation `M`.
pub const REFERENCE_M: usize = 4096;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown dataset '{0}'; valid names: {valid}", valid = valid_names())]
    UnknownDataset(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file {path}, line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

fn valid_names() -> String {
    DatasetId::ALL.iter().map(|d| d.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "CPMG_G_X_28")]
    CpmgGX28,
    #[serde(rename = "CPMG_S_X_28")]
    CpmgSX28,
    #[serde(rename = "CPMG_G_XY_7")]
    CpmgGXY7,
    #[serde(rename = "CPMG_G_XY_pi_7")]
    CpmgGXYPi7,
    #[serde(rename = "CPMG_G_XY_7_nl")]
    CpmgGXY7Nl,
    #[serde(rename = "CPMG_G_XY_pi_7_nl")]
    CpmgGXYPi7Nl,
}

impl DatasetId {
    pub const ALL: [DatasetId; 6] = [
        DatasetId::CpmgGX28,
        DatasetId::CpmgSX28,
        DatasetId::CpmgGXY7,
        DatasetId::CpmgGXYPi7,
        DatasetId::CpmgGXY7Nl,
        DatasetId::CpmgGXYPi7Nl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::CpmgGX28 => "CPMG_G_X_28",
            DatasetId::CpmgSX28 => "CPMG_S_X_28",
            DatasetId::CpmgGXY7 => "CPMG_G_XY_7",
            DatasetId::CpmgGXYPi7 => "CPMG_G_XY_pi_7",
            DatasetId::CpmgGXY7Nl => "CPMG_G_XY_7_nl",
            DatasetId::CpmgGXYPi7Nl => "CPMG_G_XY_pi_7_nl",
        }
    }

    pub fn recipe(self) -> Recipe {
        let single = |shape| Recipe {
            shape,
            axes: vec![Axis::X],
            noise: NoiseModel::dephasing(),
            configurations: (1..=28).map(|n| vec![n]).collect(),
            n_max: 28,
            randomization: RandomizationConfig::default(),
        };
        let two_axis = |noisy: bool, power: bool| Recipe {
            shape: PulseShape::Gaussian,
            axes: vec![Axis::X, Axis::Y],
            noise: if noisy {
                NoiseModel {
                    x: Some(PsdShape::TransverseX),
                    z: Some(PsdShape::DephasingZ),
                    ..Default::default()
                }
            } else {
                NoiseModel::none()
            },
            configurations: (1..=7).flat_map(|nx| (1..=7).map(move |ny| vec![nx, ny])).collect(),
            n_max: 7,
            randomization: RandomizationConfig {
                randomize_power: power,
                ..Default::default()
            },
        };
        match self {
            DatasetId::CpmgGX28 => single(PulseShape::Gaussian),
            DatasetId::CpmgSX28 => single(PulseShape::Square),
            DatasetId::CpmgGXY7 => two_axis(true, true),
            DatasetId::CpmgGXYPi7 => two_axis(true, false),
            DatasetId::CpmgGXY7Nl => two_axis(false, true),
            DatasetId::CpmgGXYPi7Nl => two_axis(false, false),
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| DatasetError::UnknownDataset(s.to_string()))
    }
}

/// Everything needed to draw the pulse sequences of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub shape: PulseShape,
    pub axes: Vec<Axis>,
    pub noise: NoiseModel,
    /// CPMG order per controlled axis, one entry per configuration.
    pub configurations: Vec<Vec<usize>>,
    pub n_max: usize,
    pub randomization: RandomizationConfig,
}

impl Recipe {
    pub fn pulse_width(&self, total_time: f64) -> f64 {
        standard_width(total_time, REFERENCE_M)
    }

    /// Amplitude normaliser: twice the nominal π-pulse amplitude.
    pub fn a_ref(&self, total_time: f64) -> f64 {
        2.0 * self.shape.pi_amplitude(self.pulse_width(total_time))
    }

    pub fn layout(&self, total_time: f64) -> FeatureLayout {
        FeatureLayout {
            axes: self.axes.clone(),
            shape: self.shape,
            n_max: self.n_max,
            total_time,
            a_ref: self.a_ref(total_time),
        }
    }

    /// Nominal (unrandomised) sequence for one configuration.
    pub fn nominal(&self, orders: &[usize], total_time: f64) -> Result<ControlSequence, PulseError> {
        let trains = self
            .axes
            .iter()
            .zip(orders)
            .map(|(axis, &n)| match self.shape {
                PulseShape::Gaussian => cpmg_gaussian(*axis, n, total_time, REFERENCE_M),
                PulseShape::Square => cpmg_square(*axis, n, total_time, REFERENCE_M),
            })
            .collect::<Result<Vec<PulseParams>, _>>()?;
        Ok(ControlSequence { trains })
    }

    /// Randomised sequence for example `index`.
    pub fn draw(&self, orders: &[usize], total_time: f64, seed: u64, index: u64) -> Result<ControlSequence, PulseError> {
        let nominal = self.nominal(orders, total_time)?;
        let mut rng = rng::stream(Purpose::Jitter, &[seed, index]);
        let trains = nominal
            .trains
            .iter()
            .map(|t| randomize(t, &self.randomization, total_time, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ControlSequence { trains })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    pub fn simulation(self, noise: NoiseModel) -> SimulationConfig {
        match self {
            Scale::Paper => SimulationConfig::paper(noise),
            Scale::Desk => SimulationConfig::desk(noise),
        }
    }

    pub fn instances(self) -> usize {
        match self {
            Scale::Paper => 100,
            Scale::Desk => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSeeds {
    pub pulses: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub features: Vec<Vec<f64>>,
    pub waveform: Waveform,
    pub measurements: MeasurementRecord,
    pub seeds: ExampleSeeds,
    pub pulses: ControlSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub split: Split,
    pub seed: u64,
    pub config: SimulationConfig,
    pub layout: FeatureLayout,
    pub output_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Re-discretise every example and compare with the stored waveform.
    pub fn check_consistency(&self) -> Result<(), String> {
        let cfg = &self.header.config;
        for ex in &self.examples {
            let w = discretize(&ex.pulses, cfg.total_time, cfg.m);
            let scale = self.header.layout.a_ref.max(1.0);
            if w.max_abs_diff(&ex.waveform) > 1e-12 * scale || !ex.waveform.is_consistent(cfg.m) {
                return Err(format!("example {} waveform does not match its pulses", ex.id));
            }
            let f = self.header.layout.normalize(&ex.pulses);
            let d = f
                .iter()
                .flatten()
                .zip(ex.features.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if f.len() != ex.features.len() || d > 1e-12 {
                return Err(format!("example {} features do not match its pulses", ex.id));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let line = serde_json::to_string(&self.header).expect("header serialises");
        writeln!(w, "{line}").map_err(io)?;
        for ex in &self.examples {
            let line = serde_json::to_string(ex).expect("example serialises");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset, DatasetError> {
        let io = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let fmt_err = |line: usize, message: String| DatasetError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| fmt_err(1, "empty file".into()))?
            .map_err(io)?;
        let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| fmt_err(1, e.to_string()))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(fmt_err(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut examples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(&line).map_err(|e| fmt_err(i + 2, e.to_string()))?;
            if !ex.waveform.is_consistent(header.config.m) {
                return Err(fmt_err(i + 2, "waveform length does not match M".into()));
            }
            examples.push(ex);
        }
        Ok(Dataset { header, examples })
    }
}

/// Options controlling dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub scale: Scale,
    pub seed: u64,
    /// Overrides the scale's instance count per configuration.
    pub instances: Option<usize>,
    /// Overrides the scale's realization count.
    pub k: Option<usize>,
    /// Overrides the scale's grid size.
    pub m: Option<usize>,
}

impl GenerationOptions {
    pub fn new(scale: Scale, seed: u64) -> Self {
        GenerationOptions {
            scale,
            seed,
            instances: None,
            k: None,
            m: None,
        }
    }

    pub fn simulation(&self, noise: NoiseModel) -> SimulationConfig {
        let mut cfg = self.scale.simulation(noise);
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        cfg
    }

    pub fn instances(&self) -> usize {
        self.instances.unwrap_or_else(|| self.scale.instances())
    }
}

/// Simulate a list of explicit sequences. Example `i` uses pulse seed
/// `(seed, i)` and noise stream `(seed, i)`.
pub fn simulate_sequences(
    name: &str,
    sequences: &[ControlSequence],
    layout: &FeatureLayout,
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let sim = Simulator::new(cfg.clone())?;
    let examples = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| -> Result<Example, DatasetError> {
            let waveform = discretize(seq, cfg.total_time, cfg.m);
            let noise_seed = rng::stream_id(&[seed, i as u64]);
            let measurements = sim.simulate(&waveform, noise_seed)?;
            Ok(Example {
                id: i,
                features: layout.normalize(seq),
                waveform,
                measurements,
                seeds: ExampleSeeds { pulses: seed, noise: noise_seed },
                pulses: seq.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            name: name.into(),
            split: Split::All,
            seed,
            config: cfg.clone(),
            layout: layout.clone(),
            output_order: outcome_labels(),
        },
        examples,
    })
}

/// Seeded 75:25 partition by example id; the test share is `⌊N/4⌋`.
pub fn split(dataset: Dataset, seed: u64) -> (Dataset, Dataset) {
    let n = dataset.examples.len();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(Purpose::Split, &[seed]));
    let mut is_test = vec![false; n];
    for &i in &ids[..n / 4] {
        is_test[i] = true;
    }
    let mut header = dataset.header;
    let (test, train): (Vec<_>, Vec<_>) = dataset.examples.into_iter().partition(|e| is_test[e.id]);
    header.split = Split::Train;
    let train = Dataset {
        header: header.clone(),
        examples: train,
    };
    header.split = Split::Test;
    let test = Dataset { header, examples: test };
    (train, test)
}

/// Draw, simulate and split one of the named datasets.
pub fn generate_dataset(id: DatasetId, opts: &GenerationOptions) -> Result<(Dataset, Dataset), DatasetError> {
    generate_from_recipe(id.name(), &id.recipe(), opts)
}

/// Draw, simulate and split the sequences of an arbitrary recipe.
pub fn generate_from_recipe(
    name: &str,
    recipe: &Recipe,
    opts: &GenerationOptions,
) -> Result<(Dataset, Dataset), DatasetError> {
    let cfg = opts.simulation(recipe.noise.clone());
    cfg.validate()?;
    let instances = opts.instances();
    let mut sequences = Vec::with_capacity(recipe.configurations.len() * instances);
    for (c, orders) in recipe.configurations.iter().enumerate() {
        for i in 0..instances {
            let index = (c * instances + i) as u64;
            sequences.push(recipe.draw(orders, cfg.total_time, opts.seed, index)?);
        }
    }
    let all = simulate_sequences(name, &sequences, &recipe.layout(cfg.total_time), &cfg, opts.seed)?;
    Ok(split(all, opts.seed))
}

pub fn split_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}_train.jsonl")), dir.join(format!("{name}_test.jsonl")))
}
