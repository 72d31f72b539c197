//! Command-line surface. Every command writes a manifest with the resolved
//! arguments next to its primary output.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::controller::{ControlProblem, Gate};
use crate::dataset::{generate_dataset, generate_from_recipe, split_paths, Dataset, DatasetId, GenerationOptions, Scale};
use crate::error::{Error, Result};
use crate::graybox_model::ModelState;
use crate::linalg2::Operator2;
use crate::mc_simulator::{outcome_labels, NoiseModel, SimulationConfig, Simulator};
use crate::noise_gen::{psd_z, PsdShape};
use crate::pulse_lib::{discretize, ControlSequence, Waveform};
use crate::spectroscopy::{
    invert_as, predict_coherences, spectroscopy_dataset_name, spectroscopy_recipe, InversionConfig, InversionMode, NoiseStatistics,
};
use crate::trainer::{summarize, train, write_log_csv, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gbq", version, about = "Graybox qubit noise modelling, control and spectroscopy")]
#[command(args_override_self = true)]
pub struct Cli {
    /// TOML file of default flag values: top-level keys apply to every
    /// command that accepts them, `[command]` tables to that command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for the data-parallel stages.
    #[arg(long, global = true, env = "GBQ_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Monte Carlo expectations for one pulse file (free evolution without one).
    Simulate(SimulateArgs),
    /// Generate a train/test pair of JSONL files.
    GenerateDataset(GenerateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Mean-squared errors of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Model outputs for one pulse file.
    Predict(PulseModelArgs),
    /// The three reconstructed V_O operators for one pulse file.
    ExtractVo(PulseModelArgs),
    /// Optimise pulses for a target gate through a frozen model.
    OptimizeControl(ControlArgs),
    /// Dephasing PSD estimate from model-predicted CPMG coherences.
    EstimateSpectrum(SpectrumArgs),
    /// Drift of Monte Carlo means against the realization count.
    ConvergenceStudy(ConvergenceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::GenerateDataset(_) => "generate-dataset",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::ExtractVo(_) => "extract-vo",
            Command::OptimizeControl(_) => "optimize-control",
            Command::EstimateSpectrum(_) => "estimate-spectrum",
            Command::ConvergenceStudy(_) => "convergence-study",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChoice {
    None,
    /// Dephasing PSD on Z.
    Dephasing,
    /// Transverse PSD on X plus dephasing on Z.
    Transverse,
}

impl NoiseChoice {
    fn model(self) -> NoiseModel {
        match self {
            NoiseChoice::None => NoiseModel::none(),
            NoiseChoice::Dephasing => NoiseModel::dephasing(),
            NoiseChoice::Transverse => NoiseModel {
                x: Some(PsdShape::TransverseX),
                z: Some(PsdShape::DephasingZ),
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long, value_enum, default_value = "none")]
    pub noise: NoiseChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Realizations; overrides the scale.
    #[arg(long)]
    pub k: Option<usize>,
    /// Time steps; overrides the scale.
    #[arg(long)]
    pub m: Option<usize>,
}

impl SimArgs {
    fn config(&self) -> SimulationConfig {
        let mut cfg = self.scale.simulation(self.noise.model());
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        cfg
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON control sequence.
    #[arg(long)]
    pub pulses: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Dataset id; see `--help` of the error for the list.
    #[arg(long, required_unless_present = "spectroscopy_orders")]
    pub name: Option<String>,
    /// Generate the dephasing CPMG set with orders `1..=N` instead.
    #[arg(long, conflicts_with = "name")]
    pub spectroscopy_orders: Option<usize>,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset prefix: `<prefix>_train.jsonl` and `<prefix>_test.jsonl`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Cosine-annealed rate at the last iteration; equal to
    /// `--learning-rate` for a constant rate.
    #[arg(long, default_value_t = 1e-5)]
    pub final_learning_rate: f64,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub eval_every: u64,
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// Training-curve CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset prefix as for `train`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PulseModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON control sequence.
    #[arg(long)]
    pub pulses: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ControlArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub gate: Gate,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub learning_rate: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "1..50")]
    pub orders: String,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: InversionMode,
    /// Noise statistics assumed by the full inversion.
    #[arg(long, value_enum, default_value = "random-phase")]
    pub statistics: NoiseStatistics,
    /// Also write the dephasing PSD the simulator uses.
    #[arg(long)]
    pub with_truth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub pulses: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Realization counts; comma list.
    #[arg(long, default_value = "10,20,50,100,200,500,1000,2000")]
    pub k_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `a..b` (inclusive) or `a,b,c`.
pub fn parse_orders(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("cannot parse orders {s:?}; use a..b or a,b,c"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn read_sequence(path: &Path) -> Result<ControlSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let seq: ControlSequence =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(seq)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// Emit to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(out: &Path, cli: &Cli, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": cli.command.name(),
        "arguments": &cli.command,
        "threads": rayon::current_num_threads(),
        "config_file": cli.config,
        "version": env!("CARGO_PKG_VERSION"),
        "git_revision": option_env!("GBQ_GIT_REVISION"),
        "outputs": extra,
    });
    write_json(&manifest_path(out), &manifest)
}

fn load_split(prefix: &Path) -> Result<(Dataset, Option<Dataset>)> {
    let dir = prefix.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = prefix
        .file_name()
        .ok_or_else(|| Error::Usage(format!("dataset prefix {} has no name", prefix.display())))?
        .to_string_lossy();
    let (train_path, test_path) = split_paths(dir, &name);
    let train = Dataset::read_jsonl(&train_path)?;
    let test = if test_path.exists() {
        Some(Dataset::read_jsonl(&test_path)?)
    } else {
        None
    };
    Ok((train, test))
}

fn records_json(values: &[f64]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> =
        outcome_labels().into_iter().zip(values).map(|(k, v)| (k, json!(v))).collect();
    serde_json::Value::Object(map)
}

fn operator_json(o: &Operator2) -> serde_json::Value {
    json!(o.m.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>())
}

fn pulses_waveform(path: Option<&Path>, total_time: f64, m: usize) -> Result<(Option<ControlSequence>, Waveform)> {
    match path {
        None => Ok((None, Waveform::zeros())),
        Some(p) => {
            let seq = read_sequence(p)?;
            seq.validate(total_time)?;
            let w = discretize(&seq, total_time, m);
            Ok((Some(seq), w))
        }
    }
}

fn run_command(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => {
            let cfg = a.sim.config();
            let (_, wave) = pulses_waveform(a.pulses.as_deref(), cfg.total_time, cfg.m)?;
            let record = Simulator::new(cfg.clone())?.simulate(&wave, a.sim.seed)?;
            let out = json!({ "config": cfg, "outputs": records_json(&record.0) });
            emit(a.out.as_deref(), &out)?;
            if let Some(o) = &a.out {
                write_manifest(o, cli, json!({ "result": o }))?;
            }
        }
        Command::GenerateDataset(a) => {
            let opts = GenerationOptions {
                scale: a.scale,
                seed: a.seed,
                instances: a.instances,
                k: a.k,
                m: a.m,
            };
            let (name, (train_set, test_set)) = match (&a.name, a.spectroscopy_orders) {
                (_, Some(n)) => {
                    let name = spectroscopy_dataset_name(n);
                    let pair = generate_from_recipe(&name, &spectroscopy_recipe(n), &opts)?;
                    (name, pair)
                }
                (Some(name), None) => {
                    let id: DatasetId = name.parse()?;
                    (id.name().to_string(), generate_dataset(id, &opts)?)
                }
                (None, None) => return Err(Error::Usage("--name or --spectroscopy-orders is required".into())),
            };
            fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(format!("creating {}", a.out_dir.display()), e))?;
            let (train_path, test_path) = split_paths(&a.out_dir, &name);
            train_set.write_jsonl(&train_path)?;
            test_set.write_jsonl(&test_path)?;
            println!("{}: {} train / {} test", name, train_set.len(), test_set.len());
            write_manifest(
                &train_path,
                cli,
                json!({ "train": train_path, "test": test_path, "train_examples": train_set.len(), "test_examples": test_set.len() }),
            )?;
        }
        Command::Train(a) => {
            let (train_set, test_set) = load_split(&a.dataset)?;
            let model = match &a.resume {
                Some(p) => ModelState::load(p)?,
                None => ModelState::new(
                    train_set.header.layout.clone(),
                    train_set.header.config.omega,
                    train_set.header.config.m,
                    a.seed,
                ),
            };
            let cfg = TrainConfig {
                iterations: a.iterations,
                batch_size: a.batch_size,
                learning_rate: a.learning_rate,
                final_learning_rate: Some(a.final_learning_rate),
                seed: a.seed,
                eval_every: a.eval_every,
                early_stop: a.early_stop,
                ..TrainConfig::default()
            };
            let (model, log) = train(model, &train_set, test_set.as_ref(), &cfg, |_, e| {
                log::info!("iteration {} train {:.4e} test {:?}", e.iteration, e.train_mse, e.test_mse);
            })?;
            model.save(&a.out)?;
            let log_path = a.log.clone().unwrap_or_else(|| {
                let mut n = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                n.push(".log.csv");
                a.out.with_file_name(n)
            });
            write_log_csv(&log, &log_path)?;
            let summary = summarize(&model, &train_set, test_set.as_ref())?;
            println!("{}", serde_json::to_string(&summary).map_err(|e| Error::Format(e.to_string()))?);
            write_manifest(&a.out, cli, json!({ "checkpoint": a.out, "log": log_path, "summary": summary }))?;
        }
        Command::Evaluate(a) => {
            let model = ModelState::load(&a.checkpoint)?;
            let (train_set, test_set) = load_split(&a.dataset)?;
            let summary = summarize(&model, &train_set, test_set.as_ref())?;
            emit(a.out.as_deref(), &summary)?;
            if let Some(o) = &a.out {
                write_manifest(o, cli, json!({ "result": o }))?;
            }
        }
        Command::Predict(a) | Command::ExtractVo(a) => {
            let model = ModelState::load(&a.checkpoint)?;
            let seq = read_sequence(&a.pulses)?;
            seq.validate(model.total_time)?;
            let features = model.layout.normalize(&seq);
            let wave = discretize(&seq, model.total_time, model.m_model);
            let p = model.predict(&features, &wave)?;
            let out = if matches!(cli.command, Command::Predict(_)) {
                json!({ "outputs": records_json(&p.outputs.0) })
            } else {
                let names = ["X", "Y", "Z"];
                let vo: serde_json::Map<String, serde_json::Value> = names
                    .iter()
                    .zip(p.vo.iter().zip(&p.vo_params))
                    .map(|(n, (v, q))| {
                        (
                            format!("V_{n}"),
                            json!({ "matrix": operator_json(v), "psi": q.psi, "theta": q.theta, "delta": q.delta, "mu": q.mu }),
                        )
                    })
                    .collect();
                json!(vo)
            };
            emit(a.out.as_deref(), &out)?;
            if let Some(o) = &a.out {
                write_manifest(o, cli, json!({ "result": o }))?;
            }
        }
        Command::OptimizeControl(a) => {
            let model = ModelState::load(&a.checkpoint)?;
            let mut problem = ControlProblem::new(&model, a.gate.unitary())?;
            problem.optimizer.steps = a.steps;
            problem.optimizer.restarts = a.restarts;
            problem.optimizer.learning_rate = a.learning_rate;
            let mut result = problem.optimize(a.seed)?;
            result.gate = Some(a.gate);
            let f = &result.fidelities;
            println!(
                "{}: F(V_X,I)={:.5} F(V_Y,I)={:.5} F(V_Z,I)={:.5} F(U_c,G)={:.5}{}",
                a.gate,
                f.vx,
                f.vy,
                f.vz,
                f.control,
                if result.converged { "" } else { " (not converged)" }
            );
            write_json(&a.out, &result)?;
            write_manifest(&a.out, cli, json!({ "result": a.out, "fidelities": result.fidelities }))?;
        }
        Command::EstimateSpectrum(a) => {
            let model = ModelState::load(&a.checkpoint)?;
            let orders = parse_orders(&a.orders)?;
            let curve = predict_coherences(&model, &orders)?;
            let cfg = match a.mode {
                InversionMode::Harmonic => InversionConfig::harmonic(),
                InversionMode::Full => InversionConfig {
                statistics: a.statistics,
                ..InversionConfig::full(model.m_model)
            },
            };
            let est = invert_as(&curve, &cfg)?;
            let mut csv = String::from("f,S_est,S_true\n");
            for (f, s) in est.frequencies.iter().zip(&est.values) {
                let truth = if a.with_truth { format!("{:e}", psd_z(*f)?) } else { String::new() };
                csv.push_str(&format!("{f},{s:e},{truth}\n"));
            }
            write_text(&a.out, &csv)?;
            if est.clipped() > 0 {
                log::warn!("{} negative estimates clipped to zero", est.clipped());
            }
            write_manifest(&a.out, cli, json!({ "result": a.out, "calibration": est.calibration, "clipped": est.clipped() }))?;
        }
        Command::ConvergenceStudy(a) => {
            let cfg = a.sim.config();
            let (_, wave) = pulses_waveform(a.pulses.as_deref(), cfg.total_time, cfg.m)?;
            let grid = parse_orders(&a.k_grid)?;
            let study = Simulator::new(cfg)?.convergence_study(&wave, a.sim.seed, &grid)?;
            let mut out = fs::File::create(&a.out).map_err(|e| Error::io(format!("creating {}", a.out.display()), e))?;
            let io = |e| Error::io("writing convergence table", e);
            writeln!(out, "K,rms_drift,max_drift").map_err(io)?;
            for p in &study.points {
                writeln!(out, "{},{:e},{:e}", p.k, p.rms_drift, p.max_drift).map_err(io)?;
            }
            println!("slope {:?}", study.slope);
            write_manifest(&a.out, cli, json!({ "result": a.out, "slope": study.slope }))?;
        }
    }
    Ok(())
}

/// Expand `--config` defaults into flags placed before the user's own, so
/// explicit flags win.
fn apply_config(argv: Vec<OsString>, config: &Path, command: &str) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(format!("reading {}", config.display()), e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Usage(format!("config {}: {e}", config.display())))?;
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(command).expect("parsed subcommand exists");
    let accepted: Vec<String> = sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let mut extra: Vec<OsString> = Vec::new();
    let mut push = |key: &str, value: &toml::Value, strict: bool| -> Result<()> {
        let flag = key.replace('_', "-");
        if !accepted.contains(&flag) || flag == "config" {
            return if strict {
                Err(Error::Usage(format!("config key {key:?} is not an option of {command}")))
            } else {
                Ok(())
            };
        }
        match value {
            toml::Value::Boolean(true) => extra.push(format!("--{flag}").into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => extra.extend([format!("--{flag}").into(), s.into()]),
            toml::Value::Integer(i) => extra.extend([format!("--{flag}").into(), i.to_string().into()]),
            toml::Value::Float(f) => extra.extend([format!("--{flag}").into(), f.to_string().into()]),
            other => return Err(Error::Usage(format!("config key {key:?} has unsupported value {other}"))),
        }
        Ok(())
    };
    for (k, v) in &table {
        if !v.is_table() {
            push(k, v, false)?;
        }
    }
    if let Some(toml::Value::Table(t)) = table.get(command) {
        for (k, v) in t {
            push(k, v, true)?;
        }
    }
    let pos = argv.iter().position(|a| a == command).expect("subcommand present in argv");
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(argv)
}

/// Parse, configure and run; returns the process exit code.
pub fn dispatch(argv: Vec<OsString>) -> i32 {
    let cli = match parse(argv.clone()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match &cli.config {
        None => cli,
        Some(path) => match apply_config(argv, path, cli.command.name()).map(parse) {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => {
                let _ = e.print();
                return 2;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        },
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match run_command(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
