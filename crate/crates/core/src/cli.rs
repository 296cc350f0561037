//! The `maskdp` command line.
//!
//! ```text
//! maskdp [--json] <account|calibrate|gen-data|train|sweep> [--config FILE] [flags]
//! ```
//!
//! `--config` names a JSON object whose keys are flag names without the
//! leading dashes, e.g. `{"epochs": 20, "cells": ["dp:0.5", "maskdp:0.5"]}`.
//! Booleans switch a flag on or off; arrays become comma-separated lists.
//! Flags given on the command line win over the file.
//!
//! Every command echoes its effective configuration, defaults included. With
//! `--json` a single JSON document goes to stdout and diagnostics to stderr.
//!
//! Exit codes: 0 success, 2 usage error, 3 runtime error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::accountant::{
    alpha_grid, calibrate_noise, total_epsilon, PrivacyBudget, SubsampledGaussianParams,
    DEFAULT_MAX_ALPHA,
};
use crate::data::{write_dataset, Dataset, GeneratorConfig};
use crate::model::Activation;
use crate::trainer::{
    sweep, train, write_sweep_table, ClipThreshold, LrSchedule, NoiseSpec, SweepCell, TrainConfig,
    TrainMode, EPSILON_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "maskdp",
    version,
    about = "Masked differential privacy toolkit"
)]
struct Cli {
    /// Print one machine-readable JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Privacy cost of a Poisson-subsampled Gaussian run.
    #[command(args_override_self = true)]
    Account(AccountArgs),
    /// Noise multiplier that spends a target epsilon.
    #[command(args_override_self = true)]
    Calibrate(CalibrateArgs),
    /// Generate a synthetic train/test dataset.
    #[command(name = "gen-data", args_override_self = true)]
    GenData(GenDataArgs),
    /// Train one model.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Train every (mode, epsilon) cell over several seeds and tabulate accuracy.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
}

/// Only used for `--help`; the file is merged before parsing.
#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON file of flag values; command-line flags win.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AccountArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// Poisson sampling rate q = B / N.
    #[arg(long, value_parser = probability)]
    sampling_rate: f64,
    /// Noise multiplier z = sigma / C.
    #[arg(long, value_parser = positive_or_inf)]
    noise_multiplier: f64,
    /// Number of composed steps.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, value_parser = open_unit)]
    delta: f64,
    /// Clip threshold; scales sigma but not epsilon.
    #[arg(long, default_value = "1", value_parser = positive)]
    clip: f64,
    /// Largest Rényi order searched (orders 2..=alpha-max).
    #[arg(long, default_value_t = DEFAULT_MAX_ALPHA, value_parser = clap::value_parser!(u32).range(2..))]
    alpha_max: u32,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// Target epsilon.
    #[arg(long, value_parser = positive)]
    epsilon: f64,
    #[arg(long, value_parser = open_unit)]
    delta: f64,
    #[arg(long, value_parser = probability_positive)]
    sampling_rate: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ALPHA, value_parser = clap::value_parser!(u32).range(2..))]
    alpha_max: u32,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// Training split output path.
    #[arg(long)]
    out: PathBuf,
    /// Test split output path; the test split is not written without it.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    tokens_per_sample: Option<usize>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    private_fraction: Option<f64>,
    #[arg(long)]
    public_signal: Option<f64>,
    #[arg(long)]
    private_signal: Option<f64>,
    #[arg(long)]
    nuisance: Option<f64>,
}

/// Hyperparameters shared by `train` and `sweep`. Unset flags take the
/// frozen defaults, which are echoed.
#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: Option<u32>,
    /// Expected batch size B.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: Option<u64>,
    #[arg(long, value_parser = positive)]
    learning_rate: Option<f64>,
    /// Clip threshold C, or `inf` for no clipping (only valid with zero noise).
    #[arg(long)]
    clip: Option<ClipThreshold>,
    #[arg(long, value_parser = open_unit)]
    delta: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    hidden_dim: Option<u64>,
    /// tanh or identity.
    #[arg(long, value_parser = activation)]
    activation: Option<Activation>,
    /// constant or warmup-cosine.
    #[arg(long, value_parser = ["constant", "warmup-cosine"])]
    schedule: Option<String>,
    /// Warmup length for the warmup-cosine schedule.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    warmup_epochs: f64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    alpha_max: Option<u32>,
}

impl HyperArgs {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v as usize;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.clip {
            config.clip_threshold = v;
        }
        if let Some(v) = self.delta {
            config.delta = v;
        }
        if let Some(v) = self.hidden_dim {
            config.hidden_dim = v as usize;
        }
        if let Some(v) = self.activation {
            config.activation = v;
        }
        if let Some(v) = &self.schedule {
            config.schedule = match v.as_str() {
                "warmup-cosine" => LrSchedule::WarmupCosine {
                    warmup_epochs: self.warmup_epochs,
                },
                _ => LrSchedule::Constant,
            };
        }
        if let Some(v) = self.alpha_max {
            config.alpha_max = v;
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// Training dataset (JSON Lines).
    #[arg(long)]
    train: PathBuf,
    /// Test dataset for the reported accuracy.
    #[arg(long)]
    test: Option<PathBuf>,
    /// maskdp, dp or sgd.
    #[arg(long, value_parser = clap::value_parser!(TrainModeArg))]
    mode: TrainModeArg,
    /// Fixed noise multiplier z (0 disables noise).
    #[arg(long, value_parser = non_negative, conflicts_with = "epsilon")]
    noise_multiplier: Option<f64>,
    /// Target epsilon; the noise multiplier is calibrated.
    #[arg(long, value_parser = positive)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Write the final parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the report here (default: next to the checkpoint).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    _config: ConfigArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated mode:epsilon cells, epsilon `inf` for no privacy.
    /// Default: maskdp and dp at 0.1, 0.25, 0.5, 0.75, 1, 5, inf, plus sgd:inf.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<SweepCell>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output path of the CSV table.
    #[arg(long)]
    out: PathBuf,
}

/// Newtype so clap can parse [`TrainMode`] through `FromStr`.
#[derive(Debug, Clone, Copy)]
struct TrainModeArg(TrainMode);

impl std::str::FromStr for TrainModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(TrainModeArg)
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("not a number: {e}"))
}

fn probability(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn probability_positive(s: &str) -> Result<f64, String> {
    let v = probability(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must lie in (0, 1]".into())
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite number > 0, got {v}"))
    }
}

fn positive_or_inf(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0 (inf allowed), got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {v}"))
    }
}

fn activation(s: &str) -> Result<Activation, String> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "identity" => Ok(Activation::Identity),
        other => Err(format!("expected tanh or identity, got {other:?}")),
    }
}

/// Flags that exclude each other; a command-line member drops the config-file ones.
const EXCLUSIVE_FLAGS: &[&[&str]] = &[&["noise-multiplier", "epsilon"]];

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Splices `--config FILE` contents in front of the command-line flags,
/// skipping keys whose flag (or an exclusive partner) is given explicitly.
fn merge_config_file(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut config_path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            config_path = Some(PathBuf::from(path));
        } else if let Some(path) = text.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config_path else {
        return Ok(rest);
    };

    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("--config: cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("--config: {} is not JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!(
            "--config: {} must hold a JSON object",
            path.display()
        )));
    };

    let given = |flag: &str| {
        rest.iter().any(|a| {
            let a = a.to_string_lossy();
            a == format!("--{flag}") || a.starts_with(&format!("--{flag}="))
        })
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in map {
        let flag = key.replace('_', "-");
        let shadowed = given(&flag)
            || EXCLUSIVE_FLAGS
                .iter()
                .filter(|group| group.contains(&flag.as_str()))
                .any(|group| group.iter().any(|f| given(f)));
        if shadowed {
            continue;
        }
        let rendered = match value {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => {
                injected.push(format!("--{flag}").into());
                continue;
            }
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => {
                return Err(CliError::Usage(format!(
                    "--config: key {key:?} must not be an object"
                )))
            }
        };
        injected.push(format!("--{flag}={rendered}").into());
    }

    // Insert right after the subcommand name so later flags override.
    const SUBCOMMANDS: [&str; 5] = ["account", "calibrate", "gen-data", "train", "sweep"];
    let position = rest
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| CliError::Usage("--config needs a subcommand".into()))?;
    rest.splice(position + 1..position + 1, injected);
    Ok(rest)
}

struct Output<'a> {
    json: bool,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Output<'_> {
    /// Emits `doc` as JSON or as indented `key: value` lines.
    fn emit(&mut self, doc: &Value) -> Result<(), CliError> {
        if self.json {
            let text = serde_json::to_string_pretty(doc).map_err(runtime)?;
            writeln!(self.stdout, "{text}").map_err(runtime)
        } else {
            write_text(self.stdout, doc, 0).map_err(runtime)
        }
    }

    fn note(&mut self, message: &str) {
        // Diagnostics are best effort.
        let _ = writeln!(self.stderr, "{message}");
    }
}

fn write_text(w: &mut dyn Write, value: &Value, indent: usize) -> std::io::Result<()> {
    let pad = "  ".repeat(indent);
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::Object(_) => {
                        writeln!(w, "{pad}{k}:")?;
                        write_text(w, v, indent + 1)?;
                    }
                    Value::Array(items) if items.iter().any(Value::is_object) => {
                        writeln!(w, "{pad}{k}:")?;
                        for item in items {
                            writeln!(w, "{pad}  -")?;
                            write_text(w, item, indent + 2)?;
                        }
                    }
                    _ => writeln!(w, "{pad}{k}: {}", scalar(v))?,
                }
            }
            Ok(())
        }
        other => writeln!(w, "{pad}{}", scalar(other)),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(runtime)
}

/// JSON has no infinity; render it as the string `"inf"`.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!(v.to_string())
    }
}

fn load_dataset(path: &Path, flag: &str, out: &mut Output<'_>) -> Result<Dataset, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Runtime(format!("{flag}: cannot open {}: {e}", path.display())))?;
    let (data, warnings) = Dataset::read_from(BufReader::new(file))
        .map_err(|e| CliError::Runtime(format!("{flag}: {}: {e}", path.display())))?;
    for w in warnings {
        out.note(&format!("warning: {}: {w}", path.display()));
    }
    Ok(data)
}

fn cmd_account(a: &AccountArgs, out: &mut Output<'_>) -> Result<(), CliError> {
    let params =
        SubsampledGaussianParams::new(a.sampling_rate, a.noise_multiplier, a.clip, a.steps)
            .map_err(runtime)?;
    let report = total_epsilon(&params, a.delta, &alpha_grid(a.alpha_max)).map_err(runtime)?;
    out.emit(&json!({
        "command": "account",
        "config": {
            "sampling_rate": a.sampling_rate,
            "noise_multiplier": num(a.noise_multiplier),
            "steps": a.steps,
            "delta": a.delta,
            "clip": a.clip,
            "alpha_max": a.alpha_max,
        },
        "result": {
            "epsilon": num(report.epsilon),
            "best_alpha": report.best_alpha,
            "per_step_rdp": num(report.per_step_rdp),
            "composed_rdp": num(report.composed_rdp),
        },
    }))
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut Output<'_>) -> Result<(), CliError> {
    let budget = PrivacyBudget::new(a.epsilon, a.delta).map_err(runtime)?;
    let c = calibrate_noise(&budget, a.sampling_rate, a.steps, &alpha_grid(a.alpha_max))
        .map_err(runtime)?;
    if c.at_bracket_floor {
        out.note("note: the smallest searched noise multiplier already meets the target");
    }
    out.emit(&json!({
        "command": "calibrate",
        "config": {
            "epsilon": a.epsilon,
            "delta": a.delta,
            "sampling_rate": a.sampling_rate,
            "steps": a.steps,
            "alpha_max": a.alpha_max,
        },
        "result": {
            "noise_multiplier": c.noise_multiplier,
            "epsilon": num(c.report.epsilon),
            "best_alpha": c.report.best_alpha,
            "per_step_rdp": num(c.report.per_step_rdp),
            "iterations": c.iterations,
            "at_bracket_floor": c.at_bracket_floor,
        },
    }))
}

fn cmd_gen_data(a: &GenDataArgs, out: &mut Output<'_>) -> Result<(), CliError> {
    let mut config = GeneratorConfig::default();
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { config.$field = v; } )* };
    }
    set!(
        n,
        n_test,
        tokens_per_sample,
        d_in,
        n_classes,
        private_fraction,
        public_signal,
        private_signal,
        nuisance
    );
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let data = crate::data::generate_synthetic(&config, a.seed).map_err(runtime)?;
    write_dataset(&data.train, &a.out).map_err(runtime)?;
    if let Some(path) = &a.test_out {
        write_dataset(&data.test, path).map_err(runtime)?;
    }
    out.emit(&json!({
        "command": "gen-data",
        "config": {
            "seed": a.seed,
            "generator": to_value(&config)?,
            "out": a.out.display().to_string(),
            "test_out": a.test_out.as_ref().map(|p| p.display().to_string()),
        },
        "result": {
            "train_samples": data.train.len(),
            "test_samples": a.test_out.as_ref().map(|_| data.test.len()),
        },
    }))
}

fn cmd_train(a: &TrainArgs, out: &mut Output<'_>) -> Result<(), CliError> {
    let mut config = TrainConfig {
        mode: a.mode.0,
        seed: a.seed,
        ..TrainConfig::default()
    };
    a.hyper.apply(&mut config);
    config.noise = match (a.noise_multiplier, a.epsilon) {
        (Some(z), _) => NoiseSpec::Multiplier(z),
        (None, Some(eps)) => NoiseSpec::TargetEpsilon(eps),
        (None, None) if config.mode.is_private() => {
            return Err(CliError::Usage(
                "--noise-multiplier or --epsilon is required for private modes".into(),
            ))
        }
        (None, None) => NoiseSpec::Multiplier(0.0),
    };

    let train_data = load_dataset(&a.train, "--train", out)?;
    let test_data = match &a.test {
        Some(p) => Some(load_dataset(p, "--test", out)?),
        None => None,
    };
    let outcome = train(&config, &train_data, test_data.as_ref()).map_err(runtime)?;
    let mut report = outcome.report;

    if let Some(path) = &a.checkpoint {
        outcome.params.write_checkpoint(path).map_err(runtime)?;
        report.checkpoint = Some(path.display().to_string());
    }
    let report_path = a.report.clone().or_else(|| {
        a.checkpoint.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".report.json");
            PathBuf::from(s)
        })
    });
    let mut doc = json!({
        "command": "train",
        "train": a.train.display().to_string(),
        "test": a.test.as_ref().map(|p| p.display().to_string()),
        "report": to_value(&report)?,
    });
    fix_infinities(&mut doc, &report);
    if let Some(path) = report_path {
        let file = File::create(&path).map_err(|e| {
            CliError::Runtime(format!("--report: cannot create {}: {e}", path.display()))
        })?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &doc["report"]).map_err(runtime)?;
        writeln!(w).and_then(|_| w.flush()).map_err(runtime)?;
    }
    out.emit(&doc)
}

/// serde_json writes infinite floats as null; restore the infinite epsilon.
fn fix_infinities(doc: &mut Value, report: &crate::trainer::TrainReport) {
    if let Some(acc) = report.accounting {
        if let Some(Value::Object(map)) = doc.pointer_mut("/report/accounting") {
            map.insert("epsilon".into(), num(acc.epsilon()));
        }
    }
}

fn default_cells() -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for mode in [TrainMode::Maskdp, TrainMode::Dp] {
        cells.extend(
            EPSILON_GRID
                .iter()
                .map(|&epsilon| SweepCell { mode, epsilon }),
        );
    }
    cells.push(SweepCell {
        mode: TrainMode::Sgd,
        epsilon: None,
    });
    cells
}

fn cmd_sweep(a: &SweepArgs, out: &mut Output<'_>) -> Result<(), CliError> {
    let mut base = TrainConfig::default();
    a.hyper.apply(&mut base);
    let cells = if a.cells.is_empty() {
        default_cells()
    } else {
        a.cells.clone()
    };
    let train_data = load_dataset(&a.train, "--train", out)?;
    let test_data = load_dataset(&a.test, "--test", out)?;
    let rows = sweep(&cells, &base, &a.seeds, &train_data, &test_data).map_err(runtime)?;
    let file = File::create(&a.out)
        .map_err(|e| CliError::Runtime(format!("--out: cannot create {}: {e}", a.out.display())))?;
    write_sweep_table(&rows, BufWriter::new(file)).map_err(runtime)?;

    let mut base_echo = to_value(&base)?;
    if let Value::Object(map) = &mut base_echo {
        // Cells override mode, seed and noise.
        map.remove("mode");
        map.remove("seed");
        map.remove("noise");
    }
    let rows_echo: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode,
                "epsilon_target": r.epsilon_target.map_or(json!("inf"), |e| json!(e)),
                "epsilon_realized": r.epsilon_realized.map(num),
                "seed_count": r.seed_count,
                "acc_mean": r.acc_mean,
                "acc_median": r.acc_median,
                "acc_std": r.acc_std,
                "steps_executed": r.steps_executed,
                "steps_skipped": r.steps_skipped,
            })
        })
        .collect();
    out.emit(&json!({
        "command": "sweep",
        "config": {
            "train": a.train.display().to_string(),
            "test": a.test.display().to_string(),
            "cells": cells.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "seeds": a.seeds,
            "base": base_echo,
            "out": a.out.display().to_string(),
        },
        "rows": rows_echo,
    }))
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config_file(args) {
        Ok(a) => a,
        Err(CliError::Usage(m)) | Err(CliError::Runtime(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let mut out = Output {
        json: cli.json,
        stdout,
        stderr,
    };
    let result = match &cli.command {
        Command::Account(a) => cmd_account(a, &mut out),
        Command::Calibrate(a) => cmd_calibrate(a, &mut out),
        Command::GenData(a) => cmd_gen_data(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Sweep(a) => cmd_sweep(a, &mut out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            out.note(&format!("error: {m}"));
            EXIT_USAGE
        }
        Err(CliError::Runtime(m)) => {
            out.note(&format!("error: {m}"));
            EXIT_RUNTIME
        }
    }
}
