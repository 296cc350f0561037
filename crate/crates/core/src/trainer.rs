//! MaskDP-SGD with DP-SGD and plain SGD baselines, evaluation and the
//! epsilon sweep harness.
//!
//! One step of every mode:
//!
//! 1. Poisson-sample a batch at `q = B / N`. An empty batch skips the step.
//! 2. For each sample, in increasing index order, split the tokens by mask.
//!    `maskdp` and `sgd` take a gradient on each non-empty branch; `dp`
//!    treats all tokens as private and has no public branch.
//! 3. Private-branch gradients are clipped to `C` (`sgd` never clips).
//! 4. `sigma = z * C` Gaussian noise is added once to the clipped sum.
//! 5. `theta <- theta - lr * (sum_public + sum_private_noisy) / |batch|`.
//!
//! A branch with no tokens contributes no loss term and no gradient. With
//! all-private masks `maskdp` therefore reduces exactly to `dp`.
//!
//! The update divides by the realised batch size, not the expected one, and
//! the step count `T * N / B` is rounded down. The accounting treats every
//! attempted step, skipped or not, as a composed subsampled Gaussian step.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::accountant::{
    alpha_grid, calibrate_noise, total_epsilon, AccountantError, AccountingReport, PrivacyBudget,
    SubsampledGaussianParams, DEFAULT_MAX_ALPHA,
};
use crate::data::Dataset;
use crate::mechanism::{
    clip_to_norm, gaussian_noise, poisson_sample, GradientVector, RandomSeed, Stream,
};
use crate::model::{Activation, ModelDims, ModelError, ModelParams, TokenSubset};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("config does not match dataset: {0}")]
    DatasetMismatch(String),
    #[error(transparent)]
    Accounting(#[from] AccountantError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot evaluate on an empty dataset")]
    EmptyEvaluation,
    #[error("failed to write sweep table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Clip and noise only the private-token gradients.
    Maskdp,
    /// Conventional DP-SGD: every token is private.
    Dp,
    /// Non-private baseline.
    Sgd,
}

impl TrainMode {
    pub fn is_private(self) -> bool {
        !matches!(self, TrainMode::Sgd)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Maskdp => "maskdp",
            TrainMode::Dp => "dp",
            TrainMode::Sgd => "sgd",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "maskdp" => Ok(TrainMode::Maskdp),
            "dp" => Ok(TrainMode::Dp),
            "sgd" => Ok(TrainMode::Sgd),
            other => Err(format!(
                "unknown mode {other:?} (expected maskdp, dp or sgd)"
            )),
        }
    }
}

/// Clipping threshold. `+inf` disables clipping and is serialised as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ClipThreshold(f64);

impl ClipThreshold {
    pub const UNBOUNDED: ClipThreshold = ClipThreshold(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, String> {
        if value > 0.0 {
            Ok(Self(value))
        } else {
            Err(format!("clip threshold must be > 0 or inf, got {value}"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for ClipThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unbounded() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for ClipThreshold {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v: f64 = s
            .parse()
            .map_err(|e| format!("invalid number {s:?}: {e}"))?;
        Self::new(v)
    }
}

impl Serialize for ClipThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_unbounded() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ClipThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => ClipThreshold::new(v),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// How the private modes choose their noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Fixed noise multiplier `z = sigma / C`. `0` disables noise (and privacy).
    Multiplier(f64),
    /// Calibrate `z` so the run spends exactly this epsilon (at the config's delta).
    TargetEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over `warmup_epochs`, then cosine decay to zero.
    WarmupCosine {
        warmup_epochs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: u32,
    /// Expected batch size `B`; the sampling rate is `B / N`.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_threshold: ClipThreshold,
    pub noise: NoiseSpec,
    pub delta: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub schedule: LrSchedule,
    /// Largest Rényi order searched by the accountant.
    pub alpha_max: u32,
}

impl Default for TrainConfig {
    /// Frozen desk-scale settings used by the acceptance sweep.
    fn default() -> Self {
        Self {
            mode: TrainMode::Maskdp,
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.5,
            clip_threshold: ClipThreshold(1.0),
            noise: NoiseSpec::TargetEpsilon(0.5),
            delta: 1e-5,
            seed: 0,
            hidden_dim: 32,
            activation: Activation::Tanh,
            schedule: LrSchedule::Constant,
            alpha_max: DEFAULT_MAX_ALPHA,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.hidden_dim == 0 {
            return bad("hidden dimension must be >= 1".into());
        }
        if let LrSchedule::WarmupCosine { warmup_epochs } = self.schedule {
            if !(warmup_epochs >= 0.0) {
                return bad(format!("warmup epochs must be >= 0, got {warmup_epochs}"));
            }
        }
        if !self.mode.is_private() {
            return Ok(());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        match self.noise {
            NoiseSpec::Multiplier(z) => {
                if !(z >= 0.0 && z.is_finite()) {
                    return bad(format!("noise multiplier must be finite and >= 0, got {z}"));
                }
                if z > 0.0 && self.clip_threshold.is_unbounded() {
                    return bad(
                        "an unbounded clip threshold has no finite privacy guarantee; \
                         use it only with noise multiplier 0"
                            .into(),
                    );
                }
            }
            NoiseSpec::TargetEpsilon(eps) => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return bad(format!("target epsilon must be finite and > 0, got {eps}"));
                }
                if self.clip_threshold.is_unbounded() {
                    return bad("a privacy budget needs a finite clip threshold".into());
                }
            }
        }
        Ok(())
    }

    /// Number of attempted steps for a dataset of `n` records: `floor(T N / B)`, at least 1.
    pub fn steps_for(&self, n: usize) -> u64 {
        ((u64::from(self.epochs) * n as u64) / self.batch_size as u64).max(1)
    }

    fn learning_rate_at(&self, step: u64, total: u64, steps_per_epoch: f64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::WarmupCosine { warmup_epochs } => {
                let warmup = (warmup_epochs * steps_per_epoch).floor() as u64;
                if step < warmup {
                    self.learning_rate * (step + 1) as f64 / warmup as f64
                } else {
                    let span = total.saturating_sub(warmup).max(1) as f64;
                    let progress = (step - warmup) as f64 / span;
                    0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// Privacy spent by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Accounting {
    Bounded(AccountingReport),
    /// Noise multiplier 0: no finite guarantee.
    Unbounded,
}

impl Accounting {
    pub fn epsilon(&self) -> f64 {
        match self {
            Accounting::Bounded(r) => r.epsilon,
            Accounting::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub sampling_rate: f64,
    /// Resolved noise multiplier (after calibration); absent for `sgd`.
    pub noise_multiplier: Option<f64>,
    /// True when calibration hit its lower bracket instead of a tight solution.
    pub calibrated_at_floor: bool,
    /// Present iff the mode is private.
    pub accounting: Option<Accounting>,
    pub steps_attempted: u64,
    pub steps_executed: u64,
    pub steps_skipped: u64,
    /// Mean per-sample training loss (summed over branches) of each epoch.
    pub epoch_losses: Vec<Option<f64>>,
    pub test_accuracy: Option<f64>,
    /// Path of the saved checkpoint, filled in by callers that write one.
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParams,
}

/// Hooks into the training loop, used for auditing the update structure.
#[allow(unused_variables)]
pub trait StepObserver {
    fn step_started(&mut self, step: u64, batch: &[usize]) {}
    /// Public-branch gradient of `sample`, exactly as summed.
    fn public_contribution(&mut self, step: u64, sample: usize, grad: &GradientVector) {}
    /// Private-branch gradient before and after clipping.
    fn private_contribution(
        &mut self,
        step: u64,
        sample: usize,
        raw: &GradientVector,
        clipped: &GradientVector,
    ) {
    }
    fn noise_added(&mut self, step: u64, noise: &GradientVector) {}
    /// Parameters after the update of an executed step.
    fn step_finished(&mut self, step: u64, params: &ModelParams) {}
}

/// Observer that ignores every event.
pub struct NoObserver;

impl StepObserver for NoObserver {}

fn check_dataset(config: &TrainConfig, data: &Dataset) -> Result<(), TrainError> {
    let n = data.len();
    if n == 0 {
        return Err(TrainError::DatasetMismatch("training set is empty".into()));
    }
    if config.batch_size >= n {
        return Err(TrainError::DatasetMismatch(format!(
            "batch size {} must be smaller than the dataset size {n}",
            config.batch_size
        )));
    }
    Ok(())
}

fn resolve_noise(
    config: &TrainConfig,
    q: f64,
    steps: u64,
) -> Result<(Option<f64>, bool, Option<Accounting>), TrainError> {
    if !config.mode.is_private() {
        return Ok((None, false, None));
    }
    let grid = alpha_grid(config.alpha_max);
    match config.noise {
        NoiseSpec::Multiplier(0.0) => Ok((Some(0.0), false, Some(Accounting::Unbounded))),
        NoiseSpec::Multiplier(z) => {
            let params = SubsampledGaussianParams::new(q, z, config.clip_threshold.get(), steps)?;
            let report = total_epsilon(&params, config.delta, &grid)?;
            Ok((Some(z), false, Some(Accounting::Bounded(report))))
        }
        NoiseSpec::TargetEpsilon(eps) => {
            let budget = PrivacyBudget::new(eps, config.delta)?;
            let c = calibrate_noise(&budget, q, steps, &grid)?;
            Ok((
                Some(c.noise_multiplier),
                c.at_bracket_floor,
                Some(Accounting::Bounded(c.report)),
            ))
        }
    }
}

/// Trains without observation. See [`train_observed`].
pub fn train(
    config: &TrainConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
) -> Result<TrainOutcome, TrainError> {
    train_observed(config, train_data, test_data, &mut NoObserver)
}

/// Runs the configured training loop, reporting every contribution to `observer`.
pub fn train_observed(
    config: &TrainConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    observer: &mut dyn StepObserver,
) -> Result<TrainOutcome, TrainError> {
    let started = Instant::now();
    config.validate()?;
    check_dataset(config, train_data)?;
    let meta = train_data.meta();
    let dims = ModelDims::new(meta.d_in, config.hidden_dim, meta.n_classes)?;
    if let Some(test) = test_data {
        let tm = test.meta();
        if !test.is_empty() && (tm.d_in != meta.d_in || tm.n_classes != meta.n_classes) {
            return Err(TrainError::DatasetMismatch(format!(
                "test set has d_in={} n_classes={}, training set d_in={} n_classes={}",
                tm.d_in, tm.n_classes, meta.d_in, meta.n_classes
            )));
        }
    }

    let n = train_data.len();
    let q = config.batch_size as f64 / n as f64;
    let steps = config.steps_for(n);
    let steps_per_epoch = n as f64 / config.batch_size as f64;
    let (noise_multiplier, calibrated_at_floor, accounting) = resolve_noise(config, q, steps)?;

    let clip = match config.mode {
        TrainMode::Sgd => f64::INFINITY,
        _ => config.clip_threshold.get(),
    };
    let sigma = match noise_multiplier {
        Some(z) if z > 0.0 => z * clip,
        _ => 0.0,
    };

    let seed = RandomSeed(config.seed);
    let mut params = ModelParams::init(dims, config.activation, seed);
    let mut sampling_rng = seed.stream(Stream::BatchSampling);
    let mut noise_rng = seed.stream(Stream::GradientNoise);
    let dim = dims.param_count();

    let epochs = config.epochs as usize;
    let mut loss_sums = vec![0.0; epochs];
    let mut loss_counts = vec![0usize; epochs];
    let mut executed = 0u64;
    let mut skipped = 0u64;

    for step in 0..steps {
        let batch = poisson_sample(n, q, &mut sampling_rng);
        observer.step_started(step, &batch);
        if batch.is_empty() {
            skipped += 1;
            continue;
        }
        let epoch = ((step as f64 / steps_per_epoch) as usize).min(epochs - 1);

        let mut public_sum = GradientVector::zeros(dim);
        let mut private_sum = GradientVector::zeros(dim);
        for &i in &batch {
            let sample = &train_data.samples()[i];
            let (private, public) = match config.mode {
                TrainMode::Dp => (sample.all_tokens(), TokenSubset::empty()),
                TrainMode::Maskdp | TrainMode::Sgd => sample.tokenize(),
            };
            let mut sample_loss = 0.0;
            if !public.is_empty() {
                let (loss, grad) = params.loss_and_grad(&public, sample.label)?;
                observer.public_contribution(step, i, &grad);
                public_sum += &grad;
                sample_loss += loss;
            }
            if !private.is_empty() {
                let (loss, grad) = params.loss_and_grad(&private, sample.label)?;
                let clipped = clip_to_norm(grad.clone(), clip);
                observer.private_contribution(step, i, &grad, &clipped);
                private_sum += &clipped;
                sample_loss += loss;
            }
            loss_sums[epoch] += sample_loss;
            loss_counts[epoch] += 1;
        }
        if sigma > 0.0 {
            let noise = gaussian_noise(dim, sigma, &mut noise_rng);
            observer.noise_added(step, &noise);
            private_sum += &noise;
        }
        let mut total = public_sum;
        total += &private_sum;
        total.scale(1.0 / batch.len() as f64);
        let lr = config.learning_rate_at(step, steps, steps_per_epoch);
        params.apply_update(&total, lr);
        executed += 1;
        observer.step_finished(step, &params);
    }

    let test_accuracy = match test_data {
        Some(test) if !test.is_empty() => Some(evaluate(&params, test, TokenPolicy::All)?),
        _ => None,
    };
    let epoch_losses = loss_sums
        .iter()
        .zip(&loss_counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    Ok(TrainOutcome {
        report: TrainReport {
            config: config.clone(),
            train_samples: n,
            sampling_rate: q,
            noise_multiplier,
            calibrated_at_floor,
            accounting,
            steps_attempted: steps,
            steps_executed: executed,
            steps_skipped: skipped,
            epoch_losses,
            test_accuracy,
            checkpoint: None,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        params,
    })
}

/// Which tokens the classifier sees at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPolicy {
    All,
    PublicOnly,
    PrivateOnly,
}

/// Fraction of samples whose arg-max logit (lowest index on ties) is the label.
pub fn evaluate(
    params: &ModelParams,
    data: &Dataset,
    policy: TokenPolicy,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let dims = params.dims();
    let meta = data.meta();
    if meta.d_in != dims.d_in || meta.n_classes != dims.n_classes {
        return Err(TrainError::DatasetMismatch(format!(
            "model expects d_in={} n_classes={}, dataset has d_in={} n_classes={}",
            dims.d_in, dims.n_classes, meta.d_in, meta.n_classes
        )));
    }
    let mut correct = 0usize;
    for sample in data.samples() {
        let subset = match policy {
            TokenPolicy::All => sample.all_tokens(),
            TokenPolicy::PublicOnly => sample.tokenize().1,
            TokenPolicy::PrivateOnly => sample.tokenize().0,
        };
        let logits = params.forward(&subset)?;
        let predicted = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &l)| {
                if l > best.1 {
                    (c, l)
                } else {
                    best
                }
            })
            .0;
        if predicted == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One sweep cell: a mode and a target epsilon (`None` = infinity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mode: TrainMode,
    pub epsilon: Option<f64>,
}

impl FromStr for SweepCell {
    type Err = String;
    /// `mode:epsilon`, where epsilon is a positive number or `inf`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (mode, eps) = s
            .split_once(':')
            .ok_or_else(|| format!("sweep cell {s:?} must look like mode:epsilon"))?;
        let mode: TrainMode = mode.trim().parse()?;
        let eps = eps.trim();
        let epsilon = if eps.eq_ignore_ascii_case("inf") || eps == "∞" {
            None
        } else {
            let v: f64 = eps
                .parse()
                .map_err(|e| format!("invalid epsilon {eps:?} in {s:?}: {e}"))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("epsilon must be > 0 or inf, got {v}"));
            }
            Some(v)
        };
        if mode == TrainMode::Sgd && epsilon.is_some() {
            return Err(format!("sgd has no privacy budget; use sgd:inf, not {s:?}"));
        }
        Ok(SweepCell { mode, epsilon })
    }
}

impl fmt::Display for SweepCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon {
            Some(e) => write!(f, "{}:{e}", self.mode),
            None => write!(f, "{}:inf", self.mode),
        }
    }
}

/// Default epsilon axis of a sweep (`None` is infinity).
pub const EPSILON_GRID: [Option<f64>; 7] = [
    Some(0.1),
    Some(0.25),
    Some(0.5),
    Some(0.75),
    Some(1.0),
    Some(5.0),
    None,
];

/// Training config for one cell and seed.
///
/// A finite epsilon calibrates the noise. Infinite epsilon in a private mode
/// trains without noise or clipping, which is the non-private reference of
/// that mode.
pub fn cell_config(base: &TrainConfig, cell: SweepCell, seed: u64) -> TrainConfig {
    let mut config = base.clone();
    config.mode = cell.mode;
    config.seed = seed;
    match cell.epsilon {
        Some(eps) => config.noise = NoiseSpec::TargetEpsilon(eps),
        None => {
            config.noise = NoiseSpec::Multiplier(0.0);
            config.clip_threshold = ClipThreshold::UNBOUNDED;
        }
    }
    config
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: TrainMode,
    /// Empty for infinite epsilon.
    pub epsilon_target: Option<f64>,
    /// Empty for `sgd`; `inf` for noiseless private runs.
    pub epsilon_realized: Option<f64>,
    pub seed_count: usize,
    pub acc_mean: f64,
    pub acc_median: f64,
    pub acc_std: f64,
    /// Mean over seeds.
    pub steps_executed: f64,
    /// Mean over seeds.
    pub steps_skipped: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs every cell for every seed. Seeds of one cell train in parallel
/// threads; results do not depend on scheduling.
pub fn sweep(
    cells: &[SweepCell],
    base: &TrainConfig,
    seeds: &[u64],
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<Vec<SweepRow>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("a sweep needs at least one seed".into()));
    }
    if test_data.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let mut rows = Vec::with_capacity(cells.len());
    for &cell in cells {
        let reports: Vec<TrainReport> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let config = cell_config(base, cell, seed);
                    scope.spawn(move || train(&config, train_data, Some(test_data)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .expect("training thread panicked")
                        .map(|o| o.report)
                })
                .collect::<Result<_, _>>()
        })?;

        let accs: Vec<f64> = reports
            .iter()
            .map(|r| r.test_accuracy.expect("test set is non-empty"))
            .collect();
        let k = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / k;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            mode: cell.mode,
            epsilon_target: cell.epsilon,
            epsilon_realized: reports[0].accounting.map(|a| a.epsilon()),
            seed_count: reports.len(),
            acc_mean: mean,
            acc_median: median(&accs),
            acc_std: std,
            steps_executed: reports.iter().map(|r| r.steps_executed as f64).sum::<f64>() / k,
            steps_skipped: reports.iter().map(|r| r.steps_skipped as f64).sum::<f64>() / k,
        });
    }
    Ok(rows)
}

/// Column order of the sweep table.
pub const SWEEP_COLUMNS: [&str; 9] = [
    "mode",
    "epsilon_target",
    "epsilon_realized",
    "seed_count",
    "acc_mean",
    "acc_median",
    "acc_std",
    "steps_executed",
    "steps_skipped",
];

/// Writes rows as comma-separated values with a header line.
pub fn write_sweep_table<W: Write>(rows: &[SweepRow], w: W) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)
            .map_err(|e| TrainError::Table(e.to_string()))?;
    }
    if rows.is_empty() {
        out.write_record(SWEEP_COLUMNS)
            .map_err(|e| TrainError::Table(e.to_string()))?;
    }
    out.flush().map_err(|e| TrainError::Table(e.to_string()))?;
    Ok(())
}
