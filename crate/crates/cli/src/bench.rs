//! Benchmark orchestration: per-method evaluation with timing, rate and
//! time ratios, report emission, and the experiment pipeline behind the
//! `bench` command.
//!
//! All methods in one benchmark point consume the byte-identical test
//! dataset (its hash lands in the report). Timing uses the monotonic
//! clock with a warm-up pass excluded: per-sample methods take the median
//! of three runs per sample, the network takes the median of three
//! batched passes amortized over the batch. Wall-time fields are the only
//! non-reproducible part of a report. Timing covers configuration
//! computation only; the shared scoring pass is excluded for every method.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use irswpcn::baselines::{self, GaParams};
use irswpcn::channel::{
    dbm_to_watts, feature_scales, generate_dataset, write_dataset, Dataset, Distances,
    FeatureVector, SystemParams,
};
use irswpcn::evaluator::{self, PhaseConfig};
use irswpcn::irsnet::{
    self, forward, hidden_sizes, init_network, load_checkpoint, save_checkpoint, Mode,
    NetworkParams, TrainConfig,
};
use irswpcn::rng::SplitMix64;

#[derive(Debug)]
pub enum CliError {
    Msg(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Msg(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn new(msg: impl Into<String>) -> Self {
        CliError::Msg(msg.into())
    }
}

macro_rules! from_error {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Msg(e.to_string())
            }
        }
    };
}
from_error!(irswpcn::channel::ChannelError);
from_error!(irswpcn::evaluator::EvalError);
from_error!(irswpcn::irsnet::IrsNetError);
from_error!(irswpcn::baselines::BaselineError);
from_error!(std::io::Error);
from_error!(serde_json::Error);

/// FNV-1a over a byte stream; the dataset integrity tag in reports.
/// Not cryptographic, just a stable fingerprint.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// A solver that maps feature vectors to configurations.
pub trait Solver {
    fn name(&self) -> String;
    /// Batched solvers are timed once over the whole set and amortized;
    /// per-sample solvers are timed sample by sample.
    fn batched(&self) -> bool {
        false
    }
    fn solve_one(
        &mut self,
        index: usize,
        f: &FeatureVector,
        p: &SystemParams,
    ) -> Result<PhaseConfig, CliError>;
    fn solve_batch(
        &mut self,
        feats: &[FeatureVector],
        p: &SystemParams,
    ) -> Result<Vec<PhaseConfig>, CliError> {
        feats.iter().enumerate().map(|(i, f)| self.solve_one(i, f, p)).collect()
    }
}

/// Genetic algorithm, re-seeded per sample from the base seed.
pub struct GaSolver {
    pub base: GaParams,
}

impl GaSolver {
    fn params_for(&self, index: usize) -> GaParams {
        GaParams { seed: SplitMix64::derive(self.base.seed, index as u64), ..self.base.clone() }
    }
}

impl Solver for GaSolver {
    fn name(&self) -> String {
        format!("ga{}", self.base.generations)
    }
    fn solve_one(
        &mut self,
        index: usize,
        f: &FeatureVector,
        p: &SystemParams,
    ) -> Result<PhaseConfig, CliError> {
        let ga = self.params_for(index);
        Ok(baselines::ga_throughput(f, p, &ga)?.0)
    }
}

/// Random phases with the split optimized by the one-dimensional GA.
pub struct RandomSolver {
    pub base: GaParams,
}

impl Solver for RandomSolver {
    fn name(&self) -> String {
        "random".into()
    }
    fn solve_one(
        &mut self,
        index: usize,
        f: &FeatureVector,
        p: &SystemParams,
    ) -> Result<PhaseConfig, CliError> {
        let ga =
            GaParams { seed: SplitMix64::derive(self.base.seed, index as u64), ..self.base.clone() };
        let mut rng = SplitMix64::new(SplitMix64::derive(ga.seed, 1));
        Ok(baselines::random_baseline(f, p, &ga, &mut rng)?.0)
    }
}

/// Exhaustive lattice oracle (small instances only).
pub struct OracleSolver {
    pub resolution: usize,
}

impl Solver for OracleSolver {
    fn name(&self) -> String {
        format!("oracle{}", self.resolution)
    }
    fn solve_one(
        &mut self,
        _index: usize,
        f: &FeatureVector,
        p: &SystemParams,
    ) -> Result<PhaseConfig, CliError> {
        Ok(baselines::grid_oracle(f, p, self.resolution)?.0)
    }
}

/// Trained network, batch-amortized inference.
pub struct NetSolver {
    pub params: NetworkParams,
}

impl Solver for NetSolver {
    fn name(&self) -> String {
        "irsnet".into()
    }
    fn batched(&self) -> bool {
        true
    }
    fn solve_one(
        &mut self,
        _index: usize,
        f: &FeatureVector,
        _p: &SystemParams,
    ) -> Result<PhaseConfig, CliError> {
        Ok(forward(&self.params, std::slice::from_ref(f), Mode::Inference)?.remove(0))
    }
    fn solve_batch(
        &mut self,
        feats: &[FeatureVector],
        _p: &SystemParams,
    ) -> Result<Vec<PhaseConfig>, CliError> {
        Ok(forward(&self.params, feats, Mode::Inference)?)
    }
}

/// One method's results over a test set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodEval {
    pub method: String,
    pub samples: usize,
    /// Mean throughput, bits/s/Hz.
    pub mean_throughput: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    /// Wall time per sample, milliseconds (non-deterministic).
    pub per_sample_ms: f64,
    pub mean_tau: f64,
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Runs a solver over the test set, scoring every configuration through
/// the evaluator. The timed region covers configuration computation only.
pub fn evaluate_method(
    solver: &mut dyn Solver,
    feats: &[FeatureVector],
    p: &SystemParams,
) -> Result<MethodEval, CliError> {
    if feats.is_empty() {
        return Err(CliError::new("test set is empty"));
    }
    let n = feats.len();
    let mut configs: Vec<PhaseConfig>;
    let per_sample_ms;
    if solver.batched() {
        // Warm-up pass excluded from timing.
        solver.solve_batch(&feats[..n.min(32)], p)?;
        let mut times = [0.0f64; 3];
        configs = Vec::new();
        for t in &mut times {
            let start = Instant::now();
            configs = solver.solve_batch(feats, p)?;
            *t = start.elapsed().as_secs_f64();
        }
        per_sample_ms = median3(times[0], times[1], times[2]) * 1e3 / n as f64;
    } else {
        solver.solve_one(0, &feats[0], p)?; // warm-up
        configs = Vec::with_capacity(n);
        let mut total_ms = 0.0;
        for (i, f) in feats.iter().enumerate() {
            let mut times = [0.0f64; 3];
            let mut cfg = None;
            for t in &mut times {
                let start = Instant::now();
                let solved = solver.solve_one(i, f, p)?;
                *t = start.elapsed().as_secs_f64();
                cfg.get_or_insert(solved);
            }
            total_ms += median3(times[0], times[1], times[2]) * 1e3;
            configs.push(cfg.unwrap());
        }
        per_sample_ms = total_ms / n as f64;
    }

    let mut values = Vec::with_capacity(n);
    let mut tau_acc = 0.0;
    for (f, cfg) in feats.iter().zip(&configs) {
        values.push(evaluator::throughput(f, cfg, p)?);
        tau_acc += cfg.tau;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(MethodEval {
        method: solver.name(),
        samples: n,
        mean_throughput: mean,
        std_err,
        per_sample_ms,
        mean_tau: tau_acc / n as f64,
    })
}

/// Throughput quotient of a method against the genetic-algorithm anchor.
pub fn rate_ratio(method_throughput: f64, ga_throughput: f64) -> Result<f64, CliError> {
    if ga_throughput <= 0.0 {
        return Err(CliError::new("degenerate report: anchor throughput is not positive"));
    }
    Ok(method_throughput / ga_throughput)
}

/// Wall-time quotient of the genetic algorithm against a method.
pub fn time_ratio(ga_time: f64, method_time: f64) -> Result<f64, CliError> {
    if method_time <= 0.0 {
        return Err(CliError::new("degenerate report: method time is not positive"));
    }
    Ok(ga_time / method_time)
}

// ---- experiment configuration --------------------------------------------

fn default_out_dir() -> PathBuf {
    PathBuf::from("bench-out")
}
fn default_points() -> Vec<PointConfig> {
    vec![PointConfig::default()]
}
fn default_train_size() -> usize {
    100_000
}
fn default_val_size() -> usize {
    10_000
}
fn default_test_size() -> usize {
    1000
}
fn default_methods() -> Vec<String> {
    vec!["ga5".into(), "irsnet".into(), "random".into()]
}

/// One (M, N, interferer) benchmark point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub antennas: usize,
    pub elements: usize,
    /// Interferer power in dBm; absent means noise-limited.
    #[serde(default)]
    pub interferer_dbm: Option<f64>,
}

impl Default for PointConfig {
    fn default() -> Self {
        PointConfig { antennas: 2, elements: 8, interferer_dbm: None }
    }
}

/// Physics overrides; anything omitted keeps the reference defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default)]
    pub pb_power: Option<f64>,
    #[serde(default)]
    pub noise_dbm: Option<f64>,
    #[serde(default)]
    pub eh_efficiency: Option<f64>,
    #[serde(default)]
    pub coherence_time: Option<f64>,
    #[serde(default)]
    pub pathloss_coeff: Option<f64>,
    #[serde(default)]
    pub alpha_irs: Option<f64>,
    #[serde(default)]
    pub alpha_direct: Option<f64>,
    #[serde(default)]
    pub cascade_gain: Option<f64>,
    #[serde(default)]
    pub distances: Option<Distances>,
}

impl PhysicsConfig {
    pub fn apply(&self, point: &PointConfig) -> SystemParams {
        let mut p = SystemParams::new(point.antennas, point.elements);
        if let Some(dbm) = point.interferer_dbm {
            p.interferer_power = dbm_to_watts(dbm);
        }
        if let Some(v) = self.pb_power {
            p.pb_power = v;
        }
        if let Some(v) = self.noise_dbm {
            p.noise_power = dbm_to_watts(v);
        }
        if let Some(v) = self.eh_efficiency {
            p.eh_efficiency = v;
        }
        if let Some(v) = self.coherence_time {
            p.coherence_time = v;
        }
        if let Some(v) = self.pathloss_coeff {
            p.pathloss_coeff = v;
        }
        if let Some(v) = self.alpha_irs {
            p.alpha_irs = v;
        }
        if let Some(v) = self.alpha_direct {
            p.alpha_direct = v;
        }
        if let Some(v) = self.cascade_gain {
            p.cascade_gain = v;
        }
        if let Some(d) = self.distances {
            p.distances = d;
        }
        p
    }
}

/// Training hyper-parameters for the experiment file (the seed comes from
/// the experiment seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "TrainSection::default_batch")]
    pub batch_size: usize,
    #[serde(default = "TrainSection::default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "TrainSection::default_lr")]
    pub initial_lr: f64,
    #[serde(default = "TrainSection::default_decay_rate")]
    pub decay_rate: f64,
    #[serde(default = "TrainSection::default_decay_steps")]
    pub decay_steps: u64,
    #[serde(default = "TrainSection::default_patience")]
    pub patience: usize,
    #[serde(default = "TrainSection::default_normalize")]
    pub normalize_features: bool,
}

impl TrainSection {
    fn default_batch() -> usize {
        500
    }
    fn default_epochs() -> usize {
        100
    }
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_decay_rate() -> f64 {
        0.5
    }
    fn default_decay_steps() -> u64 {
        50_000
    }
    fn default_patience() -> usize {
        20
    }
    fn default_normalize() -> bool {
        true
    }

    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            initial_lr: self.initial_lr,
            decay_rate: self.decay_rate,
            decay_steps: self.decay_steps,
            patience: self.patience,
            seed,
            normalize_features: self.normalize_features,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Genetic-algorithm settings for the experiment file; generation counts
/// come from the method names (ga5, ga20, ...).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    #[serde(default)]
    pub population: Option<usize>,
    #[serde(default)]
    pub crossover_prob: Option<f64>,
    #[serde(default)]
    pub mutation_prob: Option<f64>,
    #[serde(default)]
    pub mutation_scale: Option<f64>,
    #[serde(default)]
    pub tournament: Option<usize>,
    #[serde(default)]
    pub elitism: Option<usize>,
}

impl GaSection {
    pub fn to_params(&self, elements: usize, generations: usize, seed: u64) -> GaParams {
        let mut ga = GaParams::for_elements(elements, generations, seed);
        if let Some(v) = self.population {
            ga.population = v;
        }
        if let Some(v) = self.crossover_prob {
            ga.crossover_prob = v;
        }
        if let Some(v) = self.mutation_prob {
            ga.mutation_prob = v;
        }
        if let Some(v) = self.mutation_scale {
            ga.mutation_scale = v;
        }
        if let Some(v) = self.tournament {
            ga.tournament = v;
        }
        if let Some(v) = self.elitism {
            ga.elitism = v;
        }
        ga
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_train_size")]
    pub train: usize,
    #[serde(default = "default_val_size")]
    pub validation: usize,
    #[serde(default = "default_test_size")]
    pub test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: default_train_size(),
            validation: default_val_size(),
            test: default_test_size(),
        }
    }
}

/// The experiment file: one JSON document (see the repository README for
/// the schema and an example).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own substream.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_points")]
    pub points: Vec<PointConfig>,
    #[serde(default)]
    pub system: PhysicsConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ga: GaSection,
    /// Method names: `ga<generations>`, `random`, `irsnet`,
    /// `oracle<resolution>`.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Optional pre-trained checkpoint; when set, `irsnet` loads instead
    /// of training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Free-text machine descriptor echoed into the report.
    #[serde(default)]
    pub environment: Option<String>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::new(format!("bad experiment config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.points.is_empty() {
            return Err(CliError::new("experiment needs at least one point"));
        }
        if self.methods.is_empty() {
            return Err(CliError::new("experiment needs at least one method"));
        }
        for m in &self.methods {
            parse_method(m)?;
        }
        if self.data.test == 0 {
            return Err(CliError::new("test set size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Ga { generations: usize },
    Random,
    IrsNet,
    Oracle { resolution: usize },
}

pub fn parse_method(name: &str) -> Result<MethodSpec, CliError> {
    if name == "random" {
        return Ok(MethodSpec::Random);
    }
    if name == "irsnet" {
        return Ok(MethodSpec::IrsNet);
    }
    if let Some(g) = name.strip_prefix("ga") {
        let generations: usize =
            g.parse().map_err(|_| CliError::new(format!("bad method name {name}")))?;
        if generations == 0 {
            return Err(CliError::new("ga method needs at least one generation"));
        }
        return Ok(MethodSpec::Ga { generations });
    }
    if let Some(r) = name.strip_prefix("oracle") {
        let resolution: usize =
            r.parse().map_err(|_| CliError::new(format!("bad method name {name}")))?;
        return Ok(MethodSpec::Oracle { resolution });
    }
    Err(CliError::new(format!(
        "unknown method {name} (expected ga<generations>, random, irsnet, oracle<resolution>)"
    )))
}

// ---- report ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodReport {
    #[serde(flatten)]
    pub eval: MethodEval,
    /// Throughput quotient against the anchor GA method, when present.
    pub rate_ratio: Option<f64>,
    /// Anchor-GA time divided by this method's time, when present.
    pub time_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointReport {
    pub antennas: usize,
    pub elements: usize,
    pub interferer_dbm: Option<f64>,
    /// FNV-1a of the test dataset bytes, hex.
    pub test_dataset_hash: String,
    pub methods: Vec<MethodReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    /// "complete", or "partial" with the failed stage named.
    pub status: String,
    pub failed_stage: Option<String>,
    pub environment: String,
    pub config: ExperimentConfig,
    pub points: Vec<PointReport>,
}

impl BenchReport {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }
}

fn default_environment() -> String {
    format!("{} {}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Writes `report.csv`: one row per (point, method); floats use Rust's
/// shortest round-trip formatting, so reading the CSV back reproduces
/// every numeric field exactly.
pub fn write_report_csv(report: &BenchReport, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(
        "antennas,elements,interferer_dbm,method,samples,mean_throughput,std_err,per_sample_ms,mean_tau,rate_ratio,time_ratio\n",
    );
    for point in &report.points {
        for m in &point.methods {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                point.antennas,
                point.elements,
                opt(point.interferer_dbm),
                m.eval.method,
                m.eval.samples,
                m.eval.mean_throughput,
                m.eval.std_err,
                m.eval.per_sample_ms,
                m.eval.mean_tau,
                opt(m.rate_ratio),
                opt(m.time_ratio),
            ));
        }
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::new(format!("cannot write {}: {e}", path.display())))
}

/// One parsed row of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub antennas: usize,
    pub elements: usize,
    pub interferer_dbm: Option<f64>,
    pub eval: MethodEval,
    pub rate_ratio: Option<f64>,
    pub time_ratio: Option<f64>,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::new("empty csv"))?;
    if !header.starts_with("antennas,") {
        return Err(CliError::new("unrecognized csv header"));
    }
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 11 {
            return Err(CliError::new(format!("row {}: expected 11 cells", ln + 2)));
        }
        let opt = |s: &str| -> Result<Option<f64>, CliError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| CliError::new(format!("row {}: {e}", ln + 2)))
            }
        };
        let num = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|e| CliError::new(format!("row {}: {e}", ln + 2)))
        };
        rows.push(CsvRow {
            antennas: cells[0].parse().map_err(|e| CliError::new(format!("row {}: {e}", ln + 2)))?,
            elements: cells[1].parse().map_err(|e| CliError::new(format!("row {}: {e}", ln + 2)))?,
            interferer_dbm: opt(cells[2])?,
            eval: MethodEval {
                method: cells[3].to_string(),
                samples: cells[4]
                    .parse()
                    .map_err(|e| CliError::new(format!("row {}: {e}", ln + 2)))?,
                mean_throughput: num(cells[5])?,
                std_err: num(cells[6])?,
                per_sample_ms: num(cells[7])?,
                mean_tau: num(cells[8])?,
            },
            rate_ratio: opt(cells[9])?,
            time_ratio: opt(cells[10])?,
        });
    }
    Ok(rows)
}

pub fn write_history_csv(history: &[irsnet::EpochStats], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in history {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::new(format!("cannot write {}: {e}", path.display())))
}

// ---- the experiment pipeline ----------------------------------------------

struct StageGuard<'a> {
    report: &'a mut BenchReport,
}

impl StageGuard<'_> {
    fn fail(&mut self, stage: &str, err: CliError) -> CliError {
        self.report.status = "partial".into();
        self.report.failed_stage = Some(stage.to_string());
        CliError::new(format!("stage {stage} failed: {err}"))
    }
}

/// Runs the whole experiment: generates (or reuses) datasets, trains or
/// loads the network when requested, evaluates every method on the shared
/// test set, and writes `report.json`, `report.csv`, and per-point
/// training-history CSVs into the output directory. On a stage failure the
/// report is still written, marked partial with the failed stage named.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BenchReport, CliError> {
    cfg.validate()?;
    let out_dir = match std::env::var_os("IRSWPCN_OUT_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => cfg.out_dir.clone(),
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::new(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut report = BenchReport {
        status: "complete".into(),
        failed_stage: None,
        environment: cfg.environment.clone().unwrap_or_else(default_environment),
        config: cfg.clone(),
        points: Vec::new(),
    };

    let outcome = run_points(cfg, &out_dir, &mut report);
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(out_dir.join("report.json"), json)
        .map_err(|e| CliError::new(format!("cannot write report.json: {e}")))?;
    write_report_csv(&report, &out_dir.join("report.csv"))?;
    outcome.map(|_| report)
}

fn run_points(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut BenchReport,
) -> Result<(), CliError> {
    let specs: Vec<(String, MethodSpec)> =
        cfg.methods.iter().map(|m| (m.clone(), parse_method(m).unwrap())).collect();
    let needs_net = specs.iter().any(|(_, s)| matches!(s, MethodSpec::IrsNet));
    let anchor = specs.iter().find_map(|(_, s)| match s {
        MethodSpec::Ga { generations } => Some(*generations),
        _ => None,
    });

    for point in &cfg.points {
        let tag = format!("m{}n{}{}", point.antennas, point.elements, match point.interferer_dbm {
            Some(dbm) => format!("pi{dbm}"),
            None => "off".into(),
        });
        let mut guard = StageGuard { report };
        let system = cfg.system.apply(point);
        system.validate().map_err(|e| guard.fail(&format!("{tag}/validate"), e.into()))?;
        let interference = point.interferer_dbm.is_some();

        // Datasets. The per-purpose seeds are derived from the master seed
        // and fixed offsets so points are independent but reproducible.
        let test_seed = SplitMix64::derive(cfg.seed, 3);
        let test_set = generate_dataset(&system, interference, cfg.data.test, test_seed)
            .map_err(|e| guard.fail(&format!("{tag}/gen-data"), e.into()))?;
        let test_path = out_dir.join(format!("test-{tag}.iwds"));
        write_dataset(&test_set, &test_path)
            .map_err(|e| guard.fail(&format!("{tag}/gen-data"), e.into()))?;
        let hash = fnv1a64(
            &std::fs::read(&test_path)
                .map_err(|e| guard.fail(&format!("{tag}/gen-data"), e.into()))?,
        );

        // The network, trained or loaded.
        let net = if needs_net {
            Some(
                obtain_network(cfg, point, &system, &test_set, out_dir, &tag)
                    .map_err(|e| guard.fail(&format!("{tag}/train"), e))?,
            )
        } else {
            None
        };

        let mut methods = Vec::new();
        let mut anchor_eval: Option<MethodEval> = None;
        for (name, spec) in &specs {
            let mut solver: Box<dyn Solver> = match spec {
                MethodSpec::Ga { generations } => Box::new(GaSolver {
                    base: cfg.ga.to_params(
                        point.elements,
                        *generations,
                        SplitMix64::derive(cfg.seed, 10),
                    ),
                }),
                MethodSpec::Random => Box::new(RandomSolver {
                    base: cfg.ga.to_params(point.elements, 5, SplitMix64::derive(cfg.seed, 11)),
                }),
                MethodSpec::IrsNet => Box::new(NetSolver { params: net.clone().unwrap() }),
                MethodSpec::Oracle { resolution } => {
                    Box::new(OracleSolver { resolution: *resolution })
                }
            };
            let eval = evaluate_method(solver.as_mut(), &test_set.features, &system)
                .map_err(|e| guard.fail(&format!("{tag}/evaluate/{name}"), e))?;
            if anchor_eval.is_none() && matches!(spec, MethodSpec::Ga { generations } if Some(*generations) == anchor)
            {
                anchor_eval = Some(eval.clone());
            }
            methods.push(eval);
        }

        let methods = methods
            .into_iter()
            .map(|eval| {
                let (rate, time) = match &anchor_eval {
                    Some(a) => (
                        Some(rate_ratio(eval.mean_throughput, a.mean_throughput)?),
                        Some(time_ratio(a.per_sample_ms, eval.per_sample_ms)?),
                    ),
                    None => (None, None),
                };
                Ok(MethodReport { eval, rate_ratio: rate, time_ratio: time })
            })
            .collect::<Result<Vec<_>, CliError>>()
            .map_err(|e| guard.fail(&format!("{tag}/ratios"), e))?;

        guard.report.points.push(PointReport {
            antennas: point.antennas,
            elements: point.elements,
            interferer_dbm: point.interferer_dbm,
            test_dataset_hash: format!("{hash:016x}"),
            methods,
        });
    }
    Ok(())
}

fn obtain_network(
    cfg: &ExperimentConfig,
    point: &PointConfig,
    system: &SystemParams,
    test_set: &Dataset,
    out_dir: &Path,
    tag: &str,
) -> Result<NetworkParams, CliError> {
    if let Some(path) = &cfg.checkpoint {
        let params = load_checkpoint(path)?;
        if params.arch.feature_len != test_set.feature_len() {
            return Err(CliError::new(format!(
                "checkpoint expects {} inputs but the dataset has {}",
                params.arch.feature_len,
                test_set.feature_len()
            )));
        }
        return Ok(params);
    }
    let interference = point.interferer_dbm.is_some();
    let train_set =
        generate_dataset(system, interference, cfg.data.train, SplitMix64::derive(cfg.seed, 1))?;
    let val_set = generate_dataset(
        system,
        interference,
        cfg.data.validation,
        SplitMix64::derive(cfg.seed, 2),
    )?;
    let f_s = train_set.feature_len();
    let hidden = hidden_sizes(point.antennas, point.elements, system.interferer_power, f_s);
    let mut params =
        init_network(f_s, &hidden, point.elements, SplitMix64::derive(cfg.seed, 20));
    let train_cfg = cfg.train.to_config(SplitMix64::derive(cfg.seed, 21));
    if train_cfg.normalize_features {
        params = params.with_feature_scale(feature_scales(system, interference));
    }
    let out = irsnet::train(&train_set, &val_set, params, &train_cfg, system)?;
    if let irsnet::StopReason::NonFiniteAbort { epoch, step } = out.stop {
        return Err(CliError::new(format!(
            "training aborted on a non-finite loss at epoch {epoch}, step {step}"
        )));
    }
    write_history_csv(&out.history, &out_dir.join(format!("history-{tag}.csv")))?;
    save_checkpoint(&out.params, &out_dir.join(format!("irsnet-{tag}.json")))?;
    Ok(out.params)
}

/// dBm flag shared by several commands: `off` (noise-limited) or a number.
pub fn parse_pi_dbm(s: &str) -> Result<Option<f64>, CliError> {
    if s.eq_ignore_ascii_case("off") {
        Ok(None)
    } else {
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| CliError::new(format!("bad interferer power {s:?} (expected `off` or dBm)")))
    }
}

/// System parameters for a dataset plus an interferer flag, checking mode
/// consistency.
pub fn system_for_dataset(
    ds: &Dataset,
    pi_dbm: Option<f64>,
    cascade_gain: Option<f64>,
) -> Result<SystemParams, CliError> {
    if pi_dbm.is_some() != ds.interference {
        return Err(CliError::new(if ds.interference {
            "dataset carries interferer blocks: pass --pi-dbm <dbm>"
        } else {
            "dataset is noise-limited: pass --pi-dbm off"
        }));
    }
    let mut p = SystemParams::new(ds.antennas, ds.elements);
    if let Some(dbm) = pi_dbm {
        p.interferer_power = dbm_to_watts(dbm);
    }
    if let Some(g) = cascade_gain {
        p.cascade_gain = g;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ConstantSolver {
        cfg: PhaseConfig,
    }

    impl Solver for ConstantSolver {
        fn name(&self) -> String {
            "constant".into()
        }
        fn solve_one(
            &mut self,
            _i: usize,
            _f: &FeatureVector,
            _p: &SystemParams,
        ) -> Result<PhaseConfig, CliError> {
            Ok(self.cfg.clone())
        }
    }

    #[test]
    fn constant_method_mean_equals_direct_average() {
        let p = SystemParams::new(2, 4);
        let ds = generate_dataset(&p, false, 50, 3).unwrap();
        let cfg = PhaseConfig::new(vec![0.4; 4], vec![1.1; 4], 0.42).unwrap();
        let mut solver = ConstantSolver { cfg: cfg.clone() };
        let eval = evaluate_method(&mut solver, &ds.features, &p).unwrap();
        let want = ds
            .features
            .iter()
            .map(|f| evaluator::throughput(f, &cfg, &p).unwrap())
            .sum::<f64>()
            / 50.0;
        assert!((eval.mean_throughput - want).abs() < 1e-14);
        assert_eq!(eval.samples, 50);
        assert!((eval.mean_tau - 0.42).abs() < 1e-15);
    }

    #[test]
    fn ratio_arithmetic_and_guards() {
        assert_eq!(rate_ratio(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(time_ratio(10.0, 10.0).unwrap(), 1.0);
        // Reference quotients from the published comparison table.
        assert!((rate_ratio(3.2871 * 0.991, 3.2871).unwrap() - 0.991).abs() < 1e-12);
        let t = time_ratio(203.03, 0.55).unwrap();
        assert!((t - 369.1).abs() < 0.1, "{t}");
        let t = time_ratio(270.36, 5.02).unwrap();
        assert!((t - 53.9).abs() < 0.1, "{t}");
        assert!(rate_ratio(1.0, 0.0).is_err());
        assert!(time_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!(parse_method("ga5").unwrap(), MethodSpec::Ga { generations: 5 });
        assert_eq!(parse_method("ga20").unwrap(), MethodSpec::Ga { generations: 20 });
        assert_eq!(parse_method("random").unwrap(), MethodSpec::Random);
        assert_eq!(parse_method("irsnet").unwrap(), MethodSpec::IrsNet);
        assert_eq!(parse_method("oracle64").unwrap(), MethodSpec::Oracle { resolution: 64 });
        assert!(parse_method("sa").is_err());
        assert!(parse_method("ga").is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let eval = MethodEval {
            method: "ga5".into(),
            samples: 1000,
            mean_throughput: 3.287_100_000_000_001,
            std_err: 0.012_345_678_901_234_567,
            per_sample_ms: 0.123_456_789_012_345_67,
            mean_tau: 1.0 / 3.0,
        };
        let report = BenchReport {
            status: "complete".into(),
            failed_stage: None,
            environment: "test".into(),
            config: serde_json::from_str(r#"{"seed": 1}"#).unwrap(),
            points: vec![PointReport {
                antennas: 2,
                elements: 8,
                interferer_dbm: Some(10.0),
                test_dataset_hash: "00".into(),
                methods: vec![MethodReport {
                    eval: eval.clone(),
                    rate_ratio: Some(0.626_000_000_000_000_1),
                    time_ratio: None,
                }],
            }],
        };
        let path = std::env::temp_dir().join("irswpcn_report_rt.csv");
        write_report_csv(&report, &path).unwrap();
        let rows = parse_report_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].eval, eval);
        assert_eq!(rows[0].rate_ratio, Some(0.626_000_000_000_000_1));
        assert_eq!(rows[0].time_ratio, None);
        assert_eq!(rows[0].interferer_dbm, Some(10.0));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.points.len(), 1);
        assert_eq!(cfg.points[0].antennas, 2);
        assert_eq!(cfg.data.test, 1000);
        assert_eq!(cfg.methods, vec!["ga5", "irsnet", "random"]);
        // Unknown fields are rejected.
        let bad = serde_json::from_str::<ExperimentConfig>(r#"{"seed": 1, "bogus": 2}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn pi_flag_parses() {
        assert_eq!(parse_pi_dbm("off").unwrap(), None);
        assert_eq!(parse_pi_dbm("10").unwrap(), Some(10.0));
        assert!(parse_pi_dbm("loud").is_err());
        // 10 dBm converts to 10 mW.
        assert!((dbm_to_watts(10.0) - 0.01).abs() < 1e-18);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_ne!(fnv1a64(b"ab"), fnv1a64(b"ba"));
    }
}
