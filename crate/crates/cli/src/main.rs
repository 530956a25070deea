//! Command-line surface for the IRS-assisted WPCN throughput workbench.
//!
//! Subcommands cover the dataset lifecycle (`gen-data`), network training
//! and inference (`train`, `infer`), the solver baselines (`ga-opt`,
//! `random-baseline`, `oracle`), full benchmark runs (`bench`), and report
//! re-emission (`report`). Every stochastic command takes an explicit
//! `--seed`. Powers cross the boundary in dBm and are converted to watts
//! exactly once, here.
//!
//! Environment overrides: `IRSWPCN_OUT_DIR` redirects benchmark output,
//! `IRSWPCN_THREADS` parallelizes the bulk per-sample solver commands
//! (`ga-opt`, `random-baseline`, `oracle`) across samples with per-sample
//! derived seeds; timed benchmark runs stay single-threaded for
//! comparability.

mod bench;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bench::{parse_pi_dbm, system_for_dataset, CliError};
use irswpcn::baselines::{self, GaParams};
use irswpcn::channel::{
    feature_scales, generate_dataset, read_dataset, write_dataset, Dataset, FeatureVector,
    SystemParams,
};
use irswpcn::evaluator::{self, PhaseConfig};
use irswpcn::irsnet::{
    self, forward, hidden_sizes, init_network, load_checkpoint, save_checkpoint, Mode, TrainConfig,
};
use irswpcn::rng::SplitMix64;

#[derive(Parser)]
#[command(name = "irswpcn", version, about = "IRS-assisted WPCN throughput workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Dataset file (.iwds).
    #[arg(long)]
    data: PathBuf,
    /// Interferer power in dBm, or `off` for noise-limited evaluation.
    #[arg(long, default_value = "off")]
    pi_dbm: String,
    /// Cascade power gain override (1 = plain per-link path loss).
    #[arg(long)]
    cascade_gain: Option<f64>,
}

impl DataArg {
    fn load(&self) -> Result<(Dataset, SystemParams), CliError> {
        let ds = read_dataset(&self.data)?;
        let p = system_for_dataset(&ds, parse_pi_dbm(&self.pi_dbm)?, self.cascade_gain)?;
        Ok((ds, p))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a feature dataset under the block-fading model.
    GenData {
        /// Beacon antennas M.
        #[arg(long)]
        m: usize,
        /// Reflecting elements N.
        #[arg(long)]
        n: usize,
        /// Interferer power in dBm, or `off`: controls whether interferer
        /// feature blocks are included.
        #[arg(long, default_value = "off")]
        pi_dbm: String,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cascade power gain override (1 = plain per-link path loss).
        #[arg(long)]
        cascade_gain: Option<f64>,
    },
    /// Train the phase-shift network on a dataset pair.
    Train {
        /// Training dataset (.iwds).
        #[arg(long)]
        train_data: PathBuf,
        /// Validation dataset (.iwds).
        #[arg(long)]
        val_data: PathBuf,
        /// Interferer power in dBm, or `off`.
        #[arg(long, default_value = "off")]
        pi_dbm: String,
        #[arg(long)]
        seed: u64,
        /// Checkpoint output path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss curve CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        batch_size: usize,
        #[arg(long, default_value_t = 100)]
        max_epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        initial_lr: f64,
        #[arg(long, default_value_t = 0.5)]
        decay_rate: f64,
        #[arg(long, default_value_t = 50_000)]
        decay_steps: u64,
        #[arg(long, default_value_t = 20)]
        patience: usize,
        /// Feed raw features instead of dividing by their analytic scale.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long)]
        cascade_gain: Option<f64>,
    },
    /// Run a trained network over a dataset and score the decisions.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        /// Per-sample CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize each sample with the genetic algorithm.
    GaOpt {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        generations: usize,
        #[arg(long, default_value_t = 50)]
        population: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random phases with the split optimized by the 1-D genetic algorithm.
    RandomBaseline {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive lattice search (small instances; budget-guarded).
    Oracle {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-emit the CSV view of a saved benchmark report.
    Report {
        /// report.json produced by `bench`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn thread_count() -> usize {
    std::env::var("IRSWPCN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

/// Applies a per-sample solver over the dataset, fanning out across
/// `IRSWPCN_THREADS` chunks. Seeds are derived per sample, so the result
/// is identical for any thread count.
fn solve_all<F>(feats: &[FeatureVector], solve: F) -> Result<Vec<(PhaseConfig, f64)>, CliError>
where
    F: Fn(usize, &FeatureVector) -> Result<(PhaseConfig, f64), CliError> + Sync,
{
    let threads = thread_count().min(feats.len().max(1));
    if threads <= 1 {
        return feats.iter().enumerate().map(|(i, f)| solve(i, f)).collect();
    }
    let chunk = feats.len().div_ceil(threads);
    let results: Vec<Result<Vec<(PhaseConfig, f64)>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = feats
            .chunks(chunk)
            .enumerate()
            .map(|(ci, slice)| {
                let solve = &solve;
                scope.spawn(move || {
                    slice
                        .iter()
                        .enumerate()
                        .map(|(j, f)| solve(ci * chunk + j, f))
                        .collect::<Result<Vec<_>, CliError>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(feats.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn write_sample_csv(
    path: &PathBuf,
    rows: &[(PhaseConfig, f64)],
) -> Result<(), CliError> {
    let mut out = String::from("index,throughput,tau\n");
    for (i, (cfg, c)) in rows.iter().enumerate() {
        out.push_str(&format!("{i},{c},{}\n", cfg.tau));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::new(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn summarize(label: &str, rows: &[(PhaseConfig, f64)]) {
    let n = rows.len() as f64;
    let mean_c = rows.iter().map(|(_, c)| c).sum::<f64>() / n;
    let mean_tau = rows.iter().map(|(cfg, _)| cfg.tau).sum::<f64>() / n;
    println!("{label}: samples {} mean_throughput {mean_c} mean_tau {mean_tau}", rows.len());
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { m, n, pi_dbm, samples, seed, out, cascade_gain } => {
            let interference = parse_pi_dbm(&pi_dbm)?.is_some();
            let mut params = SystemParams::new(m, n);
            if let Some(g) = cascade_gain {
                params.cascade_gain = g;
            }
            let ds = generate_dataset(&params, interference, samples, seed)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} ({} samples, feature length {})",
                out.display(),
                samples,
                ds.feature_len()
            );
            Ok(())
        }
        Command::Train {
            train_data,
            val_data,
            pi_dbm,
            seed,
            out,
            history,
            batch_size,
            max_epochs,
            initial_lr,
            decay_rate,
            decay_steps,
            patience,
            no_normalize,
            cascade_gain,
        } => {
            let train_set = read_dataset(&train_data)?;
            let val_set = read_dataset(&val_data)?;
            let system = system_for_dataset(&train_set, parse_pi_dbm(&pi_dbm)?, cascade_gain)?;
            let cfg = TrainConfig {
                batch_size,
                max_epochs,
                initial_lr,
                decay_rate,
                decay_steps,
                patience,
                seed,
                normalize_features: !no_normalize,
            };
            let f_s = train_set.feature_len();
            let hidden = hidden_sizes(
                train_set.antennas,
                train_set.elements,
                system.interferer_power,
                f_s,
            );
            let mut params = init_network(f_s, &hidden, train_set.elements, seed);
            if cfg.normalize_features {
                params =
                    params.with_feature_scale(feature_scales(&system, train_set.interference));
            }
            let result = irsnet::train(&train_set, &val_set, params, &cfg, &system)?;
            if let Some(path) = history {
                bench::write_history_csv(&result.history, &path)?;
            }
            save_checkpoint(&result.params, &out)?;
            let last = result.history.last().unwrap();
            println!(
                "trained {} epochs (stop: {:?}), best val loss {}, checkpoint {}",
                result.history.len(),
                result.stop,
                result.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min),
                out.display()
            );
            println!("final epoch: train_loss {} val_loss {}", last.train_loss, last.val_loss);
            if matches!(result.stop, irsnet::StopReason::NonFiniteAbort { .. }) {
                return Err(CliError::new("training aborted on a non-finite loss"));
            }
            Ok(())
        }
        Command::Infer { checkpoint, data, out } => {
            let (ds, system) = data.load()?;
            let params = load_checkpoint(&checkpoint)?;
            let configs = forward(&params, &ds.features, Mode::Inference)?;
            let rows: Vec<(PhaseConfig, f64)> = ds
                .features
                .iter()
                .zip(configs)
                .map(|(f, cfg)| {
                    let c = evaluator::throughput(f, &cfg, &system)?;
                    Ok((cfg, c))
                })
                .collect::<Result<_, CliError>>()?;
            if let Some(path) = out {
                write_sample_csv(&path, &rows)?;
            }
            summarize("irsnet", &rows);
            Ok(())
        }
        Command::GaOpt { data, seed, generations, population, out } => {
            let (ds, system) = data.load()?;
            let rows = solve_all(&ds.features, |i, f| {
                let mut ga = GaParams::for_elements(
                    ds.elements,
                    generations,
                    SplitMix64::derive(seed, i as u64),
                );
                ga.population = population;
                Ok(baselines::ga_throughput(f, &system, &ga)?)
            })?;
            if let Some(path) = out {
                write_sample_csv(&path, &rows)?;
            }
            summarize(&format!("ga{generations}"), &rows);
            Ok(())
        }
        Command::RandomBaseline { data, seed, out } => {
            let (ds, system) = data.load()?;
            let rows = solve_all(&ds.features, |i, f| {
                let ga =
                    GaParams::for_elements(ds.elements, 5, SplitMix64::derive(seed, i as u64));
                let mut rng = SplitMix64::new(SplitMix64::derive(ga.seed, 1));
                Ok(baselines::random_baseline(f, &system, &ga, &mut rng)?)
            })?;
            if let Some(path) = out {
                write_sample_csv(&path, &rows)?;
            }
            summarize("random", &rows);
            Ok(())
        }
        Command::Oracle { data, resolution, out } => {
            let (ds, system) = data.load()?;
            let rows = solve_all(&ds.features, |_, f| {
                Ok(baselines::grid_oracle(f, &system, resolution)?)
            })?;
            if let Some(path) = out {
                write_sample_csv(&path, &rows)?;
            }
            summarize(&format!("oracle{resolution}"), &rows);
            Ok(())
        }
        Command::Bench { config } => {
            let cfg = bench::ExperimentConfig::from_path(&config)?;
            let report = bench::run_experiment(&cfg)?;
            for point in &report.points {
                for m in &point.methods {
                    println!(
                        "m{} n{} {}: mean_throughput {} rate_ratio {} per_sample_ms {}",
                        point.antennas,
                        point.elements,
                        m.eval.method,
                        m.eval.mean_throughput,
                        m.rate_ratio.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
                        m.eval.per_sample_ms,
                    );
                }
            }
            println!("report written under {}", report.config.out_dir.display());
            Ok(())
        }
        Command::Report { report, csv } => {
            let text = std::fs::read_to_string(&report)
                .map_err(|e| CliError::new(format!("cannot read {}: {e}", report.display())))?;
            let parsed: bench::BenchReport = serde_json::from_str(&text)?;
            if !parsed.is_complete() {
                eprintln!(
                    "note: report is partial (failed stage: {})",
                    parsed.failed_stage.as_deref().unwrap_or("unknown")
                );
            }
            bench::write_report_csv(&parsed, &csv)?;
            // Read the emitted file back: every numeric field must survive
            // the round trip exactly.
            let rows = bench::parse_report_csv(
                &std::fs::read_to_string(&csv)
                    .map_err(|e| CliError::new(format!("cannot reread {}: {e}", csv.display())))?,
            )?;
            let mut at = 0;
            for point in &parsed.points {
                for m in &point.methods {
                    if rows[at].eval != m.eval
                        || rows[at].rate_ratio != m.rate_ratio
                        || rows[at].time_ratio != m.time_ratio
                    {
                        return Err(CliError::new("csv round trip mismatch"));
                    }
                    at += 1;
                }
            }
            println!("wrote {} ({} rows, round trip verified)", csv.display(), at);
            Ok(())
        }
    }
}
