//! Command-line front end.
//!
//! Subcommands mirror the pipeline stages: `train` persists a checkpoint
//! window, `average` applies a baseline strategy to a persisted window,
//! `sewa` learns a selection mask over one, `bounds` evaluates the
//! closed-form calculators, `probe` runs the stability probes, and `bench`
//! executes a full experiment config.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config
//! file, invalid parameters), 2 runtime failure. `SEWA_WORKERS` caps
//! parallel seed workers in `bench`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use sewa_core::averagers::{
    apply_mask, ema_average, lawa_select, random_select, swa_average, uniform_average,
};
use sewa_core::bench::{gen_dataset, run_experiment, DatasetSpec, ExperimentConfig, MaskLoss};
use sewa_core::error::Error;
use sewa_core::nn::DatasetSplit;
use sewa_core::sewa::{
    bernoulli_mask, extract_topk, optimize_mask, write_history_csv, GsConfig,
};
use sewa_core::stability::{
    bounds_table, convex_bound, divergence_probe, expansiveness_probe, nonconvex_bound,
    optimal_t0, render_bounds_table, write_bounds_csv, write_series_csv, BoundInputs,
    ProbeProblem, ProbeResult, SampleOverride,
};
use sewa_core::trajectory::{
    load_window, save_weights_file, save_window, sgd_train, window_collect,
};
use sewa_core::{MlpSpec, SgdConfig};

#[derive(Parser)]
#[command(name = "sewa", about = "Checkpoint selection and weight averaging toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and persist the trailing checkpoint window.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving manifest.json + ckpt_*.bin.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a baseline averaging method to a persisted window.
    Average(AverageArgs),
    /// Learn a selection mask over a persisted window (emits the mask,
    /// the optimization history CSV, and the averaged weights).
    Sewa {
        #[arg(long)]
        window: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the closed-form generalization bounds.
    Bounds(BoundsArgs),
    /// Run a stability probe described by a config file.
    Probe {
        #[arg(long, value_enum)]
        kind: ProbeKind,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a full experiment config (train, average, select, evaluate).
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct AverageArgs {
    #[arg(long)]
    window: PathBuf,
    #[arg(long, value_enum)]
    method: AverageMethod,
    /// Selection budget for lawa/random.
    #[arg(long = "K")]
    k: Option<usize>,
    /// EMA decay.
    #[arg(long, default_value_t = 0.9)]
    decay: f64,
    /// Cadence for swa/ema.
    #[arg(long, default_value_t = 1)]
    every: u64,
    /// Seed for random selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-fraction threshold for swa.
    #[arg(long, default_value_t = 0.75)]
    start_fraction: f64,
    /// Output weights file (checkpoint binary format).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AverageMethod {
    Uniform,
    Swa,
    Ema,
    Lawa,
    Random,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long = "L")]
    lipschitz: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    n: u64,
    #[arg(long = "T")]
    steps: u64,
    #[arg(long)]
    k: u64,
    #[arg(long)]
    s: f64,
    /// Print the full comparison table.
    #[arg(long)]
    table: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Expansive,
    Divergence,
}

/// `train` config file: dataset + model + SGD schedule + window length.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    dataset: DatasetSpec,
    model: MlpSpec,
    train: SgdConfig,
    window_k: usize,
}

/// `sewa` config file: the dataset/model the window came from plus the
/// mask-learning settings.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SewaCliConfig {
    dataset: DatasetSpec,
    model: MlpSpec,
    gs: GsConfig,
    #[serde(default)]
    mask_loss: MaskLoss,
    #[serde(default)]
    bernoulli: bool,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ProbeProblemSpec {
    Quadratic { beta: f64, dim: usize },
    Logistic { dataset: DatasetSpec },
    Mlp { model: MlpSpec, dataset: DatasetSpec },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpansiveConfig {
    problem: ProbeProblemSpec,
    alpha: f64,
    steps: u64,
    seeds: Vec<u64>,
    output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceConfig {
    model: MlpSpec,
    dataset: DatasetSpec,
    perturb_index: usize,
    train: SgdConfig,
    k: usize,
    seeds: Vec<u64>,
    output_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap usage problems are configuration errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() || matches!(e, Error::Json(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T, Error> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg: TrainConfig = read_config(&config)?;
            let (train, _test) = gen_dataset(&cfg.dataset)?;
            let (final_w, stream) = sgd_train(&cfg.model, &train, &cfg.train)?;
            let window = window_collect(&stream, cfg.window_k)?;
            save_window(&window, &out)?;
            println!(
                "trained {} steps, captured {} checkpoints, window of {} saved to {}",
                cfg.train.steps,
                stream.len(),
                window.len(),
                out.display()
            );
            println!(
                "final train loss {:.6e}",
                stream.last().map_or(f64::NAN, |c| c.train_loss)
            );
            let _ = final_w;
            Ok(ExitCode::SUCCESS)
        }
        Command::Average(args) => {
            let window = load_window(&args.window)?;
            let stream = window.checkpoints();
            let averaged = match args.method {
                AverageMethod::Uniform => uniform_average(&window)?,
                AverageMethod::Swa => swa_average(stream, args.start_fraction, args.every)?,
                AverageMethod::Ema => ema_average(stream, args.decay, args.every)?,
                AverageMethod::Lawa => {
                    let budget = args.k.ok_or_else(|| {
                        Error::Config("--K is required for lawa".into())
                    })?;
                    let mask = lawa_select(window.len(), budget)?;
                    apply_mask(&window, &mask)?
                }
                AverageMethod::Random => {
                    let budget = args.k.ok_or_else(|| {
                        Error::Config("--K is required for random".into())
                    })?;
                    let mask = random_select(window.len(), budget, args.seed)?;
                    apply_mask(&window, &mask)?
                }
            };
            let step = stream.last().map_or(0, |c| c.step);
            save_weights_file(&args.out, &averaged.weights, step)?;
            println!(
                "averaged {} checkpoints -> {}",
                window.len(),
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sewa {
            window,
            config,
            out,
        } => {
            let cfg: SewaCliConfig = read_config(&config)?;
            let window = load_window(&window)?;
            let (train, _test) = gen_dataset(&cfg.dataset)?;
            // same carve-out as bench: SGD saw the leading 75%, the rest is
            // held out for mask learning
            let n_fit = (train.len() * 3 / 4).max(1);
            let mask_data = match cfg.mask_loss {
                MaskLoss::Train => train.head(n_fit)?,
                MaskLoss::HeldOut => {
                    let rows: Vec<usize> = (n_fit..train.len()).collect();
                    if rows.is_empty() {
                        train.clone()
                    } else {
                        train.select(&rows)?
                    }
                }
            };
            let (history, probs) = optimize_mask(&window, &cfg.model, &mask_data, &cfg.gs)?;
            let mask = if cfg.bernoulli {
                let sampled = bernoulli_mask(&probs, cfg.gs.seed);
                if sampled.selected_count() == 0 {
                    extract_topk(&probs, cfg.gs.budget)?
                } else {
                    sampled
                }
            } else {
                extract_topk(&probs, cfg.gs.budget)?
            };
            let averaged = apply_mask(&window, &mask)?;

            fs::create_dir_all(&out)?;
            let mut buf = Vec::new();
            write_history_csv(&history, &mut buf)?;
            fs::write(out.join("history.csv"), buf)?;
            fs::write(
                out.join("mask.json"),
                serde_json::to_vec_pretty(&serde_json::json!({
                    "bits": mask.bits().iter().map(|&b| u8::from(b)).collect::<Vec<u8>>(),
                    "indices": mask.selected_indices(),
                    "probs": probs.probs(),
                }))?,
            )?;
            let step = window.checkpoints().last().map_or(0, |c| c.step);
            save_weights_file(&out.join("averaged.bin"), &averaged.weights, step)?;
            println!(
                "selected {:?} after {} iterations -> {}",
                mask.selected_indices(),
                history.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds(args) => {
            let inputs = BoundInputs {
                alpha: args.alpha,
                lipschitz: args.lipschitz,
                smoothness: args.beta,
                c: args.c,
                n: args.n,
                steps: args.steps,
                window: args.k,
                s: args.s,
            };
            if !inputs.convex_step_ok() {
                eprintln!(
                    "warning: alpha = {} exceeds 2/beta = {}; the convex bound assumes a <= 2/b",
                    inputs.alpha,
                    2.0 / inputs.smoothness
                );
            }
            println!("convex_bound    = {:.12e}", convex_bound(&inputs)?);
            println!("nonconvex_bound = {:.12e}", nonconvex_bound(&inputs)?);
            println!("optimal_t0      = {:.12e}", optimal_t0(&inputs)?);
            if args.table || args.csv.is_some() {
                let rows = bounds_table(&inputs)?;
                if args.table {
                    print!("{}", render_bounds_table(&rows));
                }
                if let Some(path) = args.csv {
                    let mut buf = Vec::new();
                    write_bounds_csv(&rows, &mut buf)?;
                    fs::write(&path, buf)?;
                    println!("table written to {}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Probe { kind, config } => match kind {
            ProbeKind::Expansive => {
                let cfg: ExpansiveConfig = read_config(&config)?;
                fs::create_dir_all(&cfg.output_dir)?;
                let problem = build_problem(&cfg.problem)?;
                for &seed in &cfg.seeds {
                    let result = expansiveness_probe(&problem, cfg.alpha, cfg.steps, seed)?;
                    write_probe_csv(&cfg.output_dir, "expansive", seed, &result)?;
                    print_probe_summary("expansive", seed, &result);
                }
                Ok(ExitCode::SUCCESS)
            }
            ProbeKind::Divergence => {
                let cfg: DivergenceConfig = read_config(&config)?;
                fs::create_dir_all(&cfg.output_dir)?;
                let (data, _) = gen_dataset(&cfg.dataset)?;
                let replacement = fresh_replacement(&cfg.dataset, &data, cfg.perturb_index)?;
                for &seed in &cfg.seeds {
                    let mut train = cfg.train.clone();
                    train.seed = seed;
                    let result = divergence_probe(
                        &cfg.model,
                        &data,
                        cfg.perturb_index,
                        &replacement,
                        &train,
                        cfg.k,
                    )?;
                    write_probe_csv(&cfg.output_dir, "divergence", seed, &result)?;
                    print_probe_summary("divergence", seed, &result);
                }
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Bench { config } => {
            let cfg: ExperimentConfig = read_config(&config)?;
            let output = run_experiment(&cfg)?;
            println!(
                "{} methods x {} seeds -> {}",
                output.reports.len(),
                cfg.seeds.len(),
                output.summary_csv.display()
            );
            if let Ok(table) = fs::read_to_string(&output.table_txt) {
                print!("{table}");
            }
            if output.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} seed(s) failed", output.failures.len());
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn build_problem(spec: &ProbeProblemSpec) -> Result<ProbeProblem, Error> {
    Ok(match spec {
        ProbeProblemSpec::Quadratic { beta, dim } => ProbeProblem::ConvexQuadratic {
            beta: *beta,
            dim: *dim,
        },
        ProbeProblemSpec::Logistic { dataset } => {
            let (train, _) = gen_dataset(dataset)?;
            ProbeProblem::ConvexLogistic { data: train }
        }
        ProbeProblemSpec::Mlp { model, dataset } => {
            let (train, _) = gen_dataset(dataset)?;
            ProbeProblem::NonConvexMlp {
                spec: model.clone(),
                data: train,
            }
        }
    })
}

/// A fresh draw for the replaced sample: the same row position of an
/// independently re-seeded synthesis of the same dataset.
fn fresh_replacement(
    spec: &DatasetSpec,
    data: &DatasetSplit,
    index: usize,
) -> Result<SampleOverride, Error> {
    let alt_spec = match spec.clone() {
        DatasetSpec::Blobs {
            n,
            p,
            classes,
            noise,
            seed,
        } => DatasetSpec::Blobs {
            n,
            p,
            classes,
            noise,
            seed: seed.wrapping_add(0x5EED),
        },
        DatasetSpec::Spirals { n, noise, seed } => DatasetSpec::Spirals {
            n,
            noise,
            seed: seed.wrapping_add(0x5EED),
        },
        DatasetSpec::Csv { .. } => {
            return Err(Error::Config(
                "divergence probe needs a synthetic dataset to draw a replacement".into(),
            ))
        }
    };
    let (alt, _) = gen_dataset(&alt_spec)?;
    let row = index % alt.len();
    let (label_class, label_value) = match alt.labels() {
        sewa_core::Labels::Classes(v) => (Some(v[row]), None),
        sewa_core::Labels::Values(v) => (None, Some(v[row])),
    };
    let _ = data;
    Ok(SampleOverride {
        features: alt.feature_row(row).to_vec(),
        label_class,
        label_value,
    })
}

fn write_probe_csv(
    dir: &std::path::Path,
    name: &str,
    seed: u64,
    result: &ProbeResult,
) -> Result<(), Error> {
    let mut buf = Vec::new();
    write_series_csv(result, &mut buf)?;
    fs::write(dir.join(format!("{name}_seed{seed}.csv")), buf)?;
    Ok(())
}

fn print_probe_summary(name: &str, seed: u64, result: &ProbeResult) {
    match result.bound_value {
        Some(bound) => println!(
            "{name} seed {seed}: max {:.6e} mean {:.6e} bound {:.6e} ({})",
            result.max,
            result.mean,
            bound,
            if result.max <= bound + 1e-9 { "within" } else { "EXCEEDED" }
        ),
        None => println!(
            "{name} seed {seed}: max {:.6e} mean {:.6e}",
            result.max, result.mean
        ),
    }
}
