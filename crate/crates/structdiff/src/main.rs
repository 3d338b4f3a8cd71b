use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structdiff::checkpoint::{load_checkpoint, save_checkpoint};
use structdiff::dataset::{generate, DatasetFamily, DatasetKind};
use structdiff::diffusion::{sample, train, SamplerConfig, SigmaMode, TrainConfig};
use structdiff::error::{Error, Result};
use structdiff::harness::{
    emit_plot_data, load_results, run_grid, summarize, summary_csv, summary_table, ExperimentGrid,
    RunStatus,
};
use structdiff::points::PointBatch;
use structdiff::prdc::prdc_grid;
use structdiff::schedule::build_schedule;

#[derive(Parser)]
#[command(
    name = "structdiff",
    about = "Train and evaluate small diffusion models with structural penalties on 2-D synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a standardized synthetic dataset as CSV.
    Gen(GenArgs),
    /// Train a denoiser from a JSON config and write a checkpoint.
    Train(TrainArgs),
    /// Sample from a trained checkpoint.
    Sample(SampleArgs),
    /// Compute precision/recall/density/coverage between two point CSVs.
    Eval(EvalArgs),
    /// Run a full experiment grid (resumable).
    Grid(GridArgs),
    /// Aggregate a results CSV into per-cell summaries.
    Summarize(SummarizeArgs),
    /// Export plot-ready CSVs (real points + radii, generated points +
    /// sphere membership) from grid artifacts.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct GenArgs {
    /// swiss_roll | scattered_moon | moon_circles | central_banana
    #[arg(long)]
    dataset: DatasetFamily,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-step loss log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// The training config (for its schedule).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// posterior | beta
    #[arg(long, default_value = "posterior")]
    sigma: String,
    /// Sample with the raw (non-averaged) weights.
    #[arg(long)]
    no_ema: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// JSON report output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// JSON grid config.
    #[arg(long)]
    config: PathBuf,
    /// Results CSV (appended to; existing run_ids are skipped).
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-run artifacts.
    #[arg(long, default_value = "artifacts")]
    artifacts: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    results: PathBuf,
    /// Summary CSV output; a readable table goes to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "artifacts")]
    artifacts: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => {
            let kind = DatasetKind {
                family: a.dataset,
                n_samples: a.n,
                noise_level: a.noise,
                seed: a.seed,
            };
            generate(&kind)?.save_csv(&a.out)?;
            println!("wrote {} points to {}", a.n, a.out.display());
        }
        Command::Train(a) => {
            let mut cfg: TrainConfig = read_json(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let out = train(&cfg)?;
            save_checkpoint(&a.out, &out.net, &out.ema, &out.optimizer)?;
            if let Some(log) = a.log {
                fs::write(&log, out.log_csv()).map_err(|e| Error::io(&log, e))?;
            }
            let last = out.log.last().unwrap();
            println!(
                "trained {} steps; final simple loss {:.6}, penalty {:.6} -> {}",
                cfg.steps,
                last.simple_loss,
                last.penalty,
                a.out.display()
            );
        }
        Command::Sample(a) => {
            let cfg: TrainConfig = read_json(&a.config)?;
            let ckpt = load_checkpoint(&a.ckpt)?;
            let schedule = build_schedule(&cfg.schedule)?;
            let sigma_mode = match a.sigma.as_str() {
                "posterior" => SigmaMode::Posterior,
                "beta" => SigmaMode::Beta,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "sigma must be posterior or beta, got {other}"
                    )))
                }
            };
            let sampler_cfg = SamplerConfig {
                n_samples: a.n,
                sigma_mode,
                seed: a.seed,
                use_ema: !a.no_ema,
            };
            let ema = ckpt.ema_state(cfg.ema_decay)?;
            let pts = sample(&ckpt.net, Some(&ema), &schedule, &sampler_cfg)?;
            pts.save_csv(&a.out)?;
            println!("sampled {} points to {}", a.n, a.out.display());
        }
        Command::Eval(a) => {
            let real = PointBatch::load_csv(&a.real)?;
            let gen = PointBatch::load_csv(&a.gen)?;
            let report = prdc_grid(real.as_array(), gen.as_array(), a.k)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Json {
                context: "report".into(),
                source: e,
            })?;
            match a.out {
                Some(path) => {
                    fs::write(&path, &json).map_err(|e| Error::io(&path, e))?;
                    println!(
                        "precision {:.4} recall {:.4} density {:.4} coverage {:.4} -> {}",
                        report.precision,
                        report.recall,
                        report.density,
                        report.coverage,
                        path.display()
                    );
                }
                None => println!("{json}"),
            }
        }
        Command::Grid(a) => {
            let grid: ExperimentGrid = read_json(&a.config)?;
            let rows = run_grid(&grid, &a.out, &a.artifacts, a.threads)?;
            let failed: Vec<&str> = rows
                .iter()
                .filter(|r| r.status == RunStatus::Failed)
                .map(|r| r.run_id.as_str())
                .collect();
            println!(
                "{} runs recorded in {} ({} failed)",
                rows.len(),
                a.out.display(),
                failed.len()
            );
            for id in &failed {
                eprintln!("failed: {id}");
            }
            if !failed.is_empty() {
                return Ok(false);
            }
        }
        Command::Summarize(a) => {
            let rows = load_results(&a.results)?;
            let cells = summarize(&rows)?;
            print!("{}", summary_table(&cells));
            if let Some(path) = a.out {
                fs::write(&path, summary_csv(&cells)).map_err(|e| Error::io(&path, e))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Plotdata(a) => {
            let grid: ExperimentGrid = read_json(&a.config)?;
            let written = emit_plot_data(&grid, &a.artifacts, &a.out_dir)?;
            for p in &written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
