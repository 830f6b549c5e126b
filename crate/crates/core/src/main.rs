//! Command-line entry point: training, rollouts, the three evaluation
//! sweeps, and CSV-to-SVG plotting.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use trotter::config::Config;
use trotter::{eval, plot, trainer};

#[derive(Parser)]
#[command(name = "trotter", version, about = "Hybrid planner/policy quadruped locomotion lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write metrics plus checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        envs: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Roll out a trained policy on one robot and export CSV traces.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        seconds: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimizer-rate sweep.
    EvalRate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated rates in Hz.
        #[arg(long, default_value = "1,2,2.5,3.3,5,10,20,50")]
        rates: String,
        /// First seed of the sweep (seeds are consecutive).
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        seeds: usize,
        #[arg(long, default_value_t = 128)]
        envs: usize,
    },
    /// Map-drift sweep.
    EvalDrift {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated drift values in m; defaults to 0..0.5 step 0.025.
        #[arg(long)]
        drifts: Option<String>,
        /// `flat` or `rough`.
        #[arg(long, default_value = "rough")]
        terrain: String,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        seeds: usize,
        #[arg(long, default_value_t = 128)]
        envs: usize,
    },
    /// Per-family terrain benchmark at the hardest level.
    EvalTerrains {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        seeds: usize,
        #[arg(long, default_value_t = 128)]
        envs: usize,
    },
    /// Convert a metrics CSV into SVG line charts.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad number `{s}`: {e}")))
        .collect()
}

fn seed_list(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| first + k).collect()
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let load_config = |path: &PathBuf| Config::load(path).map_err(|e| (2u8, e.to_string()));
    match cli.cmd {
        Cmd::Train { config, seed, envs, epochs, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(envs) = envs {
                cfg.ppo.num_envs = envs;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            let summary = trainer::run_training(&cfg, &out).map_err(|e| (1u8, e.to_string()))?;
            println!(
                "trained {} epochs; checkpoint {}, metrics {}",
                summary.epochs,
                summary.checkpoint_path.display(),
                summary.metrics_path.display()
            );
            Ok(())
        }
        Cmd::Rollout { config, checkpoint, out, seconds, seed } => {
            let cfg = load_config(&config)?;
            let policy = eval::load_policy(&checkpoint, &cfg).map_err(|e| (1u8, e.to_string()))?;
            eval::run_rollout(&cfg, &policy, &out, seconds, seed.unwrap_or(cfg.train.seed))
                .map_err(|e| (1u8, e.to_string()))?;
            println!("rollout traces written to {}", out.display());
            Ok(())
        }
        Cmd::EvalRate { config, checkpoint, out, rates, seed, seeds, envs } => {
            let cfg = load_config(&config)?;
            let rates = parse_list(&rates).map_err(|e| (2u8, e))?;
            let policy = eval::load_policy(&checkpoint, &cfg).map_err(|e| (1u8, e.to_string()))?;
            let rows = eval::eval_rate_sweep(&cfg, &policy, &rates, &seed_list(seed, seeds), envs);
            std::fs::create_dir_all(&out).map_err(|e| (1u8, e.to_string()))?;
            let path = out.join("rate_sweep.csv");
            eval::write_rate_csv(&path, &rows).map_err(|e| (1u8, e.to_string()))?;
            println!("rate sweep written to {}", path.display());
            Ok(())
        }
        Cmd::EvalDrift { config, checkpoint, out, drifts, terrain, seed, seeds, envs } => {
            let cfg = load_config(&config)?;
            let drifts = match drifts {
                Some(text) => parse_list(&text).map_err(|e| (2u8, e))?,
                None => eval::drift_values(),
            };
            let flat = match terrain.as_str() {
                "flat" => true,
                "rough" => false,
                other => return Err((2, format!("unknown terrain `{other}`"))),
            };
            let policy = eval::load_policy(&checkpoint, &cfg).map_err(|e| (1u8, e.to_string()))?;
            let rows =
                eval::eval_drift_sweep(&cfg, &policy, &drifts, flat, &seed_list(seed, seeds), envs);
            std::fs::create_dir_all(&out).map_err(|e| (1u8, e.to_string()))?;
            let path = out.join("drift_sweep.csv");
            eval::write_drift_csv(&path, &rows).map_err(|e| (1u8, e.to_string()))?;
            println!("drift sweep written to {}", path.display());
            Ok(())
        }
        Cmd::EvalTerrains { config, checkpoint, out, seed, seeds, envs } => {
            let cfg = load_config(&config)?;
            let policy = eval::load_policy(&checkpoint, &cfg).map_err(|e| (1u8, e.to_string()))?;
            let bench = eval::eval_terrains(&cfg, &policy, &seed_list(seed, seeds), envs);
            std::fs::create_dir_all(&out).map_err(|e| (1u8, e.to_string()))?;
            let path = out.join("terrain_benchmark.csv");
            eval::write_terrain_csv(&path, &bench).map_err(|e| (1u8, e.to_string()))?;
            println!("terrain benchmark written to {}", path.display());
            Ok(())
        }
        Cmd::Plot { input, out } => {
            let written = plot::plot_csv(&input, &out).map_err(|e| (1u8, e.to_string()))?;
            for p in &written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
