//! Command line driver: simulate scenarios, replay recorded sample logs,
//! recompute metrics, run ablation pairs, and sweep window parameters.
//!
//! Exit codes: 0 success, 2 configuration error, 3 run failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2visr_core::metrics::{compute_metrics, MetricsReport};
use a2visr_core::replay::{read_run_log_csv, read_samples_csv, replay, write_run_log_csv, write_samples_csv};
use a2visr_core::scenario::{ablate, preset, preset_names, run_scenario, RunLog, RunMode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "a2visr", version, about = "Ground-aerial relative localization simulator and estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario config file (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Estimation mode.
    #[arg(long, default_value = "adaptive")]
    mode: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write logs plus metrics.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory for run_log.csv, samples.csv, config.json, metrics.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip the first seconds when computing metrics.
        #[arg(long, default_value_t = 2.0)]
        warmup: f64,
    },
    /// Re-run the estimator over a recorded sample log.
    Replay {
        /// Sample log (samples.csv) to replay.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        warmup: f64,
    },
    /// Recompute metrics from a written run log.
    Metrics {
        /// Per-tick run log (run_log.csv).
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
    },
    /// Matched-seed comparison of the adaptive estimator against an ablation.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of consecutive seeds to evaluate.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Grid sweep over window width and polynomial order.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Window widths to evaluate (comma separated).
        #[arg(long, default_value = "4,6,8,10")]
        tw: String,
        /// Polynomial orders to evaluate (comma separated).
        #[arg(long, default_value = "1,2,3,4")]
        kt: String,
    },
    /// List the built-in scenario presets.
    Presets,
}

fn load_config(args: &ScenarioArgs) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        (None, Some(name)) => preset(name)
            .ok_or_else(|| anyhow::anyhow!("unknown preset '{name}' (try: {})", preset_names().join(", ")))?,
        (None, None) => anyhow::bail!("either --config or --preset is required"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_mode(s: &str) -> anyhow::Result<RunMode> {
    RunMode::parse(s).ok_or_else(|| anyhow::anyhow!("unknown mode '{s}' (adaptive|fixed|no-optical|no-uwb)"))
}

fn write_outputs(
    out: &Path,
    cfg: &ScenarioConfig,
    log: &RunLog,
    metrics: Option<&MetricsReport>,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    write_run_log_csv(&out.join("run_log.csv"), log)?;
    if !log.samples.is_empty() {
        write_samples_csv(&out.join("samples.csv"), &log.samples)?;
    }
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    if let Some(m) = metrics {
        std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(m)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Simulate { scenario, out, warmup } => {
            let cfg = load_config(&scenario)?;
            let mode = parse_mode(&scenario.mode)?;
            let log = run_scenario(&cfg, mode)?;
            let metrics = compute_metrics(&log, warmup)?;
            write_outputs(&out, &cfg, &log, Some(&metrics))?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            log::info!("wrote run log ({} ticks) to {}", log.ticks.len(), out.display());
        }
        Command::Replay { log, scenario, out, warmup } => {
            let cfg = load_config(&scenario)?;
            let mode = parse_mode(&scenario.mode)?;
            let (samples, skipped) = read_samples_csv(&log)?;
            if skipped > 0 {
                log::warn!("skipped {skipped} malformed rows");
            }
            let run_log = replay(&samples, &cfg, mode)?;
            match compute_metrics(&run_log, warmup) {
                Ok(metrics) => {
                    write_outputs(&out, &cfg, &run_log, Some(&metrics))?;
                    println!("{}", serde_json::to_string_pretty(&metrics)?);
                }
                Err(a2visr_core::metrics::MetricsError::MissingTruth) => {
                    write_outputs(&out, &cfg, &run_log, None)?;
                    let solver_ok = run_log.ticks.iter().filter(|r| r.solver_ok).count();
                    println!(
                        "{{\"ticks\": {}, \"solver_ok\": {}, \"note\": \"no ground truth; status-only report\"}}",
                        run_log.ticks.len(),
                        solver_ok
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Metrics { log, warmup } => {
            let run_log = read_run_log_csv(&log)?;
            let metrics = compute_metrics(&run_log, warmup)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Ablate { scenario, seeds } => {
            let cfg = load_config(&scenario)?;
            let mode = parse_mode(&scenario.mode)?;
            if mode == RunMode::Adaptive {
                anyhow::bail!("--mode must name an ablation (fixed|no-optical|no-uwb)");
            }
            let mut wins = 0u64;
            let mut reports = Vec::new();
            for s in 0..seeds {
                let mut seeded = cfg.clone();
                seeded.seed = cfg.seed + s;
                let report = ablate(&seeded, mode)?;
                if report.baseline.ate < report.ablated.ate {
                    wins += 1;
                }
                reports.push(report);
            }
            println!("{}", serde_json::to_string_pretty(&reports)?);
            println!("adaptive baseline wins {wins}/{seeds} seeds (by ATE)");
        }
        Command::Sweep { scenario, tw, kt } => {
            let cfg = load_config(&scenario)?;
            let mode = parse_mode(&scenario.mode)?;
            let parse_list = |s: &str| -> anyhow::Result<Vec<usize>> {
                s.split(',')
                    .map(|p| p.trim().parse::<usize>().map_err(|e| anyhow::anyhow!("bad list entry '{p}': {e}")))
                    .collect()
            };
            let tws = parse_list(&tw)?;
            let kts = parse_list(&kt)?;
            println!("tw,kt,ate,rmse_x,rmse_y,rmse_z,mean_solve_ms");
            for &tw in &tws {
                for &kt in &kts {
                    if kt > tw {
                        continue;
                    }
                    let mut swept = cfg.clone();
                    swept.window.tw = tw;
                    swept.window.kt = kt;
                    swept.confidence.tw = tw;
                    let log = run_scenario(&swept, mode)?;
                    let m = compute_metrics(&log, 2.0)?;
                    println!(
                        "{tw},{kt},{:.4},{:.4},{:.4},{:.4},{:.3}",
                        m.ate, m.rmse[0], m.rmse[1], m.rmse[2], m.mean_solve_ms
                    );
                }
            }
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("A2VISR_LOG_LEVEL", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let config_error = e.is::<serde_json::Error>()
                || e.downcast_ref::<a2visr_core::scenario::ScenarioError>()
                    .map(|s| matches!(s, a2visr_core::scenario::ScenarioError::Config(_)))
                    .unwrap_or(false)
                || e.to_string().contains("preset")
                || e.to_string().contains("--config")
                || e.to_string().contains("mode");
            eprintln!("error: {e:#}");
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
