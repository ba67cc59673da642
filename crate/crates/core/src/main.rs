use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ris_d2d::baselines::SchemeId;
use ris_d2d::harness::{
    emit_plot_data, evaluate_scheme, flops_report, load_models, network_widths, run_experiment,
    save_models, sweep_points, train_models, write_metrics, ExperimentConfig, FigureId,
    MetricsRecord,
};
use ris_d2d::Error;

/// Simulator and learning-based optimizer for RIS-assisted D2D underlay
/// networks.
#[derive(Parser)]
#[command(name = "ris-d2d", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a TOML experiment configuration.
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Built-in profile: `desk` (small, exhaustive-search friendly) or
    /// `table1` (full-scale reference parameters).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Override the scheme list (comma separated).
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Override the seed list (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the exhaustive-search enumeration cap.
    #[arg(long)]
    cap: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => match self.profile.as_str() {
                "desk" => ExperimentConfig::desk(),
                "table1" => ExperimentConfig::table1(),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown profile '{other}' (expected desk or table1)"
                    )))
                }
            },
        };
        if let Some(schemes) = &self.schemes {
            config.experiment.schemes = schemes
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<SchemeId>, _>>()?;
        }
        if let Some(seeds) = &self.seeds {
            config.experiment.seeds = seeds.clone();
        }
        if let Some(cap) = self.cap {
            config.experiment.exhaustive_cap = cap;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the networks one scheme needs and write checkpoints plus
    /// training metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Scheme to train for (d_ddqn, d_dqn, c_ddqn, no_ris).
        #[arg(long)]
        scheme: String,
        /// Seed for this run (defaults to the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a scheme for the configured number of greedy episodes using
    /// previously written checkpoints.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding the `models/` tree written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of evaluation episodes.
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Run the full experiment: train and evaluate every scheme at every
    /// sweep point for every seed.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the forward-pass FLOPs of every network in the configuration.
    Flops {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Aggregate evaluation metrics into per-figure mean/std series.
    PlotData {
        /// Directory containing the metrics CSV files.
        #[arg(long)]
        metrics: PathBuf,
        /// fig5, fig6 (noise), fig7 (cellular count), or fig8 (elements).
        #[arg(long)]
        figure: String,
        /// Output directory for the series CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            scheme,
            seed,
            out,
        } => {
            let config_resolved = config.resolve()?;
            let scheme: SchemeId = scheme.parse()?;
            let seed = seed.unwrap_or(config_resolved.experiment.seeds[0]);
            let schemes = [scheme];
            let (models, logs) = train_models(
                &config_resolved.scenario,
                &config_resolved.training,
                &schemes,
                seed,
            )?;
            let models_dir = out.join("models");
            let metrics_dir = out.join("metrics");
            std::fs::create_dir_all(&models_dir)?;
            std::fs::create_dir_all(&metrics_dir)?;
            save_models(&models_dir, &models, &config_resolved.scenario, seed, "")?;
            for (scheme, log) in &logs {
                let records: Vec<MetricsRecord> = log
                    .iter()
                    .map(|r| MetricsRecord::from_train(r, *scheme, seed))
                    .collect();
                write_metrics(
                    metrics_dir.join(format!("train_{scheme}_seed{seed}.csv")),
                    &records,
                )?;
            }
            println!("trained {scheme} (seed {seed}) -> {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            config,
            scheme,
            seed,
            models,
            out,
            episodes,
        } => {
            let config_resolved = config.resolve()?;
            let scheme: SchemeId = scheme.parse()?;
            let seed = seed.unwrap_or(config_resolved.experiment.seeds[0]);
            let episodes = episodes.unwrap_or(config_resolved.experiment.eval_episodes);
            let schemes = [scheme];
            let loaded = load_models(
                &models.join("models"),
                &config_resolved.scenario,
                &config_resolved.training,
                &schemes,
                seed,
                "",
            )?;
            let records = evaluate_scheme(
                scheme,
                &config_resolved.scenario,
                &loaded,
                seed,
                episodes,
                config_resolved.experiment.exhaustive_cap,
            )?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("eval_{scheme}_seed{seed}.csv"));
            write_metrics(&path, &records)?;
            let mean =
                records.iter().map(|r| r.reward).sum::<f64>() / records.len().max(1) as f64;
            println!(
                "evaluated {scheme} (seed {seed}, {episodes} episodes): mean gated sum rate {mean:.4e} bits/s -> {}",
                path.display()
            );
            Ok(())
        }
        Command::Sweep { config, out } => {
            let config_resolved = config.resolve()?;
            let files = run_experiment(&config_resolved, &out)?;
            println!(
                "sweep complete: {} metrics files under {}",
                files.len(),
                out.display()
            );
            for point in sweep_points(&config_resolved) {
                if !point.label.is_empty() {
                    println!("  point {} = {}", point.axis, point.label);
                }
            }
            Ok(())
        }
        Command::Flops { config } => {
            let config_resolved = config.resolve()?;
            let (bs, agents) =
                network_widths(&config_resolved.scenario, &config_resolved.training)?;
            let report = flops_report(&bs, &agents);
            println!("BS network widths: {bs:?}");
            println!("FLOPs(BS) = {}", report.bs);
            for (i, f) in report.per_agent.iter().enumerate() {
                println!("FLOPs(agent {i}) = {f}");
            }
            println!("FLOPs(total) = {}", report.total);
            Ok(())
        }
        Command::PlotData {
            metrics,
            figure,
            out,
        } => {
            let figure: FigureId = figure.parse()?;
            let table = emit_plot_data(&metrics, figure)?;
            std::fs::create_dir_all(&out)?;
            let name = match figure {
                FigureId::Fig5 => "fig5.csv",
                FigureId::Fig6 => "fig6.csv",
                FigureId::Fig7 => "fig7.csv",
                FigureId::Fig8 => "fig8.csv",
            };
            let path = out.join(name);
            std::fs::write(&path, table.to_csv())?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidConfig(_) => ExitCode::from(2),
                Error::CapExceeded { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
