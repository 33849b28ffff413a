use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use eit_rwos::config::ExperimentConfig;
use eit_rwos::experiments::{
    run_bias_study, run_currents, run_efficiency, run_field_export, run_potential,
    run_random_medium, OutputTable,
};

/// Monte Carlo forward solver for 2-D EIT: partially reflecting
/// walk-on-spheres estimators for the complete electrode model.
#[derive(Parser)]
#[command(name = "eit-rwos", version)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured worker count (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Subcommand)]
enum Experiment {
    /// Potential at the probe point over the configured h sweep.
    Potential,
    /// Electrode-current table over the configured inclusion radii.
    Currents,
    /// Bias against the semi-analytic reference over the h sweep.
    Bias,
    /// Efficiency (variance x time) comparison of the estimators.
    Efficiency,
    /// Currents under interval-valued medium parameters.
    RandomMedium,
    /// Reference potential field and boundary current density.
    Field,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let text = fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let mut config = ExperimentConfig::parse(&text)
        .with_context(|| format!("parsing {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }

    let table: OutputTable = match cli.experiment {
        Experiment::Potential => run_potential(&config)?,
        Experiment::Currents => run_currents(&config)?,
        Experiment::Bias => run_bias_study(&config)?,
        Experiment::Efficiency => run_efficiency(&config)?,
        Experiment::RandomMedium => run_random_medium(&config)?,
        Experiment::Field => run_field_export(&config)?,
    };
    let csv = table.to_csv();
    match &cli.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    eprintln!("wall time: {:.3} s", table.wall_time);
    Ok(())
}
