use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedsim::harness::{
    compare_experiments, emit_csv, experiment_population, parse_config, run_experiment,
    write_summary_csv, ExperimentConfig,
};

/// Federated averaging simulator.
#[derive(Debug, Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    /// Override the seed of every config this invocation loads.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize metrics CSVs, cheapest CFMQ first.
    Compare {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic population a config would train on.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several configs in order, writing `<out-dir>/<experiment_id>.csv` each.
    Batch {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config =
        parse_config(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_one(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = run_experiment(config)
        .with_context(|| format!("experiment {} failed", config.experiment_id))?;
    emit_csv(&rows, out).with_context(|| format!("writing {}", out.display()))?;
    let last = rows.last().expect("run_experiment returns at least one row");
    eprintln!(
        "{}: {} rounds, eval_loss {:.6}, cfmq {:.6e} TB -> {}",
        config.experiment_id,
        last.round,
        last.eval_loss,
        last.cfmq_terabytes,
        out.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => run_one(&load_config(&config, cli.seed)?, &out),
        Command::Compare { csvs, out } => {
            let table = compare_experiments(&csvs)?;
            print!("{}", table.to_text());
            if let Some(out) = out {
                write_summary_csv(&table, &out).with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(())
        }
        Command::GenData { config, out } => {
            let config = load_config(&config, cli.seed)?;
            let population = experiment_population(&config)?;
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            population.write_text(std::io::BufWriter::new(file))?;
            eprintln!(
                "{} clients, {} examples -> {}",
                population.num_clients(),
                population.total_n(),
                out.display()
            );
            Ok(())
        }
        Command::Batch { out_dir, configs } => {
            let loaded = configs
                .iter()
                .map(|p| load_config(p, cli.seed))
                .collect::<Result<Vec<_>>>()?;
            let mut ids: Vec<&str> = loaded.iter().map(|c| c.experiment_id.as_str()).collect();
            ids.sort_unstable();
            if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
                bail!("duplicate experiment_id {:?} would overwrite its CSV", dup[0]);
            }
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut written = Vec::with_capacity(loaded.len());
            for config in &loaded {
                let out = out_dir.join(format!("{}.csv", config.experiment_id));
                run_one(config, &out)?;
                written.push(out);
            }
            print!("{}", compare_experiments(&written)?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
