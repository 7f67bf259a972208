use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use otpdag_experiments::config::SEED_ENV;
use otpdag_experiments::data::{digest, gen_gmm_misspec, gen_lda_bars, gen_poisson_hmm};
use otpdag_experiments::report::{read_rows, rows_to_csv, rows_to_json, write_file};
use otpdag_experiments::{run_to_dir, ExperimentConfig, ExperimentError, ExperimentKind, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "otpdag", version, about = "Transport-based parameter learning studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `out_dir`, then `runs/<experiment>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the dataset of a study.
    Gen {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the rows of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            config.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
            config.validate()?;
            let dir = out
                .or_else(|| config.out_dir.clone())
                .unwrap_or_else(|| Path::new("runs").join(config.experiment.name()));
            let output = run_to_dir(&config, &dir)?;
            println!("{} rows written to {}", output.rows.len(), dir.display());
            Ok(())
        }
        Command::Gen { experiment, seed, out } => {
            let kind: ExperimentKind = experiment.parse()?;
            generate(kind, seed, &out)
        }
        Command::Report { dir, format } => {
            let rows = read_rows(&dir)?;
            let text = match format {
                Format::Csv => rows_to_csv(&rows)?,
                Format::Json => rows_to_json(&rows)?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(kind: ExperimentKind, seed: u64, out: &Path) -> Result<()> {
    let config = ExperimentConfig::new(kind, seed);
    let sizes = config.sizes()?;
    let dataset = match kind {
        ExperimentKind::GmmMisspec => serde_json::to_value(gen_gmm_misspec(seed, sizes.case, sizes.n)?)?,
        ExperimentKind::LdaBars => serde_json::to_value(gen_lda_bars(seed, sizes.k, sizes.m, sizes.n, sizes.v)?)?,
        ExperimentKind::PoissonHmm => serde_json::to_value(gen_poisson_hmm(seed, sizes.t, sizes.stay_prob)?)?,
        ExperimentKind::MweConsistency | ExperimentKind::ToyChain => {
            return Err(ExperimentError::Config(format!(
                "{kind} draws its data inside the run; use `otpdag run`"
            )));
        }
    };
    let manifest = json!({
        "experiment": kind.name(),
        "seed": seed,
        "sizes": {
            "k": sizes.k, "m": sizes.m, "n": sizes.n, "t": sizes.t, "v": sizes.v,
            "case": sizes.case, "stay_prob": sizes.stay_prob,
        },
        "commit": otpdag_experiments::report::commit_id(),
        "dataset_digest": digest(&dataset)?,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_file(&out.join("dataset.json"), &serde_json::to_string(&dataset)?)?;
    write_file(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
