use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use synthgrid::generators::{synthesize, train, Family, FamilyConfig, GeneratorConfig, SynthesisRegime};
use synthgrid::ingest::{synth_sample_dataset, write_readings_csv, TariffSchedule};
use synthgrid::pipeline::{
    load_real_table, render_markdown, render_pareto_csv, run, EvalReport, RunConfig, RunOptions, REPORT_FILE,
    SAMPLE_DAYS, SAMPLE_HOUSEHOLDS, SAMPLE_SEED,
};

const DEFAULT_OUT: &str = "synthgrid-out";

#[derive(Parser)]
#[command(name = "synthgrid", version, about = "Synthetic smart-meter data benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full benchmark described by a config file.
    Run {
        /// Run configuration (.toml or .json); built-in defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Concurrent jobs.
        #[arg(long, env = "SYNTHGRID_JOBS")]
        jobs: Option<usize>,
        /// Reuse finished jobs recorded in the output manifest.
        #[arg(long)]
        resume: bool,
        /// Output directory (overrides the config).
        #[arg(long, env = "SYNTHGRID_OUT")]
        out: Option<PathBuf>,
    },
    /// Write the bundled sample readings as CSV.
    SampleData {
        #[arg(long, default_value_t = SAMPLE_SEED)]
        seed: u64,
        #[arg(long, default_value_t = SAMPLE_HOUSEHOLDS)]
        households: usize,
        #[arg(long, default_value_t = SAMPLE_DAYS)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a finished run's report.
    Report {
        /// Output directory of a previous run.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
    /// Train one generator family and save its checkpoint.
    Train {
        #[arg(long)]
        family: Family,
        /// Family hyperparameters (TOML); defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run configuration supplying the data source and label settings.
        #[arg(long)]
        run_config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write a full-synthetic table to this CSV.
        #[arg(long)]
        sample_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Json,
    Csv,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    })
}

fn cmd_run(config: Option<PathBuf>, jobs: Option<usize>, resume: bool, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load_config(config.as_ref())?;
    let output_dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if jobs == Some(0) {
        bail!("--jobs must be positive");
    }
    let opts = RunOptions {
        output_dir: output_dir.clone(),
        workers: jobs,
        resume,
        fail_jobs: Vec::new(),
    };
    let report = run(&cfg, &opts)?;
    print!("{}", render_markdown(&report));
    let failed = report.failed_jobs();
    eprintln!("outputs written to {}", output_dir.display());
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} job(s) failed", failed.len());
        Ok(ExitCode::from(2))
    }
}

fn cmd_sample_data(seed: u64, households: usize, days: usize, out: PathBuf) -> Result<()> {
    let data = synth_sample_dataset(seed, households, days, &TariffSchedule::default())?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_readings_csv(&data.readings, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_report(from: PathBuf, format: Format) -> Result<()> {
    let path = from.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match format {
        Format::Md => print!("{}", render_markdown(&report)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => print!("{}", render_pareto_csv(&report)?),
    }
    Ok(())
}

fn cmd_train(
    family: Family,
    config: Option<PathBuf>,
    run_config: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    sample_out: Option<PathBuf>,
) -> Result<()> {
    let family_cfg = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FamilyConfig::from_toml(family, &text)?
        }
        None => FamilyConfig::default_for(family),
    };
    let real = load_real_table(&load_config(run_config.as_ref())?)?;
    let g = train(&real, &GeneratorConfig::new(family_cfg, seed))?;
    g.save(&out)?;
    if let Some(last) = g.log.last() {
        eprintln!("trained {family} for {} epochs; final losses {:?}", last.epoch + 1, last.losses);
    }
    if let Some(path) = sample_out {
        let synth = synthesize(&g, SynthesisRegime::full(), &real, seed)?;
        synth.save_csv(&path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            jobs,
            resume,
            out,
        } => cmd_run(config, jobs, resume, out),
        Command::SampleData {
            seed,
            households,
            days,
            out,
        } => cmd_sample_data(seed, households, days, out).map(|_| ExitCode::SUCCESS),
        Command::Report { from, format } => cmd_report(from, format).map(|_| ExitCode::SUCCESS),
        Command::Train {
            family,
            config,
            run_config,
            seed,
            out,
            sample_out,
        } => cmd_train(family, config, run_config, seed, out, sample_out).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
