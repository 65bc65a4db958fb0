mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nrsfm_core::student::StudentMode;
use nrsfm_core::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "nrsfm", version, about = "NRSfM teacher and distilled pose-student pipeline")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: nrsfm-out; `check` writes nothing without it].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Distill,
    Baseline,
}

impl From<Mode> for StudentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Distill => StudentMode::Distill,
            Mode::Baseline => StudentMode::Baseline,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Learn dictionaries and write the teacher outputs.
    TrainNrsfm {
        dataset: PathBuf,
        /// Continue from the dictionary and training state in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Train a pose student from teacher outputs.
    TrainStudent {
        dataset: PathBuf,
        teacher: PathBuf,
        dictionary: PathBuf,
        #[arg(long, value_enum, default_value = "distill")]
        mode: Mode,
    },
    /// Score teacher and student predictions against ground truth.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Student checkpoint; may be repeated.
        #[arg(long)]
        student: Vec<PathBuf>,
        /// Add a row scoring the ground truth against itself.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Run the invariant suites.
    Check,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Numerical(_) | Error::DegenerateCamera(_) | Error::DegenerateShape(_) | Error::AlignmentUndefined(_) => 3,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Dimension(_)
        | Error::Contract(_)
        | Error::DegenerateObservation(_) => 1,
    }
}

fn run(cli: Cli) -> nrsfm_core::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config {
                field: "threads".into(),
                reason: e.to_string(),
            })?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("nrsfm-out"));
    match cli.command {
        Command::Synth => commands::synth(&cfg, &out)?,
        Command::TrainNrsfm { dataset, resume } => commands::train_nrsfm(&cfg, &dataset, &out, resume)?,
        Command::TrainStudent {
            dataset,
            teacher,
            dictionary,
            mode,
        } => commands::train_student_cmd(&cfg, &dataset, &teacher, &dictionary, mode.into(), &out)?,
        Command::Eval {
            dataset,
            teacher,
            dictionary,
            student,
            ground_truth,
        } => {
            let inputs = commands::EvalInputs {
                dataset,
                teacher,
                dictionary,
                students: student,
                ground_truth,
            };
            print!("{}", commands::eval(&cfg, &inputs, &out)?);
        }
        Command::Check => {
            if !commands::check(&cfg, cli.seed.unwrap_or(0), cli.out.as_deref())? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NRSFM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
