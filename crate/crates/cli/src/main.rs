//! `cogmotor`: synthesize, preprocess, train, assess and report.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cogmotor::featurestream::{Modality, Task};

use crate::config::{HeadKind, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cogmotor", version, about = "Multimodal bimanual skill assessment pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON); omitted keys take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; receives the materialized run_config.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Selection {
    /// Trial manifest CSV.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_enum)]
    head: Option<HeadKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic raw dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
    },
    /// Run the neural and motor pipelines and write model-ready matrices.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
    },
    /// Train one network on every trial.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
    },
    /// Repeated leave-one-user-out evaluation.
    Assess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
        /// Per-class trust over correctly classified trials only.
        #[arg(long)]
        correct_only: bool,
    },
    /// Test whether one metric distribution exceeds another.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
    /// Trust spectra and net trust scores from assessment predictions.
    Trust {
        #[command(flatten)]
        common: Common,
        /// predictions.csv written by `assess`.
        predictions: PathBuf,
        #[arg(long)]
        correct_only: bool,
    },
    /// Class activation curves of a trained model.
    Cam {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Selection,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Collect summaries, comparisons, trust and CAM outputs into one bundle.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train the contrastive frame encoder and extract per-frame features.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Directory of PNG frames or a frame blob file.
        frames: PathBuf,
    },
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: cogmotor::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: cogmotor::Error| e.to_string())
}

impl Selection {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = &self.manifest {
            cfg.data.manifest = Some(m.clone());
        }
        if let Some(m) = self.modality {
            cfg.assess.modality = m;
        }
        if let Some(t) = self.task {
            cfg.assess.task = Some(t);
        }
        if let Some(h) = self.head {
            cfg.assess.head = h;
        }
    }
}

/// Loads the config, applies flag overrides, validates, and persists the
/// result to `out/run_config.json`.
fn prepare(common: &Common, overrides: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = Some(jobs);
    }
    overrides(&mut cfg);
    let cfg = cfg.finalize()?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", common.out.display())))?;
    output::write_json(&common.out.join(commands::RUN_CONFIG), &cfg)?;
    Ok(cfg)
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start workers: {e}")))?;
    Ok(pool.install(f))
}

fn run(command: Command) -> CliResult<()> {
    let run_with = |common: &Common, cfg: RunConfig, f: &(dyn Fn(&RunConfig, &Path) -> CliResult<()> + Sync)| {
        in_pool(cfg.jobs, || f(&cfg, &common.out))?
    };
    match command {
        Command::Synth { common, task } => {
            let cfg = prepare(&common, |c| {
                if let Some(t) = task {
                    c.synth.task = t;
                }
            })?;
            run_with(&common, cfg, &commands::synth)
        }
        Command::Preprocess { common, select } => {
            let cfg = prepare(&common, |c| select.apply(c))?;
            run_with(&common, cfg, &commands::preprocess)
        }
        Command::Train { common, select } => {
            let cfg = prepare(&common, |c| select.apply(c))?;
            run_with(&common, cfg, &commands::train)
        }
        Command::Assess {
            common,
            select,
            iterations,
            correct_only,
        } => {
            let cfg = prepare(&common, |c| {
                select.apply(c);
                if let Some(n) = iterations {
                    c.assess.iterations = n;
                }
                c.trust.correct_only |= correct_only;
            })?;
            run_with(&common, cfg, &commands::assess)
        }
        Command::Compare { common, a, b } => {
            prepare(&common, |_| {})?;
            commands::compare(&a, &b, &common.out)
        }
        Command::Trust {
            common,
            predictions,
            correct_only,
        } => {
            let cfg = prepare(&common, |c| c.trust.correct_only |= correct_only)?;
            commands::trust(&cfg, &predictions, &common.out)
        }
        Command::Cam { common, select, model } => {
            let cfg = prepare(&common, |c| select.apply(c))?;
            run_with(&common, cfg, &|c, out| commands::cam(c, &model, out))
        }
        Command::Report { common, inputs } => {
            prepare(&common, |_| {})?;
            commands::report(&inputs, &common.out)
        }
        Command::Extract { common, frames } => {
            let cfg = prepare(&common, |_| {})?;
            run_with(&common, cfg, &|c, out| commands::extract(c, &frames, out))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout with status 0; usage errors to
            // stderr with status 2.
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
