//! Command-line driver: `generate`, `train`, `eval` and `analyze`.

pub mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use caranet::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "caranet", version, about = "Small-object segmentation with CaraNet")]
pub struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a setting, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate {
        /// Settings file (`data.*` keys).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the train split of a manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Drop the CFP modules.
        #[arg(long)]
        no_cfp: bool,
        /// Drop the A-RA stages.
        #[arg(long)]
        no_ara: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Predict and score one split with a checkpoint.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `train` or `test`.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Size curves, model comparison and small-object tables from reports.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        /// One or two metric report CSVs.
        #[arg(long, num_args = 1..=2)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        intervals: Option<usize>,
        #[arg(long)]
        cutoff: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// 3 for numerical failures, 2 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn load(file: Option<&PathBuf>, set: &[String], flags: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn path_flag(key: &'static str, p: &Option<PathBuf>) -> Option<(&'static str, String)> {
    p.as_ref().map(|p| (key, p.display().to_string()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { spec, common } => {
            let config = load(spec.as_ref(), &common.set, &[])?;
            commands::generate(commands::Generate { config, out: common.out })
        }
        Command::Train {
            config,
            manifest,
            no_cfp,
            no_ara,
            common,
        } => {
            let mut flags: Vec<_> = path_flag("data.manifest", &manifest).into_iter().collect();
            if no_cfp {
                flags.push(("model.use_cfp", "false".into()));
            }
            if no_ara {
                flags.push(("model.use_ara", "false".into()));
            }
            let config = load(config.as_ref(), &common.set, &flags)?;
            commands::train_cmd(commands::Train { config, out: common.out })
        }
        Command::Eval {
            config,
            checkpoint,
            manifest,
            split,
            common,
        } => {
            let mut flags: Vec<_> = [path_flag("eval.checkpoint", &checkpoint), path_flag("data.manifest", &manifest)]
                .into_iter()
                .flatten()
                .collect();
            if let Some(s) = split {
                flags.push(("eval.split", s));
            }
            let config = load(config.as_ref(), &common.set, &flags)?;
            commands::eval(commands::Eval { config, out: common.out })
        }
        Command::Analyze {
            config,
            reports,
            intervals,
            cutoff,
            common,
        } => {
            let mut flags = Vec::new();
            if !reports.is_empty() {
                let joined = reports.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
                flags.push(("eval.reports", joined));
            }
            if let Some(n) = intervals {
                flags.push(("eval.intervals", n.to_string()));
            }
            if let Some(c) = cutoff {
                flags.push(("eval.cutoff", c.to_string()));
            }
            let config = load(config.as_ref(), &common.set, &flags)?;
            commands::analyze(commands::Analyze { config, out: common.out })
        }
    }
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if cli.sequential {
        caranet::par::set_parallel(false);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
