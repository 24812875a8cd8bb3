//! Configuration, orchestration and persistence for the binormal-flow
//! experiments. The binary is a thin wrapper around [`cli_main`].
//!
//! Every run stages its files in a hidden sibling directory and moves it into
//! place at the end, so an interrupted run never leaves partial output. The
//! manifest lists every file with its SHA-256; experiment outputs contain no
//! timing data, so reruns with the same configuration hash identically.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod run;
pub mod svg;
pub mod verify;

use std::path::PathBuf;

use clap::Parser;

pub use config::{parse_config, Experiment, Overrides, RunConfig};
pub use error::{RunError, RunResult};
pub use run::{run, Outcome, Progress};

#[derive(Debug, Parser)]
#[command(name = "binormal-lab", version, about = "Binormal-flow spectral laboratory")]
pub struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// JSON configuration file; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value by its JSON path, e.g. `--set flow.rtol=1e-9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed (replaces `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (replaces `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let overrides = Overrides { experiment: Some(cli.experiment), sets: cli.set, seed: cli.seed, output_dir: cli.out };
    let progress = Progress::from_env();
    let outcome = parse_config(cli.config.as_deref(), &overrides).and_then(|cfg| run(&cfg, &progress));
    match outcome {
        Ok(o) => {
            progress.say("manifest", &format!("{}", o.output_dir.join(output::MANIFEST_NAME).display()));
            o.manifest.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
