//! Dispatch, progress reporting and manifest assembly.

use std::io::IsTerminal;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};
use crate::error::{RunError, RunResult};
use crate::experiments;
use crate::output::{Csv, RunManifest, StageStatus, Staging};
use crate::verify;

/// Stage messages on standard error, coloured only for terminals without `NO_COLOR`.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    color: bool,
    quiet: bool,
}

impl Progress {
    pub fn from_env() -> Self {
        let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
        Self { color: !no_color && std::io::stderr().is_terminal(), quiet: false }
    }

    pub fn quiet() -> Self {
        Self { color: false, quiet: true }
    }

    pub fn say(&self, stage: &str, msg: &str) {
        if self.quiet {
            return;
        }
        if self.color {
            eprintln!("\x1b[1;36m[{stage}]\x1b[0m {msg}");
        } else {
            eprintln!("[{stage}] {msg}");
        }
    }
}

pub struct Outcome {
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn dispatch(config: &RunConfig, out: &mut Staging, progress: &Progress) -> RunResult<Value> {
    match config.experiment {
        Experiment::Evolve => experiments::evolve(config, out),
        Experiment::Reconstruct => experiments::reconstruct(config, out),
        Experiment::Corners => experiments::corners(config, out),
        Experiment::Sample => experiments::sample(config, out),
        Experiment::Density => experiments::density(config, out),
        Experiment::QuasiInvariance => experiments::quasi_invariance(config, out),
        Experiment::HolderGrowth => experiments::holder_growth(config, out),
        Experiment::RandomCurves => experiments::random_curves(config, out),
        Experiment::Verify => {
            let checks = verify::run_checks(config.seed, &config.verify.skip, |c| {
                let verdict = if c.passed { "pass" } else { "FAIL" };
                progress.say("verify", &format!("{verdict} {} = {:e} (threshold {:e})", c.name, c.value, c.threshold));
            });
            let mut csv = Csv::new(&["check", "value", "threshold", "at_least", "passed"]);
            for c in &checks {
                csv.row(&[
                    c.name.to_string(),
                    crate::output::fmt_f64(c.value),
                    crate::output::fmt_f64(c.threshold),
                    c.at_least.to_string(),
                    c.passed.to_string(),
                ]);
            }
            out.write("verify.csv", &csv.into_bytes())?;
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            let summary = json!({ "checks": checks, "failed": failed });
            if failed.is_empty() {
                Ok(summary)
            } else {
                out.write_json("summary.json", &summary)?;
                Err(RunError::Numerical(format!("invariant checks failed: {}", failed.join(", "))))
            }
        }
    }
}

/// Runs a validated configuration and publishes its output directory.
///
/// Failures inside the experiment are recorded in the manifest and reflected
/// in its `exit_code`; only staging and publishing errors are returned.
pub fn run(config: &RunConfig, progress: &Progress) -> RunResult<Outcome> {
    let name = config.experiment.name();
    let started_at = unix_now();
    let clock = Instant::now();
    let mut staging = Staging::new(&config.output_dir)?;
    progress.say(name, &format!("started, output to {}", config.output_dir.display()));
    let result = dispatch(config, &mut staging, progress);
    let seconds = clock.elapsed().as_secs_f64();
    let (summary, stage, exit_code) = match result {
        Ok(summary) => {
            staging.write_json("summary.json", &summary)?;
            progress.say(name, &format!("done in {seconds:.2} s"));
            let st = StageStatus { name: name.into(), status: "ok".into(), message: None, seconds };
            (summary, st, 0)
        }
        Err(RunError::Io(msg)) => return Err(RunError::Io(msg)),
        Err(e) => {
            progress.say(name, &format!("failed: {e}"));
            let st = StageStatus { name: name.into(), status: "failed".into(), message: Some(e.to_string()), seconds };
            (Value::Null, st, e.exit_code())
        }
    };
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: name.to_string(),
        config: serde_json::to_value(config).map_err(|e| RunError::Io(e.to_string()))?,
        started_at,
        finished_at: unix_now(),
        stages: vec![stage],
        files: staging.inventory(),
        summary,
        exit_code,
    };
    let output_dir = staging.publish(&manifest)?;
    Ok(Outcome { manifest, output_dir })
}
