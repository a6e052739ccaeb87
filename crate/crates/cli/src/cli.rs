use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{Command, ConfigError, RunConfig};
use crate::output::to_json;
use crate::run::{run, ErrorReport, RunError};
use crate::VERSION_LINE;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DICHOTOMY_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dichotomy-lab", version = VERSION_LINE, about = "Exponential dichotomy experiments for linear delay equations")]
struct Args {
    /// Stage to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`; default `dichotomy-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `numerics.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::new(format!("env.{THREADS_ENV}"), format!("expected a positive integer, got `{raw}`")))?;
    // A second call in the same process finds the pool already built; the
    // first configuration stays in force.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return 2;
    }
    let resolved = RunConfig::load(&args.config).and_then(|c| {
        let mut r = c.resolve()?;
        if let Some(seed) = args.seed {
            r.numerics.seed = seed;
        }
        Ok(r)
    });
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let dir = args
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("dichotomy-out"));
    match run(&cfg, args.command, &dir) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if let Some(v) = outcome.verdict {
                println!("verdict: {}", serde_json::to_string(&v).unwrap_or_default().trim_matches('"'));
            }
            if let Some(s) = &outcome.summary {
                println!("checks: {}", if s.passed { "all passed" } else { "some failed" });
            }
            0
        }
        Err(RunError::Numeric { stage, source }) => {
            let report = ErrorReport::new(args.command, stage, &source);
            let text = to_json(&report).unwrap_or_else(|_| format!("{report:?}"));
            let _ = std::fs::write(dir.join("error.json"), &text);
            eprint!("{text}");
            3
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
