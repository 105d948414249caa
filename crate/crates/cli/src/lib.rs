//! Pipeline driver: synthetic data, HIN build, training, incremental
//! embedding, detection, evaluation and the rerun benchmark.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use hinmal_core::{Error, Result};

use crate::commands::Context;
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "hinmal", version, about = "Meta-structure graph attention malware detection")]
pub struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Config override, `KEY=VALUE` with a dotted key. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Directory for inputs and outputs given as relative paths.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Write a synthetic manifest, permission map, batch and truth file.
    Gen,
    /// Build the HIN archive and adjacency cache from the manifest.
    Build,
    /// Train the embedding model and write a checkpoint.
    Train,
    /// Embed the out-of-sample batch.
    Embed,
    /// Classify embedded apps.
    Detect,
    /// Compute detection metrics.
    Eval,
    /// Compare incremental embedding with a full rebuild and retrain.
    Bench,
    /// Print the effective configuration.
    Config,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Format(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Config(_) => "config",
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::DimensionMismatch { .. } => "dimension",
        Error::IndexOutOfRange { .. } => "index",
        Error::Format(_) => "format",
        Error::Numerical(_) => "numerical",
    }
}

fn report_error(kind: &str, message: &str, code: i32) {
    eprintln!("{}", json!({"error": kind, "message": message, "exit_code": code}));
}

fn context(cli: &Cli) -> Result<Context> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Context::new(cfg, cli.out.clone())
}

pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A second call within one process fails; the first setting stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = context(cli)?;
    match cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Build => commands::build(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Embed => commands::embed(&ctx),
        Command::Detect => commands::detect(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Bench => commands::bench(&ctx),
        Command::Config => Ok(serde_json::to_value(&ctx.config).expect("config serializes")),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim(), 1);
            return 1;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            report_error(kind(&e), &e.to_string(), code);
            code
        }
    }
}
