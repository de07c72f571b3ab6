//! Command-line front door: chunk corpora, build count stores, inspect
//! rules, generate synthetic data and predictions, and run the analyses.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Given identical
//! inputs and seeds, every command writes byte-identical outputs.

mod chunks;
mod cmd_analyze;
mod cmd_data;
mod cmd_synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ngram-rules", version, about = "masked n-gram count tables and context-rule analyses", disable_help_subcommand = true)]
struct Cli {
    /// Plain-text key=value file supplying default flag values;
    /// command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; 1 forces serial mode with identical outputs.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk a corpus into fixed-length training sequences.
    Chunk(cmd_data::ChunkArgs),
    /// Build masked n-gram count tables over a chunked stream.
    BuildCounts(cmd_data::BuildArgs),
    /// Query a count store for a pattern, or print per-mask stats.
    Query(cmd_data::QueryArgs),
    /// Enumerate, canonicalize, or plan masks for rulesets.
    Rules {
        #[command(subcommand)]
        cmd: cmd_data::RulesCmd,
    },
    /// Generate synthetic corpora and predictions from a seeded source.
    Synth {
        #[command(subcommand)]
        cmd: cmd_synth::SynthCmd,
    },
    /// Run a study over a count store and prediction sets.
    Analyze {
        #[command(subcommand)]
        cmd: cmd_analyze::AnalyzeCmd,
    },
    /// Per-token rule-selection report for one sequence.
    Report(cmd_analyze::ReportArgs),
}

/// Shared analysis knobs.
#[derive(Args, Debug, Clone)]
pub struct MetricArgs {
    /// Distance metric: variational, linf, or js.
    #[arg(long, default_value = "variational")]
    metric: String,
}

impl MetricArgs {
    pub fn parse(&self) -> anyhow::Result<ngram_rules::Metric> {
        Ok(self.metric.parse::<ngram_rules::Metric>()?)
    }
}

fn main() -> ExitCode {
    // Restore default SIGPIPE disposition so a closed pipe ends the
    // process instead of panicking the next stdout write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let argv = match inject_config(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Chunk(args) => cmd_data::chunk(args),
        Command::BuildCounts(args) => cmd_data::build_counts(args),
        Command::Query(args) => cmd_data::query(args),
        Command::Rules { cmd } => cmd_data::rules(cmd),
        Command::Synth { cmd } => cmd_synth::run(cmd),
        Command::Analyze { cmd } => cmd_analyze::run(cmd),
        Command::Report(args) => cmd_analyze::report(args),
    }
}

/// Append `--key value` pairs from the config file for flags not already
/// present on the command line. Environment variables are never consulted.
fn inject_config(mut argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let config_path = argv
        .iter()
        .position(|a| a == "--config")
        .and_then(|i| argv.get(i + 1).cloned())
        .or_else(|| {
            argv.iter()
                .find_map(|a| a.strip_prefix("--config=").map(str::to_string))
        });
    let Some(path) = config_path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("config file {path:?}: {e}"))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("config line {}: expected key=value", lineno + 1))?;
        let flag = format!("--{}", key.trim());
        let already = argv
            .iter()
            .any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
        if !already {
            argv.push(flag);
            argv.push(value.trim().to_string());
        }
    }
    Ok(argv)
}
