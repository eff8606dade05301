//! `dnnsim` command-line front end. Every failure prints one
//! `error:<category>: message` line on stderr and exits with the
//! category's code.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dnnsim", version, about = "Flow-level simulator for data-parallel training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form iteration times, thresholds and speedup curves.
    Analytic(AnalyticArgs),
    /// Simulate one scenario file.
    Simulate(SimulateArgs),
    /// Run a sweep file and emit one CSV row per (value, mechanism).
    Sweep(SweepArgs),
    /// Trace and profile tooling.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Engine-vs-oracle equivalence and invariant battery.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
pub struct AnalyticArgs {
    /// Model size in bits.
    #[arg(long)]
    pub m: f64,
    /// Link bandwidth in bits per second.
    #[arg(long)]
    pub b: f64,
    /// Forward compute seconds.
    #[arg(long)]
    pub cf: f64,
    /// Backprop compute seconds.
    #[arg(long)]
    pub cb: f64,
    #[arg(long, default_value_t = 1)]
    pub w: usize,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long)]
    pub multicast: bool,
    #[arg(long)]
    pub agg: bool,
    /// Print the smallest worker count at which each mechanism helps.
    #[arg(long)]
    pub thresholds: bool,
    /// Print speedup over the baseline at these worker counts.
    #[arg(long, value_delimiter = ',')]
    pub curve: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Write the JSON-lines event log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print the full result summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub sweep: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub json: bool,
    /// Write one event log per row into this directory.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum TraceCommand {
    /// Parse a trace and print it back in canonical form.
    Parse { trace: PathBuf },
    /// Split one iteration and derive a profile from it.
    Partition {
        trace: PathBuf,
        /// Forward compute seconds (traces do not carry it).
        #[arg(long, default_value_t = 0.0)]
        cf: f64,
    },
    /// Synthesize a profile from a preset or a spec file.
    Synth {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Insert copies of a template parameter into a profile.
    Mutate {
        profile: PathBuf,
        /// `compute_heavy`, `network_heavy`, or a JSON parameter file.
        #[arg(long)]
        template: String,
        #[arg(long)]
        count: usize,
        /// Insert position; defaults to just before the output layer.
        #[arg(long)]
        position: Option<usize>,
    },
}

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error:usage: {first}");
            for line in rendered.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                eprintln!("{line}");
            }
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Analytic(a) => commands::analytic(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Trace(t) => commands::trace(&t),
        Command::Selfcheck(a) => commands::selfcheck(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
