use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod eval;
mod frames;
mod overlay;
mod synth;
mod track;

use config::Overlay;

/// Subpixel-precise tracking of rigid objects in image sequences.
#[derive(Parser, Debug)]
#[command(name = "shapetrack", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

/// Tracker configuration, applied as defaults < file < flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON file of dotted configuration keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Minimum score for a tracked frame.
    #[arg(long, global = true, value_name = "V")]
    smin: Option<f64>,
    /// Model update blend factor.
    #[arg(long, global = true, value_name = "V")]
    lambda: Option<f64>,
    /// Seed for model subsampling.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Any configuration key, e.g. `--set search.theta_range=deg:10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    assignments: Vec<String>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

impl ConfigArgs {
    fn overlay(&self) -> shapetrack::Result<Overlay> {
        let mut o = Overlay::default();
        if let Some(path) = &self.config {
            o.apply_file(path)?;
        }
        if let Some(v) = self.smin {
            o.set("s_min", v.into())?;
        }
        if let Some(v) = self.lambda {
            o.set("update.lambda", v.into())?;
        }
        if let Some(v) = self.seed {
            o.set("seed", v.into())?;
        }
        for a in &self.assignments {
            o.apply_assignment(a)?;
        }
        Ok(o)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track an object through a sequence of frames.
    Track(track::TrackArgs),
    /// Score a pose table against ground truth.
    Eval(eval::EvalArgs),
    /// Render a synthetic sequence with exact ground truth.
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overlay = match cli.config.overlay() {
        Ok(o) => o,
        Err(e) => return fail(&e, 2),
    };
    if cli.config.dump_config {
        return match overlay.dump() {
            Ok(s) => {
                println!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, 2),
        };
    }
    let config = match overlay.resolve() {
        Ok(c) => c,
        Err(e) => return fail(&e, 2),
    };
    match cli.command {
        Some(Command::Track(args)) => track::run(&args, config),
        Some(Command::Eval(args)) => eval::run(&args),
        Some(Command::Synth(args)) => synth::run(&args),
        None => {
            eprintln!("error: no command given (track, eval or synth); see --help");
            ExitCode::from(2)
        }
    }
}

pub(crate) fn fail(e: &dyn std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}
