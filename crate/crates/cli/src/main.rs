//! `til`: tile slides, harvest and mix annotations, train and calibrate
//! classifiers, infer TIL maps, evaluate, and serve the threshold review API.

mod annotate;
mod calibrate;
mod eval;
mod infer;
mod paths;
mod serve;
mod synth;
mod tile;
mod train;

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "til", version, about = "TIL map pipeline")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a slide image into non-overlapping PNG patches.
    Tile(tile::TileArgs),
    /// Threshold a TIL map and sample semi-automatic annotations.
    Harvest(annotate::HarvestArgs),
    /// Assemble a mixed training manifest from manual and semi-automatic ones.
    Mix(annotate::MixArgs),
    /// Split manifests into train and test with disjoint patients.
    Split(annotate::SplitArgs),
    /// Print label and source counts of a manifest.
    Stats(annotate::StatsArgs),
    /// Train a patch classifier into a checkpoint directory.
    Train(train::TrainArgs),
    /// Score a manifest's patches with a checkpoint, writing `score,label` CSV.
    Score(calibrate::ScoreArgs),
    /// Pick a decision threshold from validation scores.
    Calibrate(calibrate::CalibrateArgs),
    /// Run a checkpoint over a slide and write its TIL map.
    Infer(infer::InferArgs),
    /// Import a grayscale map image (one pixel per patch).
    ImportMap(infer::ImportMapArgs),
    /// Patch-level metrics for one or more checkpoints.
    Eval(eval::EvalArgs),
    /// Count predicted positive sub-patches per region, grouped by expert label.
    EvalRegions(eval::EvalRegionsArgs),
    /// Register a TIL map (and optionally its slide) with a review store.
    AddMap(serve::AddMapArgs),
    /// Serve the /v1 review API.
    Serve(serve::ServeArgs),
    /// Generate synthetic slides, tiles, ground-truth manifests and regions.
    Synth(synth::SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn is_on(self) -> bool {
        self == Toggle::On
    }
}

/// Writes one line to stdout; a closed pipe is not an error.
pub fn emit(line: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

pub fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Tile(a) => tile::run(a),
        Command::Harvest(a) => annotate::harvest(a),
        Command::Mix(a) => annotate::mix(a),
        Command::Split(a) => annotate::split(a),
        Command::Stats(a) => annotate::stats(a),
        Command::Train(a) => train::run(a),
        Command::Score(a) => calibrate::score(a),
        Command::Calibrate(a) => calibrate::calibrate(a),
        Command::Infer(a) => infer::infer(a),
        Command::ImportMap(a) => infer::import_map(a),
        Command::Eval(a) => eval::eval(a),
        Command::EvalRegions(a) => eval::eval_regions(a),
        Command::AddMap(a) => serve::add_map(a),
        Command::Serve(a) => serve::serve(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes the previous message already quotes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.is_empty() {
            out = msg;
        } else if !out.contains(&msg) {
            out = format!("{out}: {msg}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_chain_skips_quoted_causes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(til_core::TilError::io("x.json", io)).context("reading map");
        assert_eq!(error_chain(&e), "reading map: I/O error on x.json: gone");
    }
}
