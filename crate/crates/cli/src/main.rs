use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmdet::eval::ReportFormat;
use lmdet::Arch;

mod commands;
mod config;

/// Validation failure detected by the CLI itself (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "lmdet", version, about = "Cephalometric landmark detection by heatmap regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    Synth(SynthArgs),
    /// Cross-validated training; writes checkpoints, histories and a manifest.
    Train(TrainArgs),
    /// Evaluate trained folds, oracle predictions, or a printed table fixture.
    Eval(EvalArgs),
    /// Mean pairwise distance between three annotators, per landmark.
    CompareObservers(CompareArgs),
    /// Finite-difference check of backprop on tiny FCN and U-Net instances.
    Gradcheck(GradcheckArgs),
    /// Re-emit a saved report in another format.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_hw)]
    pub hw: (usize, usize),
    #[arg(long, default_value_t = 5)]
    pub landmarks: usize,
    /// Annotators per image; extra ones are jittered copies of the first.
    #[arg(long, default_value_t = 1)]
    pub annotators: usize,
    /// Largest per-axis offset of the extra annotators, in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub jitter: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pin the published protocol: 80 epochs, lr 0.001, 5 folds,
    /// 432x512 input, 27 landmarks.
    #[arg(long)]
    pub paper_protocol: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "from_fixture")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Run directory; defaults to `<output_dir>/<arch>`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Recompute the means of a printed table instead of evaluating a run.
    #[arg(long, conflicts_with_all = ["run", "oracle"])]
    pub from_fixture: Option<PathBuf>,
    /// Score the target heatmaps themselves instead of trained models.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value = "csv")]
    pub format: ReportFormat,
}

#[derive(Args)]
pub struct CompareArgs {
    /// One or more annotation CSVs; together they must hold three annotators.
    #[arg(long, num_args = 1.., required = true)]
    pub annotations: Vec<PathBuf>,
    /// Centimetres per pixel, `S` or `X,Y`.
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: (f64, f64),
    /// Directory for `interobserver.csv` and `interobserver.md`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: ReportFormat,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Takes kernel size and upsampling mode from this run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["sign-flip"])]
    pub inject_fault: Option<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// `report.json` or a report CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(h)?, p(w)?))
}

fn parse_spacing(s: &str) -> Result<(f64, f64), String> {
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(',') {
        Some((x, y)) => Ok((p(x)?, p(y)?)),
        None => {
            let v = p(s)?;
            Ok((v, v))
        }
    }
}

/// 1 for bad input or configuration, 2 for everything that failed at run
/// time.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<lmdet::Error>() {
            use lmdet::Error as E;
            match e {
                E::Fold { .. } => continue,
                E::InvalidConfig(_)
                | E::InvalidSpacing(..)
                | E::NotDivisible { .. }
                | E::UnknownLandmark(_)
                | E::MissingLandmark { .. }
                | E::Annotation(_)
                | E::CoverageMismatch { .. }
                | E::InconsistentLandmarks(_) => return 1,
                _ => return 2,
            }
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::CompareObservers(a) => commands::compare_observers(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Report(a) => commands::report(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
