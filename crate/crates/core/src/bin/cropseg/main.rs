mod dataset;
mod predict;
mod render;
mod settings;
mod train;

use std::io::ErrorKind;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cropseg::gradcheck::{format_report, run_suite, GradcheckOptions};
use cropseg::Error;

use settings::{CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "cropseg", version, about = "Multi-temporal crop-type segmentation with a 3D FCN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validity filtering, gap filling and normalization of raw scenes
    Preprocess(dataset::PreprocessArgs),
    /// Generate a synthetic dataset
    Synthesize(dataset::SynthesizeArgs),
    /// Train one model per cross-validation fold
    Train(train::TrainArgs),
    /// Ensemble prediction over full rasters
    Predict(predict::PredictArgs),
    /// Kappa, MA-PA, MA-UA and difference maps
    Evaluate(predict::EvaluateArgs),
    /// Finite-difference check of every analytic gradient
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Random configurations per check
    #[arg(long)]
    seeds: Option<usize>,
    /// Only run checks whose name contains this text
    #[arg(long)]
    filter: Option<String>,
    /// Scale analytic gradients by 1 + PERTURB (harness sanity fixture)
    #[arg(long, hide = true)]
    perturb: Option<f64>,
}

/// Command outcome other than success, mapped onto the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Check(_) => 3,
            Failure::Run(e) => match e.root() {
                Error::Config(_) | Error::Argument(_) => 1,
                Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 1,
                _ => 2,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => format!("usage error: {m}"),
            Failure::Run(e) => e.to_string(),
            Failure::Check(m) => m.clone(),
        }
    }
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "gradcheck")?;
    let defaults = GradcheckOptions::default();
    let opts = GradcheckOptions {
        seeds: settings.pick("seeds", args.seeds, defaults.seeds)?,
        base_seed: settings.seed(),
        perturb: settings.pick("perturb", args.perturb, 0.0)?,
        ..defaults
    };
    settings.warn_unused();
    if opts.seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let reports = run_suite(&opts, args.filter.as_deref())?;
    if reports.is_empty() {
        return Err(Failure::Usage("no gradient check matches the filter".into()));
    }
    print!("{}", format_report(&reports));
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} gradient checks failed", reports.len())));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => dataset::preprocess(a),
        Command::Synthesize(a) => dataset::synthesize(a),
        Command::Train(a) => train::train(a),
        Command::Predict(a) => predict::predict(a),
        Command::Evaluate(a) => predict::evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cropseg: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
