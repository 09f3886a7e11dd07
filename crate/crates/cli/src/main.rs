//! `spraygrid`: synthetic fields, weed-fraction masks, pixel regression,
//! spray planning and model reports from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spraygrid::raster::ResampleMethod;
use spraygrid::regress::R2Variant;
use spraygrid::Error;

use crate::output::Format;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing argument)
  3  i/o error
  4  format error (malformed GRF, PNG, JSON or CSV)
  5  alignment or coverage error (grids do not match)
  6  parameter, validation or fit error
  7  numeric outcome error (infeasible target, undefined metric, solver, generation)
  8  integrity error (declared metrics disagree with recomputation)

Failures print a JSON object {\"error\": {\"kind\", \"message\", \"exit_code\"}} on stderr.";

#[derive(Parser, Debug)]
#[command(name = "spraygrid", version, about = "Weed-map analytics and spray planning", after_help = EXIT_CODES)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random choice; overrides seeds in spec files.
    #[arg(long, global = true, env = "SPRAYGRID_SEED")]
    pub seed: Option<u64>,

    /// Stdout rendering: human tables or the JSON summary.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic field (drone mask, satellite bands, fraction mask, prediction, split).
    Synth(SynthArgs),
    /// Convert a binary drone mask into a weed-fraction mask.
    Softmask(SoftmaskArgs),
    /// Build the per-pixel feature table from satellite bands and a fraction mask.
    Features(FeaturesArgs),
    /// Fit the regressor zoo, pick the best ensemble on held-out rows and save it.
    Fit(FitArgs),
    /// Regression metrics of a prediction raster against a fraction mask.
    Eval(EvalArgs),
    /// Select spray thresholds for coverage targets and export spray plans.
    Plan(PlanArgs),
    /// Ingest model records and report the best model per loss.
    Report(ReportArgs),
    /// Render a false-colour composite PNG from satellite bands.
    Composite(CompositeArgs),
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SynthArgs {
    /// Field specification JSON; defaults apply to omitted fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Start from the 50-acre demo field instead of the defaults.
    #[arg(long, conflicts_with = "spec")]
    pub demo: bool,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy, serde::Serialize)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.45)]
    pub train: f64,
    #[arg(long, default_value_t = 0.25)]
    pub heldout: f64,
    #[arg(long, default_value_t = 0.30)]
    pub test: f64,
    /// Split tile edge in satellite pixels.
    #[arg(long, default_value_t = 1)]
    pub block: usize,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SoftmaskArgs {
    /// Binary mask (.grf, or .png with a JSON sidecar).
    #[arg(long)]
    pub mask: PathBuf,
    /// Drone pixels per output pixel edge.
    #[arg(long, required_unless_present = "reference")]
    pub factor: Option<usize>,
    /// Raster whose grid the fraction mask must match.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub satellite: PathBuf,
    #[arg(long)]
    pub fraction: PathBuf,
    /// Split raster (0 train, 1 held-out, 2 test); generated when omitted.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub fractions: SplitArgs,
    /// Feature table CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the binary cache here.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct FitArgs {
    /// Feature table (.csv, or binary cache .sgft).
    #[arg(long)]
    pub features: PathBuf,
    /// Output directory for model.json and fit_report.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Ensemble size for the subset search.
    #[arg(long, default_value_t = 3)]
    pub ensemble_size: usize,
    /// Save the uniform-weight ensemble instead of the optimized one.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long, value_enum, default_value_t = R2Arg::Determination)]
    pub r2: R2Arg,
    /// Also predict this satellite raster into <out>/prediction.grf.
    #[arg(long)]
    pub satellite: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Restrict to one split of this split raster.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test, requires = "split")]
    pub on: SplitArg,
    #[arg(long, value_enum, default_value_t = R2Arg::Determination)]
    pub r2: R2Arg,
    /// Write the metrics JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Fraction mask or binary mask on the prediction grid.
    #[arg(long)]
    pub truth: PathBuf,
    /// Coverage target in percent; repeatable.
    #[arg(long = "target", default_values_t = [90.0, 95.0, 98.0, 99.0])]
    pub targets: Vec<f64>,
    /// Split raster: thresholds are selected on held-out pixels and evaluated on test pixels.
    #[arg(long)]
    pub select_on: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ReportArgs {
    /// Directory of model record JSON files.
    #[arg(long)]
    pub registry: PathBuf,
    /// Primary coverage target for ranking.
    #[arg(long, default_value_t = 99.0)]
    pub target: f64,
    /// Only consider this architecture for the best-per-loss view.
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the report JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record metadata JSON to add to the registry before reporting.
    #[arg(long)]
    pub ingest: Option<PathBuf>,
    /// Prediction raster of the ingested model; its excess is recomputed.
    #[arg(long, requires_all = ["ingest", "truth", "split"])]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct CompositeArgs {
    #[arg(long)]
    pub satellite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "nir")]
    pub red: String,
    #[arg(long, default_value = "green")]
    pub green: String,
    #[arg(long, default_value = "vre2")]
    pub blue: String,
    /// Resample the bands to this raster's grid first.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Bilinear, requires = "reference")]
    pub method: MethodArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Arg {
    Determination,
    Pearson,
}

impl From<R2Arg> for R2Variant {
    fn from(v: R2Arg) -> Self {
        match v {
            R2Arg::Determination => R2Variant::Determination,
            R2Arg::Pearson => R2Variant::PearsonSquared,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Heldout,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Nearest,
    Bilinear,
    BlockAverage,
}

impl From<MethodArg> for ResampleMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nearest => ResampleMethod::Nearest,
            MethodArg::Bilinear => ResampleMethod::Bilinear,
            MethodArg::BlockAverage => ResampleMethod::BlockAverage,
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Format(_) => 4,
        Error::Alignment(_) | Error::Coverage { .. } => 5,
        Error::Parameter(_) | Error::Validation(_) | Error::Fit(_) | Error::HeldoutTooSmall { .. } => 6,
        Error::Infeasible(_)
        | Error::UndefinedMetric(_)
        | Error::UndefinedCoverage
        | Error::Solver(_)
        | Error::Generation(_) => 7,
        Error::Integrity(_) => 8,
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let body = serde_json::json!({"error": {"kind": kind, "message": message, "exit_code": code}});
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end(), 2),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("parameter", &e.to_string(), 6);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), exit_code(&e)),
    }
}
