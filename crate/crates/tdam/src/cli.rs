//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::error::{CliError, Result};
use crate::runconfig::{Provenance, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tdam", version, about = "Multiple-instance survival modelling and survival statistics")]
pub struct Cli {
    /// Root seed every random stream derives from.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for fold- or bag-level parallelism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key = value` config file with `model.*` and `train.*` keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, wins over the file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-signal cohort with feature bags.
    Synth(SynthArgs),
    /// Cross-validated training; writes one checkpoint per fold.
    Train(TrainArgs),
    /// Risk scores and C-index of checkpoints on a cohort.
    Eval(EvalArgs),
    /// Per-patient risk, hazards and survival.
    Predict(PredictArgs),
    /// Per-bin attention heatmap of one bag.
    Heatmap(HeatmapArgs),
    /// Effective receptive field of the final token sequence.
    Erf(ErfArgs),
    /// Survival statistics on a cohort and risk table.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Feature/gene correlation network and hub ranking.
    Netlink(NetlinkArgs),
    /// Cross-validate the full model and each single-module ablation.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub min_patches: usize,
    #[arg(long, default_value_t = 64)]
    pub max_patches: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub min_signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_signal: f64,
    #[arg(long, default_value_t = 0.3)]
    pub censor_rate: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Cohort manifest with a bag column.
    #[arg(long)]
    pub cohort: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Checkpoint file or a directory of `fold*.ckpt`; repeatable. Risks are averaged.
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, required_unless_present = "bag")]
    pub cohort: Option<PathBuf>,
    /// Bag files to score instead of a cohort; repeatable.
    #[arg(long)]
    pub bag: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum RelevanceArg {
    Gradient,
    Shared,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub bag: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "gradient")]
    pub relevance: RelevanceArg,
    /// Also write one PGM raster per bin.
    #[arg(long)]
    pub pgm: bool,
    /// Patch edge in level-0 pixels, used to rasterize coordinates.
    #[arg(long, default_value_t = 256)]
    pub patch_px: i32,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum TargetArg {
    Class,
    Center,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum FormatArg {
    Text,
    Pgm,
}

#[derive(Args, Debug)]
pub struct ErfArgs {
    /// Trained weights; without one, freshly initialized weights from the seed.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, conflicts_with = "grid")]
    pub bag: Option<PathBuf>,
    /// Patch count of a seeded random bag used when no bag is given.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Overrides the ablation of the config or checkpoint.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long, value_enum, default_value = "class")]
    pub target: TargetArg,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

#[derive(Args, Debug, Clone)]
pub struct StatsInput {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Table with `patient_id` and `risk` columns.
    #[arg(long)]
    pub risks: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelInput {
    #[command(flatten)]
    pub data: StatsInput,
    /// Cox predictors; `risk` names the risk column. Defaults to risk plus every covariate.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum StatsCommand {
    /// Kaplan–Meier curves, split at the median risk when risks are given.
    Km(StatsInput),
    /// Log-rank test between the median-split risk groups.
    Logrank(StatsInput),
    /// Univariable screen then joint Cox model.
    Cox(ModelInput),
    /// Time-dependent ROC AUC of the risk score.
    Timeroc {
        #[command(flatten)]
        data: StatsInput,
        #[arg(long, value_delimiter = ',', default_value = "12,36,60")]
        horizons: Vec<f64>,
    },
    /// Restricted mean survival time of the low- and high-risk groups.
    Rmst {
        #[command(flatten)]
        data: StatsInput,
        #[arg(long, value_delimiter = ',', default_value = "12,36,60")]
        tau: Vec<f64>,
    },
    /// Bootstrap interval for an AUC difference between two markers.
    Boot {
        #[command(flatten)]
        data: StatsInput,
        /// Second risk table.
        #[arg(long, required_unless_present = "compare_covariate")]
        compare: Option<PathBuf>,
        /// Use a covariate as the second marker.
        #[arg(long, conflicts_with = "compare")]
        compare_covariate: Option<String>,
        #[arg(long, default_value_t = 36.0)]
        horizon: f64,
        #[arg(long, default_value_t = tdam_core::survstats::DEFAULT_RESAMPLES)]
        resamples: usize,
    },
    /// Predicted against observed survival by quantile group.
    Calib {
        #[command(flatten)]
        model: ModelInput,
        #[arg(long, default_value_t = 36.0)]
        horizon: f64,
        #[arg(long, default_value_t = 5)]
        groups: usize,
    },
    /// Net benefit across risk thresholds.
    Dca {
        #[command(flatten)]
        model: ModelInput,
        #[arg(long, default_value_t = 36.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Points scale and per-patient scores of a Cox nomogram.
    Nomogram {
        #[command(flatten)]
        model: ModelInput,
        #[arg(long, value_delimiter = ',', default_value = "12,36,60")]
        horizons: Vec<f64>,
    },
}

#[derive(Args, Debug)]
pub struct NetlinkArgs {
    /// Generate a planted-hub data set instead of reading files.
    #[arg(long, conflicts_with_all = ["features", "genes"])]
    pub synthetic: bool,
    #[arg(long, default_value_t = 200)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 512)]
    pub n_features: usize,
    #[arg(long, default_value_t = 50)]
    pub n_genes: usize,
    /// Samples × extractor channels, first column the patient id.
    #[arg(long, required_unless_present = "synthetic", requires_all = ["genes", "cohort", "risks"])]
    pub features: Option<PathBuf>,
    /// Samples × genes, first column the patient id.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub risks: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub min_abs_rho: f64,
    #[arg(long, default_value_t = 0.05)]
    pub max_fdr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub gene_p: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Unit edge weights instead of |rho|.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
}

/// Shared state handed to every command.
pub struct Context {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub run: RunConfig,
}

impl Context {
    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, self.run.hash())
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let run = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    let ctx = Context { seed: cli.seed, jobs: cli.jobs as usize, out: cli.out, run };
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Predict(a) => commands::predict(&ctx, &a),
        Command::Heatmap(a) => commands::heatmap(&ctx, &a),
        Command::Erf(a) => commands::erf(&ctx, &a),
        Command::Stats(s) => commands::stats::run(&ctx, s),
        Command::Netlink(a) => commands::netlink(&ctx, &a),
        Command::Ablate(a) => commands::ablate(&ctx, &a),
    }
}

/// Runs the tool and returns its exit code. Failures print the message and a
/// JSON record to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            eprintln!("{}", CliError::Usage(e.kind().to_string()).json_line());
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.json_line());
            e.exit_code()
        }
    }
}
