use std::path::PathBuf;

use bayesflow::analyze::{EffectMode, ProjectMode};
use bayesflow::Variant;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::SamplerSettings;
use crate::svg::PlotKind;

#[derive(Debug, Parser)]
#[command(
    name = "bayesflow",
    version,
    about = "Bayesian workflow for hierarchical negative-binomial defect models",
    after_help = "Settings precedence: command-line flag > BAYESFLOW_OUTPUT_DIR (output directory only) > --config file > built-in default.\nExit codes: 0 success, 1 analysis verdict failed, 2 input error, 3 usage error."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    /// Seed for sampling and simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Use fit archives whose diagnostics failed.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Log-transform predictors as ln(x + 0.5) instead of rejecting zeros.
    #[arg(long)]
    pub log_offset: bool,
    /// Center log predictors on their means.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    /// Warmup iterations per chain.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Retained draws per chain.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub max_tree_depth: Option<usize>,
}

impl SamplerArgs {
    pub fn settings(&self) -> SamplerSettings {
        SamplerSettings {
            chains: self.chains,
            warmup: self.warmup,
            draws: self.draws,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitInput {
    /// Fit archive written by `fit` or `workflow`.
    #[arg(long)]
    pub archive: PathBuf,
    /// Dataset CSV the fit was made on.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset summary table.
    Summary {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Prior predictive simulations and a plausibility verdict.
    PriorCheck {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_variant)]
        model: Option<Variant>,
        #[arg(long)]
        n_sims: Option<usize>,
    },
    /// Sample the posterior and write a fit archive.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_variant)]
        model: Option<Variant>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Recompute the diagnostics of a fit archive.
    Diagnose {
        #[arg(long)]
        archive: PathBuf,
    },
    /// Posterior predictive check of a fit.
    PosteriorCheck {
        #[command(flatten)]
        fit: FitInput,
        #[arg(long)]
        n_sims: Option<usize>,
    },
    /// Simulation-based calibration.
    Sbc {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_variant)]
        model: Option<Variant>,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        /// Posterior draws ranked against per iteration, after thinning.
        #[arg(long, default_value_t = 100)]
        posterior_draws: usize,
        #[arg(long, default_value_t = 4)]
        thinning: usize,
        /// Observations per simulated toy dataset.
        #[arg(long, default_value_t = 20)]
        n_obs: usize,
        /// Simulate data with the mean doubled to confirm the check detects it.
        #[arg(long)]
        inject_fault: bool,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// PSIS-LOO comparison of fits on the same dataset.
    Compare {
        #[arg(long = "archive", required = true, num_args = 1..)]
        archives: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report differences to the best model instead of the next better.
        #[arg(long)]
        diff_to_best: bool,
    },
    /// Prior check, fit, diagnostics, posterior check and comparison for
    /// several models in one pass.
    Workflow {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        models: Vec<Variant>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        n_sims: Option<usize>,
        /// Also run simulation-based calibration for each model.
        #[arg(long)]
        sbc: bool,
        #[arg(long, default_value_t = 100)]
        sbc_iterations: usize,
    },
    /// Language rankings at quantile scenarios.
    Rank {
        #[command(flatten)]
        fit: FitInput,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.25,0.5,0.75,1",
            allow_negative_numbers = true
        )]
        quantiles: Vec<f64>,
    },
    /// Predicted bugs of a new project under custom predictor values.
    Scenario {
        #[command(flatten)]
        fit: FitInput,
        #[arg(long, allow_negative_numbers = true)]
        commits: f64,
        #[arg(long, allow_negative_numbers = true)]
        insertions: f64,
        #[arg(long, allow_negative_numbers = true)]
        age: f64,
        #[arg(long, allow_negative_numbers = true)]
        devs: f64,
        /// Restrict to one language.
        #[arg(long)]
        language: Option<String>,
        #[arg(long, default_value = "custom")]
        label: String,
    },
    /// Effect sizes: pairwise language differences, conditional effects,
    /// parameter intervals, project variability.
    Effect {
        #[command(flatten)]
        fit: FitInput,
        /// Two languages, `A,B`: distribution of bugs(A) − bugs(B).
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, value_parser = parse_effect_mode)]
        mode: Option<EffectMode>,
        #[arg(long, value_parser = parse_project_mode)]
        project: Option<ProjectMode>,
        /// Use at most this many posterior draws for the pairwise effect.
        #[arg(long)]
        max_draws: Option<usize>,
        /// Predictor whose conditional effect to trace.
        #[arg(long)]
        conditional: Option<String>,
        #[arg(long, default_value_t = 40)]
        points: usize,
        /// Anchor language of the conditional effect.
        #[arg(long)]
        language: Option<String>,
        /// Parameters to summarise, e.g. `beta[1],sigma_gamma`.
        #[arg(long, value_delimiter = ',')]
        intervals: Vec<String>,
        #[arg(long, default_value_t = 0.95)]
        prob: f64,
        /// Number of hypothetical projects to simulate.
        #[arg(long)]
        projects: Option<usize>,
        /// Posterior against prior density of the project-level sd.
        #[arg(long)]
        sd_overlay: bool,
    },
    /// Render a table produced by this tool as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKindArg,
        #[arg(long)]
        input: PathBuf,
        /// Output file; default `<input stem>.svg` in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
        /// Violins on a log10(1 + value) axis.
        #[arg(long)]
        log_scale: bool,
        /// Ensemble densities on the raw scale (continuous outcomes).
        #[arg(long)]
        identity_scale: bool,
        /// Trace coordinates to draw.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKindArg {
    DensityOverlay,
    Violin,
    Interval,
    Trace,
}

impl From<PlotKindArg> for PlotKind {
    fn from(k: PlotKindArg) -> Self {
        match k {
            PlotKindArg::DensityOverlay => PlotKind::DensityOverlay,
            PlotKindArg::Violin => PlotKind::Violin,
            PlotKindArg::Interval => PlotKind::Interval,
            PlotKindArg::Trace => PlotKind::Trace,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: bayesflow::Error| e.to_string())
}

fn parse_effect_mode(s: &str) -> Result<EffectMode, String> {
    match s {
        "expected" => Ok(EffectMode::Expected),
        "sampled" => Ok(EffectMode::Sampled),
        _ => Err(format!("unknown mode `{s}` (expected or sampled)")),
    }
}

fn parse_project_mode(s: &str) -> Result<ProjectMode, String> {
    match s {
        "redraw" => Ok(ProjectMode::Redraw),
        "reuse" => Ok(ProjectMode::Reuse),
        _ => Err(format!("unknown project mode `{s}` (redraw or reuse)")),
    }
}
