//! Subcommand implementations. Each returns whether its analysis verdict
//! passed; errors carry their own exit codes.

use std::path::{Path, PathBuf};

use bayesflow::analyze::{
    conditional_effect, credible_interval, intervals_csv, pairwise_effect, posterior_vs_prior_sd,
    projects_violin_csv, rank_languages, simulate_projects, simulate_scenario, FittedModel,
    LanguagePrediction, PairwiseOptions, RankingTable,
};
use bayesflow::checks::{
    posterior_predictive, ppc_summary, prior_predictive, sbc, AdequacyReport, OutcomeScale,
    PriorPredictiveSummary, SbcConfig, SbcFault, SbcResult,
};
use bayesflow::compare::{
    compare, loo, pointwise_loglik, waic, ComparisonTable, DiffReference, LooResult,
};
use bayesflow::data::{self, dataset_quantile_scenario, PrepareOptions, PREDICTOR_NAMES};
use bayesflow::sampler::{diagnose, fit};
use bayesflow::{
    Dataset, Diagnostics, Draws, ModelSpec, Observations, SamplerConfig, Scenario, Variant,
};
use serde::Serialize;

use crate::archive::FitArchive;
use crate::args::{Command, DataArgs, FitInput, GlobalArgs, SamplerArgs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::svg::{self, PlotKind, PlotOptions, Table};
use crate::workflow;

/// Tail counts above this are implausible for almost every real project.
pub const PLAUSIBLE_COUNT_LIMIT: f64 = 1e6;
/// At most this fraction of prior predictive counts may exceed the limit.
pub const PLAUSIBLE_FRACTION: f64 = 0.5;
/// Calibration fails when any parameter's rank-uniformity p-value is below this.
pub const SBC_ALPHA: f64 = 0.01;
const TRACE_COORDINATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    VerdictFailed,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Passed
        } else {
            Outcome::VerdictFailed
        }
    }
}

pub struct Context {
    pub config: RunConfig,
    pub global: GlobalArgs,
    pub env_out: Option<PathBuf>,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.config.seed(self.global.seed)
    }

    pub fn output(&self) -> CliResult<Output> {
        Output::create(
            self.config
                .output_dir(self.global.out.as_deref(), self.env_out.clone()),
        )
    }

    fn prepare_options(&self, data: &DataArgs) -> PrepareOptions {
        self.config.prepare_options(data.log_offset, data.center)
    }

    fn data_path(&self, flag: Option<&Path>) -> CliResult<PathBuf> {
        self.config.data_path(flag)
    }

    fn sampler(&self, args: &SamplerArgs, base: SamplerConfig) -> SamplerConfig {
        args.settings()
            .or(&self.config.sampler)
            .apply(base, self.seed())
    }
}

/// Output directory; files are written whole, never appended.
pub struct Output {
    pub dir: PathBuf,
}

impl Output {
    pub fn create(dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Output { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }
}

pub fn dispatch(ctx: &Context, command: Command) -> CliResult<Outcome> {
    match command {
        Command::Summary { data } => cmd_summary(ctx, &data),
        Command::PriorCheck {
            data,
            model,
            n_sims,
        } => cmd_prior_check(ctx, &data, model, n_sims),
        Command::Fit {
            data,
            model,
            sampler,
        } => cmd_fit(ctx, &data, model, &sampler),
        Command::Diagnose { archive } => cmd_diagnose(ctx, &archive),
        Command::PosteriorCheck { fit, n_sims } => cmd_posterior_check(ctx, &fit, n_sims),
        Command::Sbc {
            data,
            model,
            iterations,
            posterior_draws,
            thinning,
            n_obs,
            inject_fault,
            sampler,
        } => {
            let base = SbcConfig::default();
            let config = SbcConfig {
                iterations,
                posterior_draws,
                thinning,
                seed: ctx.seed(),
                sampler: ctx.sampler(&sampler, base.sampler),
                fault: inject_fault.then_some(SbcFault::DoubleMean),
            };
            cmd_sbc(ctx, &data, model, config, n_obs)
        }
        Command::Compare {
            archives,
            data,
            diff_to_best,
        } => cmd_compare(ctx, &archives, data.as_deref(), diff_to_best),
        Command::Workflow {
            data,
            models,
            sampler,
            n_sims,
            sbc,
            sbc_iterations,
        } => {
            let models = if models.is_empty() {
                ctx.config
                    .models
                    .clone()
                    .unwrap_or_else(|| vec![Variant::M1, Variant::M2, Variant::M3])
            } else {
                models
            };
            let settings = workflow::Settings {
                data: ctx.data_path(data.data.as_deref())?,
                prepare: ctx.prepare_options(&data),
                models,
                sampler: ctx.sampler(&sampler, SamplerConfig::default()),
                seed: ctx.seed(),
                n_sims: ctx.config.n_sims(n_sims),
                sbc: sbc.then(|| SbcConfig {
                    iterations: sbc_iterations,
                    seed: ctx.seed(),
                    ..SbcConfig::default()
                }),
            };
            workflow::run(&ctx.output()?, &settings)
        }
        Command::Rank { fit, quantiles } => cmd_rank(ctx, &fit, &quantiles),
        Command::Scenario {
            fit,
            commits,
            insertions,
            age,
            devs,
            language,
            label,
        } => {
            let scenario = Scenario::new(commits, insertions, age, devs, label);
            cmd_scenario(ctx, &fit, scenario, language.as_deref())
        }
        Command::Effect {
            fit,
            pair,
            mode,
            project,
            max_draws,
            conditional,
            points,
            language,
            intervals,
            prob,
            projects,
            sd_overlay,
        } => {
            let request = EffectRequest {
                pair,
                pairwise: PairwiseOptions {
                    max_draws,
                    ..ctx.config.pairwise_options(mode, project)
                },
                conditional,
                points,
                language,
                intervals,
                prob,
                projects,
                sd_overlay,
            };
            cmd_effect(ctx, &fit, &request)
        }
        Command::Plot {
            kind,
            input,
            output,
            title,
            log_scale,
            identity_scale,
            columns,
        } => {
            let options = PlotOptions {
                title,
                log_scale,
                identity_scale,
                columns,
            };
            cmd_plot(ctx, kind.into(), &input, output, &options)
        }
    }
}

pub fn load_dataset(path: &Path, options: PrepareOptions) -> CliResult<Dataset> {
    let records = data::load_csv(path).map_err(|e| match e {
        bayesflow::Error::Io(io) => CliError::io(path, io),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })?;
    Ok(data::prepare(&records, options)?)
}

fn count_model(variant: Variant) -> CliResult<Variant> {
    if variant == Variant::Toy {
        Err(CliError::Usage(
            "the toy model has no dataset form; it is available to `sbc` only".into(),
        ))
    } else {
        Ok(variant)
    }
}

/// File-name-safe version of a label.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' | '_' => c,
            '#' => 's',
            '+' => 'p',
            _ => '_',
        })
        .collect()
}

fn cmd_summary(ctx: &Context, args: &DataArgs) -> CliResult<Outcome> {
    let path = ctx.data_path(args.data.as_deref())?;
    let dataset = load_dataset(&path, ctx.prepare_options(args))?;
    let summary = data::summarize(&dataset);
    let out = ctx.output()?;
    out.write("summary.csv", summary.to_csv())?;
    out.write_json("summary.json", &summary)?;
    println!(
        "{} rows, {} languages, {} projects; bugs mean {:.1}, variance {:.1}",
        summary.n_rows,
        summary.n_languages,
        summary.n_projects,
        summary.bug_mean,
        summary.bug_variance
    );
    println!("wrote {}", out.path("summary.csv").display());
    Ok(Outcome::Passed)
}

#[derive(Debug, Clone, Serialize)]
pub struct PriorCheckReport {
    pub model: String,
    pub summary: PriorPredictiveSummary,
    pub plausible: bool,
    pub reasons: Vec<String>,
}

/// Plausible iff simulated counts stay finite and most of them are below
/// [`PLAUSIBLE_COUNT_LIMIT`].
pub fn plausibility(summary: &PriorPredictiveSummary) -> (bool, Vec<String>) {
    let mut reasons = Vec::new();
    if !summary.pooled_q99.is_finite() {
        reasons.push("simulated counts overflow".to_string());
    }
    if summary.fraction_above_1e6 > PLAUSIBLE_FRACTION {
        reasons.push(format!(
            "{:.1}% of simulated counts exceed {PLAUSIBLE_COUNT_LIMIT:e}",
            100.0 * summary.fraction_above_1e6
        ));
    }
    (reasons.is_empty(), reasons)
}

pub fn run_prior_check(
    out: &Output,
    stem: &str,
    dataset: &Dataset,
    variant: Variant,
    seed: u64,
    n_sims: usize,
) -> CliResult<PriorCheckReport> {
    let spec = ModelSpec::for_dataset(variant, dataset);
    let ensemble = prior_predictive(seed, &spec, Observations::from(dataset), n_sims)?;
    let summary = ensemble.prior_summary();
    let (plausible, reasons) = plausibility(&summary);
    let curves = bayesflow::checks::density_curves(&ensemble);
    out.write(&format!("{stem}.csv"), ensemble.to_csv())?;
    let density = curves.to_csv();
    out.write(&format!("{stem}-density.csv"), &density)?;
    let svg = svg::render(
        PlotKind::DensityOverlay,
        &Table::parse(&density)?,
        &PlotOptions {
            title: format!("Prior predictive: {variant}"),
            ..PlotOptions::default()
        },
    )?;
    out.write(&format!("{stem}.svg"), svg)?;
    let report = PriorCheckReport {
        model: variant.to_string(),
        summary,
        plausible,
        reasons,
    };
    out.write_json(&format!("{stem}.json"), &report)?;
    Ok(report)
}

fn cmd_prior_check(
    ctx: &Context,
    args: &DataArgs,
    model: Option<Variant>,
    n_sims: Option<usize>,
) -> CliResult<Outcome> {
    let variant = count_model(ctx.config.model(model)?)?;
    let dataset = load_dataset(
        &ctx.data_path(args.data.as_deref())?,
        ctx.prepare_options(args),
    )?;
    let out = ctx.output()?;
    let stem = format!("prior-{}", variant.name());
    let r = run_prior_check(
        &out,
        &stem,
        &dataset,
        variant,
        ctx.seed(),
        ctx.config.n_sims(n_sims),
    )?;
    println!(
        "{variant}: largest simulated count {:.3e}, pooled 99th percentile {:.3e}, {:.2}% above 1e6",
        r.summary.max_of_maxima,
        r.summary.pooled_q99,
        100.0 * r.summary.fraction_above_1e6
    );
    println!("plausible: {}", verdict_word(r.plausible));
    for reason in &r.reasons {
        println!("  {reason}");
    }
    Ok(Outcome::from_pass(r.plausible))
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

/// Draws table restricted to the leading coordinates, for trace plots.
fn trace_table(draws: &Draws) -> Table {
    let k = draws.dim.min(TRACE_COORDINATES);
    let mut header: Vec<String> = ["chain", "iteration", "energy"].map(String::from).to_vec();
    header.extend(draws.coordinate_names.iter().take(k).cloned());
    let mut rows = Vec::with_capacity(draws.total_draws());
    for c in 0..draws.n_chains {
        for i in 0..draws.n_draws {
            let mut row = vec![
                c.to_string(),
                i.to_string(),
                draws.stat(c, i).energy.to_string(),
            ];
            row.extend(draws.draw(c, i)[..k].iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    Table { header, rows }
}

fn write_diagnostics(out: &Output, stem: &str, diagnostics: &Diagnostics) -> CliResult<()> {
    out.write(&format!("{stem}-diagnostics.csv"), diagnostics.to_csv())?;
    out.write_json(&format!("{stem}-diagnostics.json"), diagnostics)?;
    Ok(())
}

/// Samples, diagnoses and archives a fit. Returns the archive whatever the
/// verdict; fail-marked archives carry the reasons.
pub fn run_fit(
    out: &Output,
    stem: &str,
    dataset: &Dataset,
    prepare: PrepareOptions,
    variant: Variant,
    sampler: &SamplerConfig,
) -> CliResult<FitArchive> {
    let spec = ModelSpec::for_dataset(variant, dataset);
    let draws = fit(sampler, &spec, Observations::from(dataset))?;
    let diagnostics = diagnose(&draws);
    write_diagnostics(out, stem, &diagnostics)?;
    let svg = svg::render(
        PlotKind::Trace,
        &trace_table(&draws),
        &PlotOptions {
            title: format!("Traces: {variant}"),
            ..PlotOptions::default()
        },
    )?;
    out.write(&format!("{stem}-trace.svg"), svg)?;
    let archive = FitArchive::new(dataset, prepare, sampler.clone(), draws, diagnostics)?;
    archive.save(&out.path(&format!("{stem}.json")))?;
    Ok(archive)
}

fn print_diagnostics(variant: Variant, d: &Diagnostics) {
    println!(
        "{variant}: verdict {}; max R-hat {}, min ESS ratio {:.3}, divergences {}",
        verdict_word(d.passed()),
        d.max_rhat
            .map_or_else(|| "unavailable".to_string(), |r| format!("{r:.4}")),
        d.min_ess_ratio,
        d.divergences
    );
    for r in &d.reasons {
        println!("  reason: {r}");
    }
    for w in &d.warnings {
        println!("  warning: {w}");
    }
}

fn cmd_fit(
    ctx: &Context,
    args: &DataArgs,
    model: Option<Variant>,
    sampler: &SamplerArgs,
) -> CliResult<Outcome> {
    let variant = count_model(ctx.config.model(model)?)?;
    let prepare = ctx.prepare_options(args);
    let dataset = load_dataset(&ctx.data_path(args.data.as_deref())?, prepare)?;
    let config = ctx.sampler(sampler, SamplerConfig::default());
    let out = ctx.output()?;
    let stem = format!("fit-{}", variant.name());
    let archive = run_fit(&out, &stem, &dataset, prepare, variant, &config)?;
    out.write(&format!("{stem}-draws.csv"), archive.draws.to_csv())?;
    print_diagnostics(variant, &archive.diagnostics());
    println!("archive: {}", out.path(&format!("{stem}.json")).display());
    Ok(Outcome::from_pass(archive.passed()))
}

fn cmd_diagnose(ctx: &Context, path: &Path) -> CliResult<Outcome> {
    let archive = FitArchive::load(path)?;
    let diagnostics = archive.diagnostics();
    let out = ctx.output()?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fit".into());
    write_diagnostics(&out, &stem, &diagnostics)?;
    print_diagnostics(archive.spec.variant, &diagnostics);
    Ok(Outcome::from_pass(diagnostics.passed()))
}

/// Archive plus the dataset it was fitted on, verified by fingerprint.
pub fn load_fit(ctx: &Context, input: &FitInput) -> CliResult<(FitArchive, Dataset)> {
    let archive = FitArchive::load(&input.archive)?;
    let dataset = load_dataset(&ctx.data_path(input.data.as_deref())?, archive.prepare)?;
    archive.check_dataset(&dataset)?;
    archive.require_pass(ctx.global.force)?;
    Ok((archive, dataset))
}

pub fn run_posterior_check(
    out: &Output,
    stem: &str,
    draws: &Draws,
    dataset: &Dataset,
    seed: u64,
    n_sims: usize,
) -> CliResult<AdequacyReport> {
    let n = n_sims.min(draws.total_draws());
    let ensemble = posterior_predictive(seed, draws, Observations::from(dataset), n)?;
    let report = ppc_summary(&ensemble)?;
    out.write(&format!("{stem}.csv"), report.to_csv())?;
    if let Some(curves) = &report.curves {
        let density = curves.to_csv();
        out.write(&format!("{stem}-density.csv"), &density)?;
        let variant = draws.require_spec()?.variant;
        let svg = svg::render(
            PlotKind::DensityOverlay,
            &Table::parse(&density)?,
            &PlotOptions {
                title: format!("Posterior predictive: {variant}"),
                identity_scale: report.scale == OutcomeScale::Identity,
                ..PlotOptions::default()
            },
        )?;
        out.write(&format!("{stem}.svg"), svg)?;
    }
    out.write_json(&format!("{stem}.json"), &report)?;
    Ok(report)
}

fn print_adequacy(variant: Variant, report: &AdequacyReport) {
    println!("{variant}: adequate: {}", verdict_word(report.passed()));
    for c in &report.checks {
        println!(
            "  {:<6} observed {:>10.4}  simulated mean {:>10.4}  p = {:.3}{}",
            c.statistic,
            c.observed,
            c.simulated_mean,
            c.tail_probability,
            if c.pass { "" } else { "  (fail)" }
        );
    }
}

fn cmd_posterior_check(
    ctx: &Context,
    input: &FitInput,
    n_sims: Option<usize>,
) -> CliResult<Outcome> {
    let (archive, dataset) = load_fit(ctx, input)?;
    let out = ctx.output()?;
    let stem = format!("ppc-{}", archive.spec.variant.name());
    let report = run_posterior_check(
        &out,
        &stem,
        &archive.draws,
        &dataset,
        ctx.seed(),
        ctx.config.n_sims(n_sims),
    )?;
    print_adequacy(archive.spec.variant, &report);
    Ok(Outcome::from_pass(report.passed()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SbcReport {
    pub model: String,
    pub iterations: usize,
    pub posterior_draws: usize,
    pub thinning: usize,
    pub fault_injected: bool,
    pub n_failed: usize,
    pub min_p_value: f64,
    pub calibrated: bool,
    pub parameters: Vec<SbcParameterReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SbcParameterReport {
    pub name: String,
    pub chi_square: f64,
    pub p_value: f64,
    pub mean_rank: f64,
}

pub fn run_sbc(
    out: &Output,
    stem: &str,
    config: &SbcConfig,
    spec: &ModelSpec,
    design: Observations<'_>,
) -> CliResult<(SbcResult, SbcReport)> {
    let result = sbc(config, spec, design)?;
    out.write(&format!("{stem}-ranks.csv"), result.ranks_csv())?;
    out.write(&format!("{stem}-bins.csv"), result.bins_csv())?;
    let min_p = result.min_p_value();
    let report = SbcReport {
        model: spec.variant.to_string(),
        iterations: config.iterations,
        posterior_draws: result.posterior_draws,
        thinning: result.thinning,
        fault_injected: config.fault.is_some(),
        n_failed: result.n_failed,
        min_p_value: min_p,
        calibrated: min_p >= SBC_ALPHA,
        parameters: result
            .parameters
            .iter()
            .map(|p| SbcParameterReport {
                name: p.name.clone(),
                chi_square: p.chi_square,
                p_value: p.p_value,
                mean_rank: p.mean_rank,
            })
            .collect(),
    };
    out.write_json(&format!("{stem}.json"), &report)?;
    Ok((result, report))
}

fn cmd_sbc(
    ctx: &Context,
    args: &DataArgs,
    model: Option<Variant>,
    config: SbcConfig,
    n_obs: usize,
) -> CliResult<Outcome> {
    let variant = ctx.config.model(model)?;
    let out = ctx.output()?;
    let stem = format!("sbc-{}", variant.name());
    let (_, report) = if variant == Variant::Toy {
        if n_obs == 0 {
            return Err(CliError::Usage("--n-obs must be positive".into()));
        }
        let design = vec![0.0; n_obs];
        run_sbc(
            &out,
            &stem,
            &config,
            &ModelSpec::toy(),
            Observations::Heights(&design),
        )?
    } else {
        let dataset = load_dataset(
            &ctx.data_path(args.data.as_deref())?,
            ctx.prepare_options(args),
        )?;
        let spec = ModelSpec::for_dataset(variant, &dataset);
        run_sbc(&out, &stem, &config, &spec, Observations::from(&dataset))?
    };
    println!(
        "{variant}: {} iterations ({} failed fits), calibrated: {}",
        report.iterations,
        report.n_failed,
        verdict_word(report.calibrated)
    );
    for p in &report.parameters {
        println!(
            "  {:<16} chi2 {:>8.2}  p = {:.4}",
            p.name, p.chi_square, p.p_value
        );
    }
    Ok(Outcome::from_pass(report.calibrated))
}

pub fn loo_of(draws: &Draws, dataset: &Dataset) -> CliResult<LooResult> {
    Ok(loo(&pointwise_loglik(draws, Observations::from(dataset))?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCriteria {
    pub model: String,
    pub elpd_loo: f64,
    pub se_elpd: f64,
    pub p_loo: f64,
    pub n_flagged: usize,
    pub elpd_waic: f64,
    pub p_waic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub table: ComparisonTable,
    pub models: Vec<ModelCriteria>,
}

/// Writes pointwise LOO tables, `comparison.csv` and `comparison.json`.
pub fn run_compare(
    out: &Output,
    fits: &[(String, &Draws)],
    dataset: &Dataset,
    reference: DiffReference,
) -> CliResult<ComparisonReport> {
    let mut results = Vec::with_capacity(fits.len());
    let mut criteria = Vec::with_capacity(fits.len());
    for (label, draws) in fits {
        let ll = pointwise_loglik(draws, Observations::from(dataset))?;
        let l = loo(&ll)?;
        let w = waic(&ll)?;
        out.write(&format!("loo-{}.csv", slug(label)), l.pointwise_csv())?;
        criteria.push(ModelCriteria {
            model: label.clone(),
            elpd_loo: l.elpd_loo,
            se_elpd: l.se_elpd,
            p_loo: l.p_loo,
            n_flagged: l.flagged.len(),
            elpd_waic: w.elpd_waic,
            p_waic: w.p_waic,
        });
        results.push((label.clone(), l));
    }
    let table = compare(&results, reference)?;
    out.write("comparison.csv", table.to_csv())?;
    let report = ComparisonReport {
        table,
        models: criteria,
    };
    out.write_json("comparison.json", &report)?;
    Ok(report)
}

pub fn print_comparison(table: &ComparisonTable) {
    println!(
        "{:<6} {:>4} {:>12} {:>10} {:>12} {:>10}",
        "model", "rank", "elpd_diff", "se_diff", "elpd_loo", "se"
    );
    for r in &table.rows {
        println!(
            "{:<6} {:>4} {:>12} {:>10} {:>12.1} {:>10.1}",
            r.model,
            r.rank,
            r.elpd_diff.map_or(String::new(), |d| format!("{d:.1}")),
            r.se_diff.map_or(String::new(), |d| format!("{d:.1}")),
            r.elpd_loo,
            r.se_elpd
        );
    }
}

fn cmd_compare(
    ctx: &Context,
    paths: &[PathBuf],
    data: Option<&Path>,
    diff_to_best: bool,
) -> CliResult<Outcome> {
    if paths.len() < 2 {
        return Err(CliError::Usage(
            "compare needs at least two archives".into(),
        ));
    }
    let mut archives = Vec::with_capacity(paths.len());
    for p in paths {
        let a = FitArchive::load(p)?;
        a.require_pass(ctx.global.force)?;
        archives.push(a);
    }
    let first = &archives[0];
    if let Some(a) = archives
        .iter()
        .find(|a| a.dataset_fingerprint != first.dataset_fingerprint)
    {
        return Err(CliError::Input(format!(
            "archives were fitted on different datasets ({} vs {})",
            first.spec.variant, a.spec.variant
        )));
    }
    let dataset = load_dataset(&ctx.data_path(data)?, first.prepare)?;
    first.check_dataset(&dataset)?;
    let mut fits: Vec<(String, &Draws)> = Vec::with_capacity(archives.len());
    for a in &archives {
        let base = a.spec.variant.to_string();
        let mut label = base.clone();
        let mut k = 2;
        while fits.iter().any(|(l, _)| *l == label) {
            label = format!("{base}_{k}");
            k += 1;
        }
        fits.push((label, &a.draws));
    }
    let reference = if diff_to_best {
        DiffReference::Best
    } else {
        DiffReference::ImmediatelyBetter
    };
    let out = ctx.output()?;
    let report = run_compare(&out, &fits, &dataset, reference)?;
    print_comparison(&report.table);
    for m in &report.models {
        if m.n_flagged > 0 {
            println!("  {}: {} rows with Pareto k > 0.7", m.model, m.n_flagged);
        }
    }
    Ok(Outcome::Passed)
}

/// Prediction reordered to the ranking, so its violin table lists
/// languages in rank order.
fn in_rank_order(pred: &LanguagePrediction, ranking: &RankingTable) -> LanguagePrediction {
    let mut sorted = pred.clone();
    let order: Vec<usize> = ranking
        .rows
        .iter()
        .map(|r| {
            pred.languages
                .iter()
                .position(|&l| pred.language_names[l] == r.language)
                .expect("ranked language comes from the prediction")
        })
        .collect();
    sorted.languages = order.iter().map(|&j| pred.languages[j]).collect();
    sorted.samples = order.iter().map(|&j| pred.samples[j].clone()).collect();
    sorted
}

fn write_prediction(
    out: &Output,
    stem: &str,
    pred: &LanguagePrediction,
    title: &str,
) -> CliResult<Option<RankingTable>> {
    let ranking = if pred.languages.len() >= 2 {
        Some(rank_languages(pred)?)
    } else {
        None
    };
    let ordered = match &ranking {
        Some(r) => {
            out.write(&format!("{stem}.csv"), r.to_csv())?;
            in_rank_order(pred, r)
        }
        None => pred.clone(),
    };
    let violin = ordered.violin_csv();
    out.write(&format!("{stem}-violin.csv"), &violin)?;
    let svg = svg::render(
        PlotKind::Violin,
        &Table::parse(&violin)?,
        &PlotOptions {
            title: title.to_string(),
            log_scale: true,
            ..PlotOptions::default()
        },
    )?;
    out.write(&format!("{stem}.svg"), svg)?;
    Ok(ranking)
}

fn print_ranking(r: &RankingTable) {
    let names: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{} ({:.1})", row.language, row.median))
        .collect();
    println!("{}: {}", r.scenario, names.join(" > "));
    if r.tie_broken_by_label {
        println!("  note: some languages tie on median and mean; ordered by name");
    }
}

fn cmd_rank(ctx: &Context, input: &FitInput, quantiles: &[f64]) -> CliResult<Outcome> {
    if let Some(q) = quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(CliError::Input(format!("quantile {q} outside [0, 1]")));
    }
    let (archive, dataset) = load_fit(ctx, input)?;
    let fitted = FittedModel::new(&archive.draws, &dataset)?;
    let out = ctx.output()?;
    for &q in quantiles {
        let scenario = dataset_quantile_scenario(&dataset, q)?;
        let pred = simulate_scenario(ctx.seed(), &fitted, &scenario)?;
        let stem = format!("rank-{}", slug(&scenario.label));
        let title = format!("Predicted bugs, predictors at quantile {q}");
        if let Some(r) = write_prediction(&out, &stem, &pred, &title)? {
            print_ranking(&r);
        }
    }
    Ok(Outcome::Passed)
}

fn cmd_scenario(
    ctx: &Context,
    input: &FitInput,
    mut scenario: Scenario,
    language: Option<&str>,
) -> CliResult<Outcome> {
    scenario.validate()?;
    let (archive, dataset) = load_fit(ctx, input)?;
    let fitted = FittedModel::new(&archive.draws, &dataset)?;
    if let Some(name) = language {
        scenario.language = Some(fitted.language_index(name)?);
    }
    let pred = simulate_scenario(ctx.seed(), &fitted, &scenario)?;
    let out = ctx.output()?;
    let stem = format!("scenario-{}", slug(&scenario.label));
    let title = format!(
        "Scenario {}: commits {}, insertions {}, age {}, devs {}",
        scenario.label, scenario.commits, scenario.insertions, scenario.age, scenario.devs
    );
    match write_prediction(&out, &stem, &pred, &title)? {
        Some(r) => print_ranking(&r),
        None => {
            let mut v = pred.samples[0].clone();
            v.sort_by(f64::total_cmp);
            println!(
                "{}: median {:.1} bugs, 95% interval [{:.1}, {:.1}]",
                pred.language_names[pred.languages[0]],
                bayesflow::stats::quantile_sorted(&v, 0.5),
                bayesflow::stats::quantile_sorted(&v, 0.025),
                bayesflow::stats::quantile_sorted(&v, 0.975)
            );
        }
    }
    println!("  {}", pred.note);
    Ok(Outcome::Passed)
}

struct EffectRequest {
    pair: Option<String>,
    pairwise: PairwiseOptions,
    conditional: Option<String>,
    points: usize,
    language: Option<String>,
    intervals: Vec<String>,
    prob: f64,
    projects: Option<usize>,
    sd_overlay: bool,
}

fn cmd_effect(ctx: &Context, input: &FitInput, req: &EffectRequest) -> CliResult<Outcome> {
    if req.pair.is_none()
        && req.conditional.is_none()
        && req.intervals.is_empty()
        && req.projects.is_none()
        && !req.sd_overlay
    {
        return Err(CliError::Usage(
            "effect needs at least one of --pair, --conditional, --intervals, --projects, --sd-overlay".into(),
        ));
    }
    let pair = req
        .pair
        .as_deref()
        .map(|p| {
            p.split_once(',')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--pair expects `A,B`, got `{p}`")))
        })
        .transpose()?;
    let predictor = req
        .conditional
        .as_deref()
        .map(|name| {
            PREDICTOR_NAMES
                .iter()
                .position(|p| *p == name)
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown predictor `{name}` (one of {})",
                        PREDICTOR_NAMES.join(", ")
                    ))
                })
        })
        .transpose()?;
    let (archive, dataset) = load_fit(ctx, input)?;
    let fitted = FittedModel::new(&archive.draws, &dataset)?;
    let out = ctx.output()?;
    let seed = ctx.seed();

    if let Some((a, b)) = &pair {
        let diff = pairwise_effect(
            seed,
            &fitted,
            &dataset.rows,
            fitted.language_index(a)?,
            fitted.language_index(b)?,
            req.pairwise,
        )?;
        let stem = format!("effect-{}-{}", slug(a), slug(b));
        out.write(&format!("{stem}.csv"), diff.summary_csv())?;
        let violin = diff.violin_csv();
        out.write(&format!("{stem}-violin.csv"), &violin)?;
        let svg = svg::render(
            PlotKind::Violin,
            &Table::parse(&violin)?,
            &PlotOptions {
                title: format!("bugs({a}) - bugs({b})"),
                ..PlotOptions::default()
            },
        )?;
        out.write(&format!("{stem}.svg"), svg)?;
        println!(
            "{a} - {b}: P(diff > 0) = {:.3}, P(diff < 0) = {:.3}, mean {:.2}, 95% interval [{:.2}, {:.2}]",
            diff.prob_positive, diff.prob_negative, diff.mean, diff.q025, diff.q975
        );
    }

    if let Some(k) = predictor {
        if req.points < 2 {
            return Err(CliError::Usage("--points must be at least 2".into()));
        }
        let mut anchor = dataset_quantile_scenario(&dataset, 0.5)?;
        anchor.label = "median".into();
        if let Some(name) = &req.language {
            anchor.language = Some(fitted.language_index(name)?);
        }
        let lo = dataset_quantile_scenario(&dataset, 0.0)?.natural()[k];
        let hi = dataset_quantile_scenario(&dataset, 1.0)?.natural()[k];
        let grid: Vec<f64> = bayesflow::stats::linspace(lo.ln(), hi.ln(), req.points)
            .into_iter()
            .map(f64::exp)
            .collect();
        let effect = conditional_effect(&fitted, k, &grid, &anchor)?;
        out.write(
            &format!("conditional-{}.csv", PREDICTOR_NAMES[k]),
            effect.to_csv(),
        )?;
        println!(
            "conditional effect of {} written ({} points)",
            PREDICTOR_NAMES[k],
            effect.points.len()
        );
    }

    if !req.intervals.is_empty() {
        let intervals = req
            .intervals
            .iter()
            .map(|s| credible_interval(&fitted, s, req.prob))
            .collect::<bayesflow::Result<Vec<_>>>()?;
        let table = intervals_csv(&intervals);
        out.write("intervals.csv", &table)?;
        let svg = svg::render(
            PlotKind::Interval,
            &Table::parse(&table)?,
            &PlotOptions {
                title: format!("{}% intervals", 100.0 * req.prob),
                ..PlotOptions::default()
            },
        )?;
        out.write("intervals.svg", svg)?;
        for i in &intervals {
            println!(
                "{}: median {:.4}, [{:.4}, {:.4}]",
                i.parameter, i.median, i.low, i.high
            );
        }
    }

    if let Some(n) = req.projects {
        let projects = simulate_projects(seed, &fitted, &dataset.rows, n)?;
        let violin = projects_violin_csv(&projects);
        out.write("projects-violin.csv", &violin)?;
        let svg = svg::render(
            PlotKind::Violin,
            &Table::parse(&violin)?,
            &PlotOptions {
                title: format!("{n} simulated projects"),
                log_scale: true,
                ..PlotOptions::default()
            },
        )?;
        out.write("projects.svg", svg)?;
        println!("simulated {n} projects");
    }

    if req.sd_overlay {
        let overlay = posterior_vs_prior_sd(&fitted)?;
        out.write("sigma-gamma.csv", overlay.to_csv())?;
        println!(
            "sigma_gamma: posterior sd {:.4}, prior sd {:.4}",
            overlay.posterior_sd, overlay.prior_sd
        );
    }
    Ok(Outcome::Passed)
}

fn cmd_plot(
    ctx: &Context,
    kind: PlotKind,
    input: &Path,
    output: Option<PathBuf>,
    options: &PlotOptions,
) -> CliResult<Outcome> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let svg = svg::render(kind, &Table::parse(&text)?, options)?;
    let path = match output {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            p
        }
        None => {
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "plot".into());
            ctx.output()?.path(&format!("{stem}.svg"))
        }
    };
    std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(Outcome::Passed)
}
