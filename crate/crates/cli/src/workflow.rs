//! One pass of the workflow per model — plausible, workable, (calibrated),
//! adequate — followed by a comparison of every model that proved
//! workable. A failed stage skips the model's later stages.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bayesflow::checks::SbcConfig;
use bayesflow::compare::DiffReference;
use bayesflow::data::PrepareOptions;
use bayesflow::{ModelSpec, Observations, SamplerConfig, Variant};
use serde::Serialize;

use crate::archive::{fingerprint, FitArchive, TOOL_VERSION};
use crate::commands::{
    load_dataset, run_compare, run_fit, run_posterior_check, run_prior_check, run_sbc,
    ComparisonReport, Outcome, Output,
};
use crate::error::{CliError, CliResult};
use crate::svg::{self, Status};

pub struct Settings {
    pub data: PathBuf,
    pub prepare: PrepareOptions,
    pub models: Vec<Variant>,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub n_sims: usize,
    /// Run calibration as part of the workability stage.
    pub sbc: Option<SbcConfig>,
}

#[derive(Debug, Clone)]
pub struct ModelResult {
    pub variant: Variant,
    pub plausible: Status,
    pub workable: Status,
    pub calibrated: Option<Status>,
    pub adequate: Status,
    pub compared: bool,
    pub max_rhat: Option<f64>,
    pub min_ess_ratio: Option<f64>,
    pub divergences: Option<usize>,
    pub notes: Vec<String>,
}

impl ModelResult {
    fn new(variant: Variant, with_sbc: bool) -> Self {
        ModelResult {
            variant,
            plausible: Status::Skipped,
            workable: Status::Skipped,
            calibrated: with_sbc.then_some(Status::Skipped),
            adequate: Status::Skipped,
            compared: false,
            max_rhat: None,
            min_ess_ratio: None,
            divergences: None,
            notes: Vec::new(),
        }
    }

    fn statuses(&self) -> Vec<Status> {
        let mut v = vec![self.plausible, self.workable];
        v.extend(self.calibrated);
        v.push(self.adequate);
        v
    }

    fn all_passed(&self) -> bool {
        self.statuses().iter().all(|s| *s == Status::Pass)
    }
}

#[derive(Debug, Serialize)]
struct StageTiming {
    model: String,
    stage: &'static str,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct Metadata {
    tool_version: &'static str,
    started_unix_seconds: u64,
    finished_unix_seconds: u64,
    timings: Vec<StageTiming>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn run(out: &Output, settings: &Settings) -> CliResult<Outcome> {
    if settings.models.is_empty() {
        return Err(CliError::Usage("workflow needs at least one model".into()));
    }
    if settings.models.contains(&Variant::Toy) {
        return Err(CliError::Usage(
            "the toy model has no dataset form; it is available to `sbc` only".into(),
        ));
    }
    let mut sorted = settings.models.clone();
    sorted.sort_by_key(|v| v.name());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("each model may be listed once".into()));
    }
    let started = unix_now();
    let dataset = load_dataset(&settings.data, settings.prepare)?;
    let mut timings = Vec::new();
    let mut results = Vec::with_capacity(settings.models.len());
    let mut archives: Vec<FitArchive> = Vec::new();

    for &variant in &settings.models {
        let name = variant.name();
        let mut r = ModelResult::new(variant, settings.sbc.is_some());
        let mut timed = |stage: &'static str, t: Instant| {
            timings.push(StageTiming {
                model: variant.to_string(),
                stage,
                seconds: t.elapsed().as_secs_f64(),
            })
        };

        let t = Instant::now();
        let prior = run_prior_check(
            out,
            &format!("prior-{name}"),
            &dataset,
            variant,
            settings.seed,
            settings.n_sims,
        )?;
        timed("prior-check", t);
        r.plausible = pass_fail(prior.plausible);
        r.notes
            .extend(prior.reasons.iter().map(|x| format!("prior check: {x}")));
        if !prior.plausible {
            results.push(r);
            continue;
        }

        let t = Instant::now();
        let fitted = run_fit(
            out,
            &format!("fit-{name}"),
            &dataset,
            settings.prepare,
            variant,
            &settings.sampler,
        );
        timed("fit", t);
        let archive = match fitted {
            Ok(a) => a,
            Err(CliError::Core(bayesflow::Error::Sampler(msg))) => {
                r.workable = Status::Fail;
                r.notes.push(format!("sampler aborted: {msg}"));
                results.push(r);
                continue;
            }
            Err(e) => return Err(e),
        };
        let diagnostics = archive.diagnostics();
        r.max_rhat = diagnostics.max_rhat;
        r.min_ess_ratio = Some(diagnostics.min_ess_ratio);
        r.divergences = Some(diagnostics.divergences);
        r.workable = pass_fail(archive.passed());
        r.notes.extend(
            diagnostics
                .reasons
                .iter()
                .map(|x| format!("diagnostics: {x}")),
        );
        r.notes.extend(
            diagnostics
                .warnings
                .iter()
                .map(|x| format!("diagnostics warning: {x}")),
        );

        if let Some(sbc_config) = &settings.sbc {
            if archive.passed() {
                let t = Instant::now();
                let spec = ModelSpec::for_dataset(variant, &dataset);
                let (_, report) = run_sbc(
                    out,
                    &format!("sbc-{name}"),
                    sbc_config,
                    &spec,
                    Observations::from(&dataset),
                )?;
                timed("sbc", t);
                r.calibrated = Some(pass_fail(report.calibrated));
                if !report.calibrated {
                    r.notes.push(format!(
                        "calibration: smallest rank-uniformity p-value {:.4}",
                        report.min_p_value
                    ));
                }
            }
        }
        if r.workable != Status::Pass || r.calibrated == Some(Status::Fail) {
            results.push(r);
            continue;
        }

        let t = Instant::now();
        let ppc = run_posterior_check(
            out,
            &format!("ppc-{name}"),
            &archive.draws,
            &dataset,
            settings.seed,
            settings.n_sims,
        )?;
        timed("posterior-check", t);
        r.adequate = pass_fail(ppc.passed());
        for c in ppc.checks.iter().filter(|c| !c.pass) {
            r.notes.push(format!(
                "posterior check: {} observed {:.4}, simulated mean {:.4}, p = {:.3}",
                c.statistic, c.observed, c.simulated_mean, c.tail_probability
            ));
        }
        // Workable models are compared whether or not they are adequate, so
        // that the comparison shows what an inadequate model costs.
        r.compared = true;
        archives.push(archive);
        results.push(r);
    }

    let comparison = if archives.len() >= 2 {
        let t = Instant::now();
        let fits: Vec<(String, &bayesflow::Draws)> = archives
            .iter()
            .map(|a| (a.spec.variant.to_string(), &a.draws))
            .collect();
        let report = run_compare(out, &fits, &dataset, DiffReference::ImmediatelyBetter)?;
        timings.push(StageTiming {
            model: "all".into(),
            stage: "compare",
            seconds: t.elapsed().as_secs_f64(),
        });
        Some(report)
    } else {
        None
    };

    let stages = stage_names(settings.sbc.is_some());
    out.write("workflow.csv", summary_csv(&results, comparison.as_ref()))?;
    out.write(
        "workflow.md",
        summary_markdown(
            &settings.data,
            &dataset,
            &stages,
            &results,
            comparison.as_ref(),
        ),
    )?;
    let grid: Vec<(String, Vec<Status>)> = results
        .iter()
        .map(|r| (r.variant.to_string(), r.statuses()))
        .collect();
    out.write(
        "workflow.svg",
        svg::workflow_summary(&stages, &grid, comparison.as_ref().map(|c| &c.table)),
    )?;
    out.write_json(
        "metadata.json",
        &Metadata {
            tool_version: TOOL_VERSION,
            started_unix_seconds: started,
            finished_unix_seconds: unix_now(),
            timings,
        },
    )?;

    for r in &results {
        let s: Vec<String> = stages
            .iter()
            .zip(r.statuses())
            .map(|(n, st)| format!("{n} {}", st.as_str()))
            .collect();
        println!("{}: {}", r.variant, s.join(", "));
    }
    match &comparison {
        Some(c) => crate::commands::print_comparison(&c.table),
        None => println!("nothing to compare"),
    }
    println!("summary: {}", out.path("workflow.md").display());
    Ok(Outcome::from_pass(
        results.iter().any(ModelResult::all_passed),
    ))
}

fn pass_fail(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn stage_names(with_sbc: bool) -> Vec<&'static str> {
    let mut v = vec!["plausible", "workable"];
    if with_sbc {
        v.push("calibrated");
    }
    v.push("adequate");
    v
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn summary_csv(results: &[ModelResult], comparison: Option<&ComparisonReport>) -> String {
    let mut s = String::from(
        "model,plausible,workable,calibrated,adequate,compared,max_rhat,min_ess_ratio,divergences,rank,elpd_loo,se_elpd,elpd_diff,se_diff\n",
    );
    for r in results {
        let row = comparison.and_then(|c| {
            c.table
                .rows
                .iter()
                .find(|row| row.model == r.variant.to_string())
        });
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.plausible.as_str(),
            r.workable.as_str(),
            r.calibrated.map_or("", Status::as_str),
            r.adequate.as_str(),
            r.compared,
            opt(r.max_rhat),
            opt(r.min_ess_ratio),
            opt(r.divergences),
            opt(row.map(|x| x.rank)),
            opt(row.map(|x| x.elpd_loo)),
            opt(row.map(|x| x.se_elpd)),
            opt(row.and_then(|x| x.elpd_diff)),
            opt(row.and_then(|x| x.se_diff)),
        ));
    }
    s
}

fn summary_markdown(
    data: &std::path::Path,
    dataset: &bayesflow::Dataset,
    stages: &[&str],
    results: &[ModelResult],
    comparison: Option<&ComparisonReport>,
) -> String {
    let mut s = String::from("# Workflow summary\n\n");
    s.push_str(&format!(
        "Dataset `{}`: {} rows, {} languages, {} projects (fingerprint `{}`).\n\n",
        data.file_name().map_or_else(
            || data.display().to_string(),
            |f| f.to_string_lossy().into_owned()
        ),
        dataset.n_rows(),
        dataset.n_languages(),
        dataset.n_projects(),
        &fingerprint(dataset)[..16]
    ));
    s.push_str("## Checks\n\n| model |");
    for st in stages {
        s.push_str(&format!(" {st} |"));
    }
    s.push_str(" max R-hat | min ESS ratio | divergences |\n|---|");
    for _ in stages {
        s.push_str("---|");
    }
    s.push_str("---|---|---|\n");
    for r in results {
        s.push_str(&format!("| {} |", r.variant));
        for st in r.statuses() {
            s.push_str(&format!(" {} |", st.as_str()));
        }
        s.push_str(&format!(
            " {} | {} | {} |\n",
            r.max_rhat.map_or_else(|| "–".into(), |v| format!("{v:.4}")),
            r.min_ess_ratio
                .map_or_else(|| "–".into(), |v| format!("{v:.3}")),
            opt(r.divergences)
        ));
    }
    let notes: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.notes
                .iter()
                .map(move |n| format!("- {}: {n}\n", r.variant))
        })
        .collect();
    if !notes.is_empty() {
        s.push_str("\n### Notes\n\n");
        s.extend(notes);
    }
    s.push_str("\n## Comparison\n\n");
    match comparison {
        Some(c) => {
            s.push_str("Models ranked by PSIS-LOO expected log predictive density; differences are to the model ranked immediately above.\n\n");
            s.push_str("| rank | model | elpd_loo | SE | elpd_diff | SE diff | rows with k > 0.7 |\n|---|---|---|---|---|---|---|\n");
            for row in &c.table.rows {
                s.push_str(&format!(
                    "| {} | {} | {:.1} | {:.1} | {} | {} | {} |\n",
                    row.rank,
                    row.model,
                    row.elpd_loo,
                    row.se_elpd,
                    row.elpd_diff
                        .map_or_else(|| "–".into(), |d| format!("{d:.1}")),
                    row.se_diff
                        .map_or_else(|| "–".into(), |d| format!("{d:.1}")),
                    row.n_flagged
                ));
            }
        }
        None => {
            s.push_str("Nothing to compare: fewer than two models passed the workability stage.\n")
        }
    }
    s
}
