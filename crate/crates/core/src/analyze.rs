//! Practical-significance questions answered with a fitted posterior:
//! per-language predictions under scenarios, rankings, pairwise effect
//! sizes, conditional effects, intervals and project variability.
//!
//! Hypothetical new projects get a fresh intercept `Normal(0, σ_γ)` per
//! posterior draw.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checks::thinned_indices;
use crate::data::{Dataset, PredictorTransform, PreparedRow, N_PREDICTORS, PREDICTOR_NAMES};
use crate::error::{Error, Result};
use crate::model::{self, nb, ModelSpec, Params, Variant, WeibullPrior};
use crate::stats::{self, stream_rng};
use crate::Draws;

/// Violin geometry is emitted at these percentiles (1%..99%).
pub fn violin_probs() -> Vec<f64> {
    (1..=99).map(|p| p as f64 / 100.0).collect()
}

/// What-if predictor values in natural units (counts, lines, days, people).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub commits: f64,
    pub insertions: f64,
    pub age: f64,
    pub devs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<usize>,
    pub label: String,
}

impl Scenario {
    pub fn new(
        commits: f64,
        insertions: f64,
        age: f64,
        devs: f64,
        label: impl Into<String>,
    ) -> Self {
        Scenario {
            commits,
            insertions,
            age,
            devs,
            language: None,
            label: label.into(),
        }
    }

    pub fn natural(&self) -> [f64; N_PREDICTORS] {
        [self.commits, self.insertions, self.age, self.devs]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PREDICTOR_NAMES.iter().zip(self.natural()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "scenario {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Predictors on the model's design scale.
    pub fn design(&self, transform: &PredictorTransform) -> Result<[f64; N_PREDICTORS]> {
        self.validate()?;
        transform
            .apply(self.natural())
            .ok_or_else(|| Error::invalid("scenario predictors outside the transform's domain"))
    }
}

/// Constrained posterior draws plus what is needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub params: Vec<Params>,
    pub language_names: Vec<String>,
    pub transform: PredictorTransform,
}

impl FittedModel {
    pub fn new(draws: &Draws, dataset: &Dataset) -> Result<Self> {
        let spec = draws.require_spec()?.clone();
        if spec.variant != Variant::Toy && spec.n_languages != dataset.n_languages() {
            return Err(Error::ModelMismatch(format!(
                "fit has {} languages, dataset {}",
                spec.n_languages,
                dataset.n_languages()
            )));
        }
        Ok(FittedModel {
            params: draws.params()?,
            spec,
            language_names: dataset.language_names.clone(),
            transform: dataset.transform,
        })
    }

    pub fn language_index(&self, name: &str) -> Result<usize> {
        self.language_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown language {name:?}")))
    }

    fn require_counts(&self) -> Result<()> {
        match self.spec.variant {
            Variant::M2 | Variant::M3 => Ok(()),
            v => Err(Error::ModelMismatch(format!(
                "analysis needs a model with predictors (M2 or M3), got {v}"
            ))),
        }
    }

    fn require_m3(&self) -> Result<()> {
        if self.spec.variant == Variant::M3 {
            Ok(())
        } else {
            Err(Error::ModelMismatch(format!(
                "analysis needs M3, got {}",
                self.spec.variant
            )))
        }
    }
}

/// Population part `α + β·x`.
fn population_eta(p: &Params, x: &[f64; N_PREDICTORS]) -> f64 {
    p.alpha + p.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Language part `α_language + β_language·x`.
fn language_eta(variant: Variant, p: &Params, l: usize, x: &[f64; N_PREDICTORS]) -> f64 {
    let mut e = p.alpha_language[l];
    if variant == Variant::M3 {
        e += p.beta_language[l]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>();
    }
    e
}

fn fresh_project<R: Rng + ?Sized>(variant: Variant, p: &Params, rng: &mut R) -> f64 {
    if variant == Variant::M3 {
        p.sigma_gamma * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguagePrediction {
    pub scenario: Scenario,
    /// Indices into `language_names` covered by `samples`.
    pub languages: Vec<usize>,
    pub language_names: Vec<String>,
    /// One simulated bug count per posterior draw, per covered language.
    pub samples: Vec<Vec<f64>>,
    pub note: String,
}

/// Simulated bug counts of a new project under `scenario`, for every
/// language (or only the scenario's language when set).
pub fn simulate_scenario(
    seed: u64,
    fitted: &FittedModel,
    scenario: &Scenario,
) -> Result<LanguagePrediction> {
    fitted.require_counts()?;
    let x = scenario.design(&fitted.transform)?;
    let languages: Vec<usize> = match scenario.language {
        Some(l) if l < fitted.spec.n_languages => vec![l],
        Some(l) => return Err(Error::invalid(format!("language index {l} out of range"))),
        None => (0..fitted.spec.n_languages).collect(),
    };
    let variant = fitted.spec.variant;
    let samples = languages
        .par_iter()
        .map(|&l| {
            let mut rng = stream_rng(seed, l as u64);
            fitted
                .params
                .iter()
                .map(|p| {
                    let eta = population_eta(p, &x)
                        + language_eta(variant, p, l, &x)
                        + fresh_project(variant, p, &mut rng);
                    nb::sample_nb(&mut rng, eta, p.phi)
                })
                .collect()
        })
        .collect();
    Ok(LanguagePrediction {
        scenario: scenario.clone(),
        languages,
        language_names: fitted.language_names.clone(),
        samples,
        note: if variant == Variant::M3 {
            "new project: intercept drawn from Normal(0, sigma_gamma) per posterior draw".into()
        } else {
            "model has no project term".into()
        },
    })
}

impl LanguagePrediction {
    /// `scenario,language,q,value` at the 1%..99% percentiles.
    pub fn violin_csv(&self) -> String {
        let probs = violin_probs();
        let mut s = String::from("scenario,language,q,value\n");
        for (j, &l) in self.languages.iter().enumerate() {
            let mut v = self.samples[j].clone();
            v.sort_by(f64::total_cmp);
            for &q in &probs {
                s.push_str(&format!(
                    "{},{},{q},{}\n",
                    self.scenario.label,
                    self.language_names[l],
                    stats::quantile_sorted(&v, q)
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub language: String,
    pub median: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub scenario: String,
    pub rows: Vec<RankRow>,
    /// Some languages tied on both median and mean and were ordered by label.
    pub tie_broken_by_label: bool,
}

impl RankingTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,rank,language,median,mean,q025,q975\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.scenario, r.rank, r.language, r.median, r.mean, r.q025, r.q975
            ));
        }
        s
    }

    pub fn position(&self, language: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.language == language)
    }
}

/// Lower median: the `⌈n/2⌉`-th order statistic, so that the ordering is
/// unchanged by any increasing transform of the samples.
fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Most defect-prone first: decreasing median, then decreasing mean, then
/// label.
pub fn rank_languages(pred: &LanguagePrediction) -> Result<RankingTable> {
    if pred.languages.len() < 2 {
        return Err(Error::invalid("ranking needs at least two languages"));
    }
    let mut rows: Vec<RankRow> = pred
        .languages
        .iter()
        .zip(&pred.samples)
        .map(|(&l, v)| {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            RankRow {
                rank: 0,
                language: pred.language_names[l].clone(),
                median: lower_median(&sorted),
                mean: stats::mean(&sorted),
                q025: stats::quantile_sorted(&sorted, 0.025),
                q975: stats::quantile_sorted(&sorted, 0.975),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.median
            .total_cmp(&a.median)
            .then_with(|| b.mean.total_cmp(&a.mean))
            .then_with(|| a.language.cmp(&b.language))
    });
    let tie = rows
        .windows(2)
        .any(|w| w[0].median == w[1].median && w[0].mean == w[1].mean);
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(RankingTable {
        scenario: pred.scenario.label.clone(),
        rows,
        tie_broken_by_label: tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMode {
    /// Difference of expected counts `λ₁ − λ₂`.
    #[default]
    Expected,
    /// Difference of independent negative-binomial draws.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectMode {
    /// Fresh project intercept per (row, draw), shared by both languages.
    #[default]
    Redraw,
    /// The fitted intercept of the row's own project.
    Reuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairwiseOptions {
    pub mode: EffectMode,
    pub project: ProjectMode,
    /// Use at most this many equally spaced posterior draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiff {
    pub language_a: String,
    pub language_b: String,
    /// `bugs_a − bugs_b`, row-major over (data row, posterior draw).
    pub samples: Vec<f64>,
    /// Fraction of samples strictly above zero.
    pub prob_positive: f64,
    pub prob_negative: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl PairwiseDiff {
    pub fn summary_csv(&self) -> String {
        format!(
            "language_a,language_b,n_samples,prob_positive,prob_negative,mean,q025,q975\n{},{},{},{},{},{},{},{}\n",
            self.language_a,
            self.language_b,
            self.samples.len(),
            self.prob_positive,
            self.prob_negative,
            self.mean,
            self.q025,
            self.q975
        )
    }

    /// `q,value` at the 1%..99% percentiles of the difference.
    pub fn violin_csv(&self) -> String {
        let mut v = self.samples.clone();
        v.sort_by(f64::total_cmp);
        let mut s = String::from("pair,q,value\n");
        for q in violin_probs() {
            s.push_str(&format!(
                "{}-{},{q},{}\n",
                self.language_a,
                self.language_b,
                stats::quantile_sorted(&v, q)
            ));
        }
        s
    }
}

/// Bugs under language `a` minus bugs under `b`, holding every other
/// predictor at its value in each data row.
pub fn pairwise_effect(
    seed: u64,
    fitted: &FittedModel,
    rows: &[PreparedRow],
    a: usize,
    b: usize,
    options: PairwiseOptions,
) -> Result<PairwiseDiff> {
    fitted.require_counts()?;
    let nl = fitted.spec.n_languages;
    if a >= nl || b >= nl {
        return Err(Error::invalid("unknown language index"));
    }
    if rows.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    let variant = fitted.spec.variant;
    if variant == Variant::M3
        && options.project == ProjectMode::Reuse
        && rows
            .iter()
            .any(|r| r.project_index >= fitted.spec.n_projects)
    {
        return Err(Error::ModelMismatch(
            "row project index out of range".into(),
        ));
    }
    let total = fitted.params.len();
    let idx = match options.max_draws {
        Some(m) if m > 0 && m < total => thinned_indices(total, m),
        _ => (0..total).collect(),
    };
    let per_row: Vec<Vec<f64>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = stream_rng(seed, i as u64);
            idx.iter()
                .map(|&s| {
                    let p = &fitted.params[s];
                    let project = match (variant, options.project) {
                        (Variant::M3, ProjectMode::Reuse) => p.alpha_project[row.project_index],
                        _ => fresh_project(variant, p, &mut rng),
                    };
                    let base = population_eta(p, &row.x) + project;
                    let eta_a = base + language_eta(variant, p, a, &row.x);
                    let eta_b = base + language_eta(variant, p, b, &row.x);
                    match options.mode {
                        EffectMode::Expected => eta_a.exp() - eta_b.exp(),
                        EffectMode::Sampled => {
                            // Fixed draw order keeps swapping `a` and `b` antisymmetric.
                            let (lo, hi) = if a <= b {
                                (eta_a, eta_b)
                            } else {
                                (eta_b, eta_a)
                            };
                            let y_lo = nb::sample_nb(&mut rng, lo, p.phi);
                            let y_hi = nb::sample_nb(&mut rng, hi, p.phi);
                            if a <= b {
                                y_lo - y_hi
                            } else {
                                y_hi - y_lo
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    let samples: Vec<f64> = per_row.into_iter().flatten().collect();
    let n = samples.len() as f64;
    let (q025, q975) = stats::central_interval(&samples, 0.95);
    Ok(PairwiseDiff {
        language_a: fitted.language_names[a].clone(),
        language_b: fitted.language_names[b].clone(),
        prob_positive: samples.iter().filter(|&&d| d > 0.0).count() as f64 / n,
        prob_negative: samples.iter().filter(|&&d| d < 0.0).count() as f64 / n,
        mean: stats::mean(&samples),
        q025,
        q975,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    /// Predictor value in natural units.
    pub value: f64,
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEffect {
    pub predictor: String,
    pub anchor: Scenario,
    pub points: Vec<EffectPoint>,
}

impl ConditionalEffect {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},mean,q025,q975\n", self.predictor);
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.value, p.mean, p.low, p.high));
        }
        s
    }
}

/// Posterior of the expected count `exp(α + β·x)` as one predictor moves
/// along `grid` (natural units) with the others at `anchor`. Group-level
/// terms are left out (population-level curve) unless the anchor selects a
/// language, whose effects are then included.
pub fn conditional_effect(
    fitted: &FittedModel,
    predictor: usize,
    grid: &[f64],
    anchor: &Scenario,
) -> Result<ConditionalEffect> {
    fitted.require_counts()?;
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    if predictor >= N_PREDICTORS {
        return Err(Error::invalid(format!(
            "predictor index {predictor} out of range"
        )));
    }
    if let Some(l) = anchor.language {
        if l >= fitted.spec.n_languages {
            return Err(Error::invalid("anchor language out of range"));
        }
    }
    let points = grid
        .iter()
        .map(|&g| {
            let mut sc = anchor.clone();
            match predictor {
                0 => sc.commits = g,
                1 => sc.insertions = g,
                2 => sc.age = g,
                _ => sc.devs = g,
            }
            let x = sc.design(&fitted.transform)?;
            let mu: Vec<f64> = fitted
                .params
                .iter()
                .map(|p| {
                    let mut eta = population_eta(p, &x);
                    if let Some(l) = anchor.language {
                        eta += language_eta(fitted.spec.variant, p, l, &x);
                    }
                    eta.exp()
                })
                .collect();
            let (low, high) = stats::central_interval(&mu, 0.95);
            Ok(EffectPoint {
                value: g,
                mean: stats::mean(&mu),
                low,
                high,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalEffect {
        predictor: PREDICTOR_NAMES[predictor].to_string(),
        anchor: anchor.clone(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub parameter: String,
    pub prob: f64,
    pub low: f64,
    pub median: f64,
    pub high: f64,
}

/// Central (equal-tailed) interval of one natural-space parameter.
pub fn credible_interval(fitted: &FittedModel, selector: &str, prob: f64) -> Result<Interval> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid("interval probability must lie in (0, 1)"));
    }
    let values: Vec<f64> = fitted
        .params
        .iter()
        .map(|p| p.get(selector))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::invalid(format!("unknown parameter {selector:?}")))?;
    if values.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let (low, high) = stats::central_interval(&values, prob);
    Ok(Interval {
        parameter: selector.to_string(),
        prob,
        low,
        median: stats::quantile(&values, 0.5),
        high,
    })
}

pub fn intervals_csv(intervals: &[Interval]) -> String {
    let mut s = String::from("parameter,prob,low,median,high\n");
    for i in intervals {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            i.parameter, i.prob, i.low, i.median, i.high
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedProject {
    pub project: usize,
    /// Observed row whose predictors and language the project borrows.
    pub source_row: usize,
    pub language: String,
    pub samples: Vec<f64>,
}

/// `n` hypothetical projects, each with predictors taken from an observed
/// row drawn with replacement and a fresh intercept per posterior draw.
pub fn simulate_projects(
    seed: u64,
    fitted: &FittedModel,
    rows: &[PreparedRow],
    n: usize,
) -> Result<Vec<SimulatedProject>> {
    fitted.require_m3()?;
    if n == 0 {
        return Err(Error::invalid("number of projects must be positive"));
    }
    if rows.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    let mut pick = stream_rng(seed, u64::MAX);
    let sources: Vec<usize> = (0..n).map(|_| pick.random_range(0..rows.len())).collect();
    let variant = fitted.spec.variant;
    sources
        .par_iter()
        .enumerate()
        .map(|(j, &src)| {
            let row = &rows[src];
            if row.language_index >= fitted.spec.n_languages {
                return Err(Error::ModelMismatch("row language out of range".into()));
            }
            let mut rng = stream_rng(seed, j as u64);
            let samples = fitted
                .params
                .iter()
                .map(|p| {
                    let eta = population_eta(p, &row.x)
                        + language_eta(variant, p, row.language_index, &row.x)
                        + fresh_project(variant, p, &mut rng);
                    nb::sample_nb(&mut rng, eta, p.phi)
                })
                .collect();
            Ok(SimulatedProject {
                project: j,
                source_row: src,
                language: fitted.language_names[row.language_index].clone(),
                samples,
            })
        })
        .collect()
}

pub fn projects_violin_csv(projects: &[SimulatedProject]) -> String {
    let mut s = String::from("project,language,q,value\n");
    for p in projects {
        let mut v = p.samples.clone();
        v.sort_by(f64::total_cmp);
        for q in violin_probs() {
            s.push_str(&format!(
                "{},{},{q},{}\n",
                p.project,
                p.language,
                stats::quantile_sorted(&v, q)
            ));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdOverlay {
    pub grid: Vec<f64>,
    pub posterior: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior_sd: f64,
    pub prior_sd: f64,
}

impl SdOverlay {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sigma_gamma,posterior_density,prior_density\n");
        for ((g, a), b) in self.grid.iter().zip(&self.posterior).zip(&self.prior) {
            s.push_str(&format!("{g},{a},{b}\n"));
        }
        s
    }
}

const OVERLAY_POINTS: usize = 4001;

/// Posterior kernel density of `σ_γ` next to its Weibull prior density.
pub fn posterior_vs_prior_sd(fitted: &FittedModel) -> Result<SdOverlay> {
    fitted.require_m3()?;
    let prior: WeibullPrior = fitted.spec.priors.group_sd;
    let post: Vec<f64> = fitted.params.iter().map(|p| p.sigma_gamma).collect();
    if post.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let post_max = post.iter().copied().fold(0.0, f64::max);
    let hi = (6.0 * prior.scale).max(1.2 * post_max);
    // Strictly positive, and close enough to 0 that the prior mass below it is
    // negligible.
    let lo = hi * 1e-6;
    let grid = stats::linspace(lo, hi, OVERLAY_POINTS);
    Ok(SdOverlay {
        posterior: stats::kde(&post, &grid),
        prior: grid.iter().map(|&g| prior.density(g)).collect(),
        posterior_sd: stats::sd(&post),
        prior_sd: prior.sd(),
        grid,
    })
}

/// Natural-space language-effect covariance of each draw (M3), for callers
/// that want correlation summaries.
pub fn language_covariances(fitted: &FittedModel) -> Vec<Vec<f64>> {
    fitted
        .params
        .iter()
        .filter_map(|p| p.language_covariance())
        .collect()
}

#[doc(hidden)]
pub fn fitted_from_params(
    spec: ModelSpec,
    params: Vec<Params>,
    language_names: Vec<String>,
) -> FittedModel {
    FittedModel {
        spec,
        params,
        language_names,
        transform: PredictorTransform::default(),
    }
}

/// Constrained parameters of a single unconstrained vector; convenience for
/// building synthetic posteriors.
pub fn params_at(spec: &ModelSpec, u: &[f64]) -> Result<Params> {
    model::constrain(spec, u)
}
