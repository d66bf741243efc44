//! Prior and posterior predictive checks and simulation-based calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, Observations, ObservedData, Params, Variant};
use crate::sampler::{self, diagnose, SamplerConfig, Verdict};
use crate::stats::{self, stream_rng};
use crate::Draws;

/// Tail probability below which an observed statistic counts as surprising.
pub const ADEQUACY_ALPHA: f64 = 0.05;
pub const SBC_BINS: usize = 20;
const CURVE_POINTS: usize = 128;

/// Scale on which statistics and densities are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeScale {
    /// `log10(1 + y)`, for counts.
    Log10p1,
    /// Raw values, for continuous outcomes.
    Identity,
}

impl OutcomeScale {
    pub fn for_variant(variant: Variant) -> Self {
        if variant == Variant::Toy {
            OutcomeScale::Identity
        } else {
            OutcomeScale::Log10p1
        }
    }

    pub fn apply(self, y: f64) -> f64 {
        match self {
            OutcomeScale::Log10p1 => y.ln_1p() / std::f64::consts::LN_10,
            OutcomeScale::Identity => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEnsemble {
    pub simulations: Vec<Vec<f64>>,
    pub observed: Option<Vec<f64>>,
    pub scale: OutcomeScale,
}

impl PredictiveEnsemble {
    pub fn new(
        simulations: Vec<Vec<f64>>,
        observed: Option<Vec<f64>>,
        scale: OutcomeScale,
    ) -> Result<Self> {
        let n = simulations.first().map(|s| s.len());
        if simulations.iter().any(|s| Some(s.len()) != n) {
            return Err(Error::invalid("simulations differ in length"));
        }
        if let (Some(n), Some(obs)) = (n, &observed) {
            if obs.len() != n {
                return Err(Error::invalid("observed length differs from simulations"));
            }
        }
        Ok(PredictiveEnsemble {
            simulations,
            observed,
            scale,
        })
    }

    /// Long-format CSV: `simulation,row,value`; observed rows use
    /// `simulation = observed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("simulation,row,value\n");
        for (j, sim) in self.simulations.iter().enumerate() {
            for (i, v) in sim.iter().enumerate() {
                s.push_str(&format!("{j},{i},{v}\n"));
            }
        }
        if let Some(obs) = &self.observed {
            for (i, v) in obs.iter().enumerate() {
                s.push_str(&format!("observed,{i},{v}\n"));
            }
        }
        s
    }
}

/// Magnitude summary of a prior predictive ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPredictiveSummary {
    pub n_simulations: usize,
    pub max_of_maxima: f64,
    pub median_of_maxima: f64,
    pub pooled_q99: f64,
    pub fraction_above_1e6: f64,
}

impl PredictiveEnsemble {
    pub fn prior_summary(&self) -> PriorPredictiveSummary {
        let maxima: Vec<f64> = self
            .simulations
            .iter()
            .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let pooled: Vec<f64> = self.simulations.iter().flatten().copied().collect();
        let above = pooled.iter().filter(|&&v| v > 1e6).count();
        PriorPredictiveSummary {
            n_simulations: self.simulations.len(),
            max_of_maxima: maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            median_of_maxima: stats::quantile(&maxima, 0.5),
            pooled_q99: stats::quantile(&pooled, 0.99),
            fraction_above_1e6: above as f64 / pooled.len().max(1) as f64,
        }
    }
}

/// Simulation `j` draws fresh parameters from the priors and outcomes over
/// `design`, using random stream `j` of `seed`.
pub fn prior_predictive(
    seed: u64,
    spec: &ModelSpec,
    design: Observations<'_>,
    n_sims: usize,
) -> Result<PredictiveEnsemble> {
    spec.validate()?;
    if n_sims == 0 {
        return Err(Error::invalid("n_sims must be at least 1"));
    }
    let sims: Result<Vec<Vec<f64>>> = (0..n_sims)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, j as u64);
            let p = model::sample_prior(&mut rng, spec);
            model::simulate_outcomes(&mut rng, spec, &p, design)
        })
        .collect();
    PredictiveEnsemble::new(sims?, None, OutcomeScale::for_variant(spec.variant))
}

/// Indices of `n` draws out of `total`, equally spaced.
pub fn thinned_indices(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|j| j * total / n).collect()
}

/// Simulates outcomes on the observed design from `n_sims` equally spaced
/// posterior draws.
pub fn posterior_predictive(
    seed: u64,
    draws: &Draws,
    obs: Observations<'_>,
    n_sims: usize,
) -> Result<PredictiveEnsemble> {
    let spec = draws.require_spec()?;
    let total = draws.total_draws();
    if n_sims == 0 || n_sims > total {
        return Err(Error::invalid(format!(
            "n_sims must lie in 1..={total}, got {n_sims}"
        )));
    }
    let idx = thinned_indices(total, n_sims);
    let sims: Result<Vec<Vec<f64>>> = idx
        .par_iter()
        .enumerate()
        .map(|(j, &s)| {
            let mut rng = stream_rng(seed, j as u64);
            let p = model::constrain(spec, draws.flat_draw(s))?;
            model::simulate_outcomes(&mut rng, spec, &p, obs)
        })
        .collect();
    PredictiveEnsemble::new(
        sims?,
        Some(obs.outcomes()),
        OutcomeScale::for_variant(spec.variant),
    )
}

pub const STATISTIC_NAMES: [&str; 4] = ["mean", "sd", "median", "max"];

fn statistics(values: &[f64], scale: OutcomeScale) -> [f64; 4] {
    let t: Vec<f64> = values.iter().map(|&v| scale.apply(v)).collect();
    [
        stats::mean(&t),
        stats::sd(&t),
        stats::quantile(&t, 0.5),
        t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ]
}

/// `2 min(P(T ≥ t), P(T ≤ t))` over the simulated statistics, capped at 1.
pub fn two_sided_tail_probability(simulated: &[f64], observed: f64) -> f64 {
    let n = simulated.len() as f64;
    let ge = simulated.iter().filter(|&&t| t >= observed).count() as f64 / n;
    let le = simulated.iter().filter(|&&t| t <= observed).count() as f64 / n;
    (2.0 * ge.min(le)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticCheck {
    pub statistic: String,
    pub observed: f64,
    pub simulated_mean: f64,
    pub simulated_low: f64,
    pub simulated_high: f64,
    pub tail_probability: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurves {
    pub grid: Vec<f64>,
    pub simulated: Vec<Vec<f64>>,
    pub observed: Vec<f64>,
}

impl DensityCurves {
    /// Long-format CSV: `curve,x,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curve,x,density\n");
        for (j, c) in self.simulated.iter().enumerate() {
            for (x, d) in self.grid.iter().zip(c) {
                s.push_str(&format!("{j},{x},{d}\n"));
            }
        }
        for (x, d) in self.grid.iter().zip(&self.observed) {
            s.push_str(&format!("observed,{x},{d}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub scale: OutcomeScale,
    pub n_simulations: usize,
    pub checks: Vec<StatisticCheck>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub curves: Option<DensityCurves>,
}

impl AdequacyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "statistic,observed,simulated_mean,simulated_q025,simulated_q975,tail_probability,pass\n",
        );
        for c in &self.checks {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.statistic,
                c.observed,
                c.simulated_mean,
                c.simulated_low,
                c.simulated_high,
                c.tail_probability,
                c.pass
            ));
        }
        s
    }
}

/// Compares observed test statistics with their simulated distribution.
/// The verdict passes iff every tail probability is at least
/// [`ADEQUACY_ALPHA`].
pub fn ppc_summary(ensemble: &PredictiveEnsemble) -> Result<AdequacyReport> {
    let observed = ensemble
        .observed
        .as_ref()
        .ok_or_else(|| Error::invalid("predictive check needs observed outcomes"))?;
    if ensemble.simulations.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    let scale = ensemble.scale;
    let sim_stats: Vec<[f64; 4]> = ensemble
        .simulations
        .par_iter()
        .map(|s| statistics(s, scale))
        .collect();
    let obs_stats = statistics(observed, scale);
    let mut checks = Vec::with_capacity(4);
    for (k, name) in STATISTIC_NAMES.iter().enumerate() {
        let col: Vec<f64> = sim_stats.iter().map(|s| s[k]).collect();
        let p = two_sided_tail_probability(&col, obs_stats[k]);
        let (lo, hi) = stats::central_interval(&col, 0.95);
        checks.push(StatisticCheck {
            statistic: name.to_string(),
            observed: obs_stats[k],
            simulated_mean: stats::mean(&col),
            simulated_low: lo,
            simulated_high: hi,
            tail_probability: p,
            pass: p >= ADEQUACY_ALPHA,
        });
    }
    let verdict = if checks.iter().all(|c| c.pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(AdequacyReport {
        scale,
        n_simulations: ensemble.simulations.len(),
        checks,
        verdict,
        curves: Some(density_curves(ensemble)),
    })
}

/// Kernel densities of every simulation and of the observed outcomes on a
/// shared grid (on the ensemble's scale).
pub fn density_curves(ensemble: &PredictiveEnsemble) -> DensityCurves {
    let scale = ensemble.scale;
    let transformed: Vec<Vec<f64>> = ensemble
        .simulations
        .iter()
        .chain(ensemble.observed.iter())
        .map(|s| s.iter().map(|&v| scale.apply(v)).collect())
        .collect();
    let lo = transformed
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = transformed
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    };
    let grid = stats::linspace(lo, hi, CURVE_POINTS);
    let n_sim = ensemble.simulations.len();
    let curves: Vec<Vec<f64>> = transformed
        .par_iter()
        .map(|t| stats::kde(t, &grid))
        .collect();
    let observed = if ensemble.observed.is_some() {
        curves[n_sim].clone()
    } else {
        Vec::new()
    };
    DensityCurves {
        grid,
        simulated: curves.into_iter().take(n_sim).collect(),
        observed,
    }
}

/// Deliberate misspecification used to confirm that calibration checks
/// detect a broken model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbcFault {
    /// Data are simulated with the mean doubled (`λ` for count models, `μ`
    /// for the toy model) while the fitted model is unchanged.
    DoubleMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub iterations: usize,
    /// Posterior draws `M` ranked against per iteration, after thinning.
    pub posterior_draws: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Chains, warmup and tree depth of each fit; draw count and seed are
    /// derived.
    pub sampler: SamplerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<SbcFault>,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            iterations: 200,
            posterior_draws: 100,
            thinning: 4,
            seed: 1,
            sampler: SamplerConfig {
                n_chains: 1,
                n_warmup: 500,
                ..SamplerConfig::default()
            },
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParameter {
    pub name: String,
    pub ranks: Vec<usize>,
    pub bins: Vec<usize>,
    pub expected_bins: Vec<f64>,
    pub chi_square: f64,
    pub p_value: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcIteration {
    pub iteration: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub divergences: usize,
    pub fit_verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcResult {
    pub posterior_draws: usize,
    pub thinning: usize,
    pub parameters: Vec<SbcParameter>,
    pub iterations: Vec<SbcIteration>,
    pub n_failed: usize,
}

impl SbcResult {
    pub fn min_p_value(&self) -> f64 {
        self.parameters
            .iter()
            .map(|p| p.p_value)
            .fold(f64::INFINITY, f64::min)
    }

    /// `parameter,iteration,rank` for successful iterations.
    pub fn ranks_csv(&self) -> String {
        let ok: Vec<usize> = self
            .iterations
            .iter()
            .filter(|i| i.ok)
            .map(|i| i.iteration)
            .collect();
        let mut s = String::from("parameter,iteration,rank\n");
        for p in &self.parameters {
            for (it, r) in ok.iter().zip(&p.ranks) {
                s.push_str(&format!("{},{it},{r}\n", p.name));
            }
        }
        s
    }

    pub fn bins_csv(&self) -> String {
        let mut s = String::from("parameter,bin,count,expected\n");
        for p in &self.parameters {
            for (b, (c, e)) in p.bins.iter().zip(&p.expected_bins).enumerate() {
                s.push_str(&format!("{},{b},{c},{e}\n", p.name));
            }
        }
        s
    }
}

/// Rank counts, exact expected counts under a discrete uniform on `0..=m`,
/// and the chi-square statistic and p-value over [`SBC_BINS`] bins.
pub fn rank_uniformity(ranks: &[usize], m: usize) -> (Vec<usize>, Vec<f64>, f64, f64) {
    let n_values = m + 1;
    let bin_of = |r: usize| r * SBC_BINS / n_values;
    let mut bins = vec![0usize; SBC_BINS];
    for &r in ranks {
        bins[bin_of(r.min(m))] += 1;
    }
    let mut width = [0usize; SBC_BINS];
    for r in 0..n_values {
        width[bin_of(r)] += 1;
    }
    let n = ranks.len() as f64;
    let expected: Vec<f64> = width
        .iter()
        .map(|&w| n * w as f64 / n_values as f64)
        .collect();
    let mut chi2 = 0.0;
    let mut used = 0usize;
    for (o, e) in bins.iter().zip(&expected) {
        if *e > 0.0 {
            chi2 += (*o as f64 - e).powi(2) / e;
            used += 1;
        }
    }
    let p = if used > 1 && n > 0.0 {
        let dist = ChiSquared::new((used - 1) as f64).expect("positive dof");
        1.0 - dist.cdf(chi2)
    } else {
        f64::NAN
    };
    (bins, expected, chi2, p)
}

fn faulty_params(spec: &ModelSpec, p: &Params, fault: Option<SbcFault>) -> Params {
    let mut q = p.clone();
    if let Some(SbcFault::DoubleMean) = fault {
        if spec.variant == Variant::Toy {
            q.mu *= 2.0;
        } else {
            q.alpha += std::f64::consts::LN_2;
        }
    }
    q
}

struct IterationOutcome {
    ranks: Option<Vec<usize>>,
    record: SbcIteration,
}

fn sbc_iteration(
    config: &SbcConfig,
    spec: &ModelSpec,
    design: Observations<'_>,
    names: &[String],
    iteration: usize,
) -> IterationOutcome {
    let mut rng = stream_rng(config.seed, iteration as u64);
    let truth = model::sample_prior(&mut rng, spec);
    let fail = |e: Error| IterationOutcome {
        ranks: None,
        record: SbcIteration {
            iteration,
            ok: false,
            error: Some(e.to_string()),
            divergences: 0,
            fit_verdict: None,
        },
    };
    let sim_params = faulty_params(spec, &truth, config.fault);
    let y = match model::simulate_outcomes(&mut rng, spec, &sim_params, design) {
        Ok(y) => y,
        Err(e) => return fail(e),
    };
    if y.iter().any(|v| !v.is_finite()) {
        return fail(Error::Sampler("simulated outcomes not finite".into()));
    }
    let data = ObservedData::with_outcomes(design, &y);
    let needed = config.posterior_draws * config.thinning;
    let chains = config.sampler.n_chains;
    let sampler_config = SamplerConfig {
        n_draws: needed.div_ceil(chains),
        seed: config.seed ^ (0x5bc0_0000_0000_0000 | iteration as u64),
        ..config.sampler.clone()
    };
    let draws = match sampler::fit(&sampler_config, spec, data.view()) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let params = match draws.params() {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let kept: Vec<&Params> = params
        .iter()
        .step_by(config.thinning)
        .take(config.posterior_draws)
        .collect();
    let ranks = names
        .iter()
        .map(|n| {
            let t = truth.get(n).expect("selector from spec");
            kept.iter()
                .filter(|p| p.get(n).expect("selector from spec") < t)
                .count()
        })
        .collect();
    let diag = diagnose(&draws);
    IterationOutcome {
        ranks: Some(ranks),
        record: SbcIteration {
            iteration,
            ok: true,
            error: None,
            divergences: diag.divergences,
            fit_verdict: Some(diag.verdict),
        },
    }
}

/// Simulation-based calibration: each iteration draws parameters from the
/// priors, simulates data on `design`, refits and ranks the true value of
/// every scalar parameter among `M` thinned posterior draws.
pub fn sbc(config: &SbcConfig, spec: &ModelSpec, design: Observations<'_>) -> Result<SbcResult> {
    spec.validate()?;
    config.sampler.validate()?;
    if config.iterations == 0 || config.posterior_draws == 0 || config.thinning == 0 {
        return Err(Error::invalid(
            "SBC iterations, draws and thinning must be positive",
        ));
    }
    let names = spec.parameter_names();
    let outcomes: Vec<IterationOutcome> = (0..config.iterations)
        .into_par_iter()
        .map(|i| sbc_iteration(config, spec, design, &names, i))
        .collect();
    let mut per_param: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    let mut iterations = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if let Some(r) = o.ranks {
            for (k, v) in r.into_iter().enumerate() {
                per_param[k].push(v);
            }
        }
        iterations.push(o.record);
    }
    let m = config.posterior_draws;
    let parameters = names
        .into_iter()
        .zip(per_param)
        .map(|(name, ranks)| {
            let (bins, expected_bins, chi_square, p_value) = rank_uniformity(&ranks, m);
            let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len().max(1) as f64;
            SbcParameter {
                name,
                ranks,
                bins,
                expected_bins,
                chi_square,
                p_value,
                mean_rank,
            }
        })
        .collect();
    let n_failed = iterations.iter().filter(|i| !i.ok).count();
    Ok(SbcResult {
        posterior_draws: m,
        thinning: config.thinning,
        parameters,
        iterations,
        n_failed,
    })
}
