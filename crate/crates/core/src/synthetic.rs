//! Synthetic defect datasets drawn from a known varying-effects process,
//! for recovery tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RawRecord, N_PREDICTORS};
use crate::error::{Error, Result};
use crate::model::nb::sample_nb;
use crate::stats::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_languages: usize,
    pub n_projects: usize,
    pub n_rows: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: [f64; N_PREDICTORS],
    /// Sd of language intercepts.
    pub sigma_language: f64,
    /// Sd of language-specific slopes.
    pub sigma_slope: f64,
    /// Sd of project intercepts.
    pub sigma_project: f64,
    pub phi: f64,
    /// Mean and sd of log commits.
    pub log_commits: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_languages: 5,
            n_projects: 60,
            n_rows: 150,
            seed: 1,
            alpha: -4.5,
            beta: [1.0, 0.1, 0.05, 0.3],
            sigma_language: 0.5,
            sigma_slope: 0.15,
            sigma_project: 1.2,
            phi: 5.0,
            log_commits: (4.5, 3.0),
        }
    }
}

/// Raw records (natural units) from the configured process. Every project
/// gets at least one row; the rest go to random projects, never repeating a
/// (project, language) pair.
pub fn generate_records(config: &SyntheticConfig) -> Result<Vec<RawRecord>> {
    let (nl, np, n) = (config.n_languages, config.n_projects, config.n_rows);
    if nl == 0 || np == 0 || n < np || n > nl * np {
        return Err(Error::invalid(
            "synthetic data needs n_projects <= n_rows <= n_languages * n_projects",
        ));
    }
    let mut rng = stream_rng(config.seed, 0);
    let std = Normal::new(0.0, 1.0).expect("standard normal");

    let mut pairs: Vec<(usize, usize)> = (0..np).map(|p| (p, rng.random_range(0..nl))).collect();
    let mut spare: Vec<(usize, usize)> = (0..np)
        .flat_map(|p| (0..nl).map(move |l| (p, l)))
        .filter(|pl| !pairs.contains(pl))
        .collect();
    spare.shuffle(&mut rng);
    pairs.extend(spare.into_iter().take(n - np));
    pairs.sort_unstable();

    let lang_int: Vec<f64> = (0..nl)
        .map(|_| config.sigma_language * std.sample(&mut rng))
        .collect();
    let lang_slope: Vec<[f64; N_PREDICTORS]> = (0..nl)
        .map(|_| std::array::from_fn(|_| config.sigma_slope * std.sample(&mut rng)))
        .collect();
    let proj: Vec<f64> = (0..np)
        .map(|_| config.sigma_project * std.sample(&mut rng))
        .collect();

    let mut out = Vec::with_capacity(n);
    for (p, l) in pairs {
        let log_commits = config.log_commits.0 + config.log_commits.1 * std.sample(&mut rng);
        let x = [
            log_commits,
            log_commits + 3.5 + 0.8 * std.sample(&mut rng),
            6.5 + 0.8 * std.sample(&mut rng),
            (0.6 * log_commits + 0.7 * std.sample(&mut rng)).max(0.0),
        ];
        // Natural values, rounded as counts; the log design is recomputed by
        // `prepare`, so the model sees exactly the rounded values.
        let commits = x[0].exp().round().max(1.0);
        let insertions = x[1].exp().round().max(1.0);
        let age = x[2].exp().round().max(1.0);
        let devs = x[3].exp().round().max(1.0);
        let xr = [commits.ln(), insertions.ln(), age.ln(), devs.ln()];
        let mut eta = config.alpha + lang_int[l] + proj[p];
        for k in 0..N_PREDICTORS {
            eta += (config.beta[k] + lang_slope[l][k]) * xr[k];
        }
        // The cap keeps records valid; with the default intercept it rarely binds.
        let bugs = sample_nb(&mut rng, eta, config.phi).min(commits);
        out.push(RawRecord {
            project: format!("proj{p:03}"),
            language: format!("lang{l}"),
            commits,
            insertions,
            age,
            devs,
            bugs: bugs as u64,
        });
    }
    Ok(out)
}

/// Prepared dataset from [`generate_records`] with the strict log policy.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    let records = generate_records(config)?;
    crate::data::prepare(&records, Default::default())
}

/// CSV text in the dataset input format.
pub fn to_csv(records: &[RawRecord]) -> String {
    let mut s = String::from("project,language,commits,insertions,age,devs,bugs\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.project, r.language, r.commits, r.insertions, r.age, r.devs, r.bugs
        ));
    }
    s
}
