//! Split-R̂, bulk effective sample size and the workability verdict.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Draws;
use crate::stats;

pub const RHAT_THRESHOLD: f64 = 1.01;
pub const MIN_ESS_RATIO: f64 = 0.10;

/// Split halves of every chain (middle draw dropped for odd lengths).
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// `√(((n−1)/n · W + B/n) / W)` over the given chains.
///
/// All chains constant and equal (`W = B = 0`) yields 1; constant but
/// different chains yield infinity.
pub fn rhat_of_chains(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = chains.iter().map(|c| stats::variance(c)).sum::<f64>() / m as f64;
    let b = n * stats::variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Split-R̂ of one coordinate; `None` with fewer than 2 chains or 4 draws.
pub fn split_rhat(draws: &Draws, coordinate: usize) -> Option<f64> {
    if draws.n_chains < 2 || draws.n_draws < 4 {
        return None;
    }
    Some(rhat_of_chains(&split_chains(&draws.chains(coordinate))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// Zero variance across all draws; `ess` is then the draw count.
    pub degenerate: bool,
}

/// Biased autocovariance at all lags, via FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = stats::mean(x);
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fwd.process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf.iter()
        .take(n)
        .map(|v| v.re / (size as f64 * n as f64))
        .collect()
}

/// Effective sample size of raw chains with chain-averaged autocorrelations
/// and Geyer's initial monotone positive sequence.
pub fn ess_of_chains(chains: &[Vec<f64>]) -> EssEstimate {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&v| v == first)) {
        return EssEstimate {
            ess: total,
            degenerate: true,
        };
    }
    if n < 4 {
        return EssEstimate {
            ess: total,
            degenerate: true,
        };
    }
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += stats::variance(&means);
    }
    if var_plus <= 0.0 {
        return EssEstimate {
            ess: total,
            degenerate: true,
        };
    }
    let rho_at = |lag: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[lag]).sum::<f64>() / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }
    // Monotone sequence estimator.
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let mut tau = -1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1];
    tau = tau.max(1.0 / total.log10());
    EssEstimate {
        ess: total / tau,
        degenerate: false,
    }
}

/// Replaces values by normal scores of their pooled ranks (average ranks
/// for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| ch.iter().enumerate().map(move |(i, &v)| (v, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let score = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &all[i..=j] {
            out[item.1][item.2] = score;
        }
        i = j + 1;
    }
    out
}

/// Bulk ESS of one coordinate: rank-normalized split chains.
pub fn ess(draws: &Draws, coordinate: usize) -> EssEstimate {
    ess_bulk(&draws.chains(coordinate))
}

pub fn ess_bulk(chains: &[Vec<f64>]) -> EssEstimate {
    let split = if chains[0].len() >= 4 {
        split_chains(chains)
    } else {
        chains.to_vec()
    };
    let first = split[0][0];
    if split.iter().all(|c| c.iter().all(|&v| v == first)) {
        return EssEstimate {
            ess: (chains.len() * chains[0].len()) as f64,
            degenerate: true,
        };
    }
    ess_of_chains(&rank_normalize(&split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: Option<f64>,
    pub ess: f64,
    pub ess_ratio: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnergy {
    pub chain: usize,
    pub mean_energy: f64,
    /// Energy Bayesian fraction of missing information.
    pub e_bfmi: f64,
    pub step_size: f64,
    pub mean_tree_depth: f64,
    pub max_tree_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub coordinates: Vec<CoordinateDiagnostics>,
    pub max_rhat: Option<f64>,
    pub min_ess: f64,
    pub min_ess_ratio: f64,
    pub divergences: usize,
    pub chains: Vec<ChainEnergy>,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn diagnose(draws: &Draws) -> Diagnostics {
    let total = draws.total_draws() as f64;
    let mut coordinates = Vec::with_capacity(draws.dim);
    let mut warnings = Vec::new();
    for j in 0..draws.dim {
        let chains = draws.chains(j);
        let flat: Vec<f64> = chains.iter().flatten().copied().collect();
        let rhat = split_rhat(draws, j);
        let e = ess(draws, j);
        if e.degenerate {
            warnings.push(format!(
                "{}: zero variance, ESS set to draw count",
                draws.coordinate_names[j]
            ));
        }
        coordinates.push(CoordinateDiagnostics {
            name: draws.coordinate_names[j].clone(),
            mean: stats::mean(&flat),
            sd: stats::sd(&flat),
            rhat,
            ess: e.ess,
            ess_ratio: e.ess / total,
            degenerate: e.degenerate,
        });
    }
    let max_rhat = coordinates
        .iter()
        .filter_map(|c| c.rhat)
        .fold(None, |acc: Option<f64>, r| {
            Some(match acc {
                Some(a) if a.is_nan() || a >= r => a,
                _ if r.is_nan() => f64::NAN,
                _ => r,
            })
        });
    let min_ess = coordinates
        .iter()
        .map(|c| c.ess)
        .fold(f64::INFINITY, f64::min);
    let min_ess_ratio = coordinates
        .iter()
        .map(|c| c.ess_ratio)
        .fold(f64::INFINITY, f64::min);
    let divergences = draws.divergences();

    let mut chains = Vec::with_capacity(draws.n_chains);
    for c in 0..draws.n_chains {
        let energy: Vec<f64> = (0..draws.n_draws)
            .map(|i| draws.stat(c, i).energy)
            .collect();
        let num: f64 = energy
            .windows(2)
            .map(|w| (w[1] - w[0]).powi(2))
            .sum::<f64>()
            / energy.len() as f64;
        let m = stats::mean(&energy);
        let den: f64 = energy.iter().map(|e| (e - m).powi(2)).sum::<f64>() / energy.len() as f64;
        let depths: Vec<f64> = (0..draws.n_draws)
            .map(|i| draws.stat(c, i).tree_depth as f64)
            .collect();
        chains.push(ChainEnergy {
            chain: c,
            mean_energy: m,
            e_bfmi: if den > 0.0 { num / den } else { f64::NAN },
            step_size: draws.step_sizes.get(c).copied().unwrap_or(f64::NAN),
            mean_tree_depth: stats::mean(&depths),
            max_tree_depth: (0..draws.n_draws)
                .map(|i| draws.stat(c, i).tree_depth)
                .max()
                .unwrap_or(0),
        });
    }

    let mut reasons = Vec::new();
    match max_rhat {
        None => {
            warnings.push("split R-hat unavailable: needs at least 2 chains of 4 draws".into());
            reasons.push("rhat unavailable".into());
        }
        Some(r) if !(r < RHAT_THRESHOLD) => {
            reasons.push(format!("rhat: max R-hat {r:.4} >= {RHAT_THRESHOLD}"));
        }
        _ => {}
    }
    if !(min_ess_ratio >= MIN_ESS_RATIO) {
        reasons.push(format!(
            "ess: min ESS ratio {min_ess_ratio:.4} < {MIN_ESS_RATIO}"
        ));
    }
    if divergences > 0 {
        reasons.push(format!("divergences: {divergences} divergent transitions"));
    }
    if min_ess < 400.0 {
        warnings.push(format!("min ESS {min_ess:.0} is below a few hundred"));
    }
    Diagnostics {
        coordinates,
        max_rhat,
        min_ess,
        min_ess_ratio,
        divergences,
        chains,
        verdict: if reasons.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        reasons,
        warnings,
    }
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Per-coordinate table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("coordinate,mean,sd,rhat,ess,ess_ratio\n");
        for c in &self.coordinates {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                c.mean,
                c.sd,
                c.rhat.map_or_else(|| "NA".to_string(), |r| r.to_string()),
                c.ess,
                c.ess_ratio
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn draws_1d(chains: Vec<Vec<f64>>) -> Draws {
        let nested: Vec<Vec<Vec<f64>>> = chains
            .into_iter()
            .map(|c| c.into_iter().map(|v| vec![v]).collect())
            .collect();
        Draws::from_chains(&nested)
    }

    #[test]
    fn identical_chains_with_identical_halves() {
        // Split halves of length 1000 that coincide: B = 0, R̂ = √(999/1000).
        let half: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let chain: Vec<f64> = half.iter().chain(half.iter()).copied().collect();
        let d = draws_1d(vec![chain; 4]);
        let r = split_rhat(&d, 0).unwrap();
        assert!((r - (999.0f64 / 1000.0).sqrt()).abs() < 1e-12, "{r}");
        assert!((r - 0.9995).abs() < 1e-4);
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let mut rng = stream_rng(5, 0);
        let a: Vec<f64> = (0..1000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b: Vec<f64> = (0..1000)
            .map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = split_rhat(&draws_1d(vec![a, b]), 0).unwrap();
        assert!(r > 1.5, "{r}");
    }

    #[test]
    fn rhat_needs_two_chains() {
        let d = draws_1d(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert!(split_rhat(&d, 0).is_none());
        let d = draws_1d(vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]);
        assert!(split_rhat(&d, 0).is_none());
    }

    #[test]
    fn constant_chains() {
        let d = draws_1d(vec![vec![2.0; 100]; 4]);
        assert_eq!(split_rhat(&d, 0), Some(1.0));
        let e = ess(&d, 0);
        assert!(e.degenerate);
        assert_eq!(e.ess, 400.0);
        let d = draws_1d(vec![vec![2.0; 100], vec![3.0; 100]]);
        assert_eq!(split_rhat(&d, 0), Some(f64::INFINITY));
    }

    #[test]
    fn autocovariance_matches_direct() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 31) % 17) as f64 * 0.3).collect();
        let a = autocovariance(&x);
        let m = stats::mean(&x);
        for lag in [0, 1, 5, 36] {
            let direct: f64 = (0..x.len() - lag)
                .map(|i| (x[i] - m) * (x[i + lag] - m))
                .sum::<f64>()
                / x.len() as f64;
            assert!((a[lag] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn verdict_rules() {
        let mut rng = stream_rng(9, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                (0..500)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut d = draws_1d(chains);
        assert!(diagnose(&d).passed());
        d.stats[17].divergent = true;
        let diag = diagnose(&d);
        assert_eq!(diag.verdict, Verdict::Fail);
        assert!(diag.reasons.iter().any(|r| r.starts_with("divergences")));
    }
}
