//! Out-of-sample model comparison: Pareto-smoothed importance sampling
//! leave-one-out cross-validation (PSIS-LOO) and WAIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Observations};
use crate::stats::{self, log_sum_exp};
use crate::Draws;

/// Pareto `k` above which an importance-sampling estimate is unreliable.
pub const K_THRESHOLD: f64 = 0.7;
/// Minimum number of posterior draws accepted by [`loo`] and [`waic`].
pub const MIN_DRAWS: usize = 100;

/// Pointwise log-likelihood, `values[s * n_rows + i]` for draw `s`, row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikMatrix {
    pub n_draws: usize,
    pub n_rows: usize,
    pub values: Vec<f64>,
    /// `(chain, iteration)` of each draw.
    pub provenance: Vec<(usize, usize)>,
}

impl LogLikMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_draws = rows.len();
        let n_rows = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_rows) {
            return Err(Error::invalid("ragged log-likelihood rows"));
        }
        Ok(LogLikMatrix {
            n_draws,
            n_rows,
            values: rows.into_iter().flatten().collect(),
            provenance: (0..n_draws).map(|s| (0, s)).collect(),
        })
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_rows..(s + 1) * self.n_rows]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_draws)
            .map(|s| self.values[s * self.n_rows + i])
            .collect()
    }
}

/// Log-likelihood of every observation under every posterior draw.
pub fn pointwise_loglik(draws: &Draws, obs: Observations<'_>) -> Result<LogLikMatrix> {
    let spec = draws.require_spec()?;
    let n_rows = obs.len();
    // Validates the observations against the spec once.
    let first = model::constrain(spec, draws.flat_draw(0))?;
    model::log_likelihood_pointwise(spec, &first, obs)?;
    let mut values = vec![0.0; draws.total_draws() * n_rows];
    values
        .par_chunks_mut(n_rows.max(1))
        .enumerate()
        .try_for_each(|(s, out)| -> Result<()> {
            let p = model::constrain(spec, draws.flat_draw(s))?;
            out.copy_from_slice(&model::log_likelihood_pointwise(spec, &p, obs)?);
            Ok(())
        })?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler("non-finite pointwise log-likelihood".into()));
    }
    let provenance = (0..draws.n_chains)
        .flat_map(|c| (0..draws.n_draws).map(move |i| (c, i)))
        .collect();
    Ok(LogLikMatrix {
        n_draws: draws.total_draws(),
        n_rows,
        values,
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub k: f64,
    pub sigma: f64,
    /// All tail values equal; `k` is then `-∞`.
    pub degenerate: bool,
}

/// Generalized Pareto fit to positive exceedances by the Zhang–Stephens
/// profile posterior mean, with the weakly informative shrinkage of `k`
/// towards 0.5 used by PSIS.
pub fn gpd_fit(tail: &[f64]) -> Result<GpdFit> {
    let n = tail.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "generalized Pareto fit needs at least 5 tail samples, got {n}"
        )));
    }
    let mut x = tail.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] <= f64::EPSILON * x[n - 1].abs().max(f64::MIN_POSITIVE) {
        return Ok(GpdFit {
            k: f64::NEG_INFINITY,
            sigma: f64::NAN,
            degenerate: true,
        });
    }
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let xstar = x[((n as f64 / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let nf = n as f64;
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x[n - 1] + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
        .collect();
    let log_lik: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&v| (-t * v).ln_1p()).sum::<f64>() / nf;
            nf * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&log_lik);
    let theta_hat: f64 = theta
        .iter()
        .zip(&log_lik)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    let mut k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let a = 10.0;
    k = k * nf / (nf + a) + a * 0.5 / (nf + a);
    if k.is_nan() {
        k = f64::INFINITY;
    }
    Ok(GpdFit {
        k,
        sigma,
        degenerate: false,
    })
}

/// Generalized Pareto quantile function.
fn qgpd(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

pub fn tail_length(s: usize) -> usize {
    let sf = s as f64;
    (0.2 * sf).min(3.0 * sf.sqrt()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsisResult {
    /// Normalized: `log_sum_exp(log_weights) = 0`.
    pub log_weights: Vec<f64>,
    pub k: f64,
    /// Tail was constant or too short; raw weights were used.
    pub degenerate: bool,
}

/// Replaces the largest ratios by expected order statistics of a fitted
/// generalized Pareto tail, truncates at the largest raw weight and
/// normalizes.
pub fn psis_smooth(log_ratios: &[f64]) -> PsisResult {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let m = tail_length(s);
    let mut k = f64::INFINITY;
    let mut degenerate = true;
    if m >= 5 && m < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail_ids = &order[s - m..];
        let cutoff = lw[order[s - m - 1]];
        let exp_cutoff = cutoff.exp();
        let exceed: Vec<f64> = tail_ids.iter().map(|&j| lw[j].exp() - exp_cutoff).collect();
        match gpd_fit(&exceed) {
            Ok(fit) if fit.degenerate => {
                k = fit.k;
            }
            Ok(fit) => {
                k = fit.k;
                degenerate = false;
                if fit.k.is_finite() {
                    for (r, &j) in tail_ids.iter().enumerate() {
                        let p = (r as f64 + 0.5) / m as f64;
                        lw[j] = (qgpd(p, fit.k, fit.sigma) + exp_cutoff).ln();
                    }
                }
            }
            Err(_) => {}
        }
    }
    for v in lw.iter_mut() {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    for v in lw.iter_mut() {
        *v -= norm;
    }
    PsisResult {
        log_weights: lw,
        k,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub se_elpd: f64,
    pub p_loo: f64,
    pub lpd: f64,
    pub pointwise_elpd: Vec<f64>,
    pub pointwise_lpd: Vec<f64>,
    pub pareto_k: Vec<f64>,
    /// Rows with `k > 0.7` (or a degenerate tail fit).
    pub flagged: Vec<usize>,
}

fn check_draws(ll: &LogLikMatrix) -> Result<()> {
    if ll.n_draws < MIN_DRAWS {
        return Err(Error::invalid(format!(
            "need at least {MIN_DRAWS} posterior draws, got {}",
            ll.n_draws
        )));
    }
    if ll.n_rows == 0 {
        return Err(Error::invalid("log-likelihood matrix has no rows"));
    }
    Ok(())
}

fn se_of_sum(pointwise: &[f64]) -> f64 {
    (pointwise.len() as f64 * stats::variance(pointwise)).sqrt()
}

pub fn loo(ll: &LogLikMatrix) -> Result<LooResult> {
    check_draws(ll)?;
    let ln_s = (ll.n_draws as f64).ln();
    let per_row: Vec<(f64, f64, f64, bool)> = (0..ll.n_rows)
        .into_par_iter()
        .map(|i| {
            let col = ll.column(i);
            let ratios: Vec<f64> = col.iter().map(|v| -v).collect();
            let psis = psis_smooth(&ratios);
            let terms: Vec<f64> = psis
                .log_weights
                .iter()
                .zip(&col)
                .map(|(w, l)| w + l)
                .collect();
            let elpd = log_sum_exp(&terms);
            let lpd = log_sum_exp(&col) - ln_s;
            let flag = psis.k > K_THRESHOLD || psis.k.is_nan();
            (elpd, lpd, psis.k, flag)
        })
        .collect();
    let pointwise_elpd: Vec<f64> = per_row.iter().map(|r| r.0).collect();
    let pointwise_lpd: Vec<f64> = per_row.iter().map(|r| r.1).collect();
    let pareto_k: Vec<f64> = per_row.iter().map(|r| r.2).collect();
    let flagged = per_row
        .iter()
        .enumerate()
        .filter(|(_, r)| r.3)
        .map(|(i, _)| i)
        .collect();
    let elpd_loo: f64 = pointwise_elpd.iter().sum();
    let lpd: f64 = pointwise_lpd.iter().sum();
    Ok(LooResult {
        elpd_loo,
        se_elpd: se_of_sum(&pointwise_elpd),
        p_loo: lpd - elpd_loo,
        lpd,
        pointwise_elpd,
        pointwise_lpd,
        pareto_k,
        flagged,
    })
}

impl LooResult {
    /// `row,elpd_loo,lpd,pareto_k,flagged`.
    pub fn pointwise_csv(&self) -> String {
        let mut s = String::from("row,elpd_loo,lpd,pareto_k,flagged\n");
        for i in 0..self.pointwise_elpd.len() {
            s.push_str(&format!(
                "{i},{},{},{},{}\n",
                self.pointwise_elpd[i],
                self.pointwise_lpd[i],
                self.pareto_k[i],
                self.flagged.contains(&i)
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaicResult {
    pub elpd_waic: f64,
    pub se: f64,
    pub p_waic: f64,
    pub pointwise: Vec<f64>,
}

pub fn waic(ll: &LogLikMatrix) -> Result<WaicResult> {
    check_draws(ll)?;
    let ln_s = (ll.n_draws as f64).ln();
    let per_row: Vec<(f64, f64)> = (0..ll.n_rows)
        .into_par_iter()
        .map(|i| {
            let col = ll.column(i);
            (log_sum_exp(&col) - ln_s, stats::variance(&col))
        })
        .collect();
    let pointwise: Vec<f64> = per_row.iter().map(|(l, v)| l - v).collect();
    Ok(WaicResult {
        elpd_waic: pointwise.iter().sum(),
        se: se_of_sum(&pointwise),
        p_waic: per_row.iter().map(|r| r.1).sum(),
        pointwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub rank: usize,
    pub elpd_loo: f64,
    pub se_elpd: f64,
    /// Difference to the reference model; `None` for the best row.
    pub elpd_diff: Option<f64>,
    pub se_diff: Option<f64>,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffReference {
    /// Each row against the model ranked immediately above it.
    ImmediatelyBetter,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: DiffReference,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Columns: `model,rank,elpd_diff,se_diff,elpd_loo,se_elpd`; the best row
    /// leaves the difference fields empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,rank,elpd_diff,se_diff,elpd_loo,se_elpd\n");
        for r in &self.rows {
            let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
            s.push_str(&format!(
                "{},{},{},{},{:.3},{:.3}\n",
                r.model,
                r.rank,
                f(r.elpd_diff),
                f(r.se_diff),
                r.elpd_loo,
                r.se_elpd
            ));
        }
        s
    }

    pub fn order(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.model.as_str()).collect()
    }
}

/// Ranks models by `elpd_loo` (ties by name) and reports differences with
/// `SE = √(n · var(pointwise difference))`.
pub fn compare(
    results: &[(String, LooResult)],
    reference: DiffReference,
) -> Result<ComparisonTable> {
    if let Some((_, first)) = results.first() {
        let n = first.pointwise_elpd.len();
        if results.iter().any(|(_, r)| r.pointwise_elpd.len() != n) {
            return Err(Error::invalid("results cover different numbers of rows"));
        }
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[b]
            .1
            .elpd_loo
            .total_cmp(&results[a].1.elpd_loo)
            .then_with(|| results[a].0.cmp(&results[b].0))
    });
    let rows = order
        .iter()
        .enumerate()
        .map(|(pos, &j)| {
            let (name, r) = &results[j];
            let (diff, se) = if pos == 0 {
                (None, None)
            } else {
                let refj = match reference {
                    DiffReference::ImmediatelyBetter => order[pos - 1],
                    DiffReference::Best => order[0],
                };
                let other = &results[refj].1;
                let d: Vec<f64> = r
                    .pointwise_elpd
                    .iter()
                    .zip(&other.pointwise_elpd)
                    .map(|(a, b)| a - b)
                    .collect();
                (Some(r.elpd_loo - other.elpd_loo), Some(se_of_sum(&d)))
            };
            ComparisonRow {
                model: name.clone(),
                rank: pos + 1,
                elpd_loo: r.elpd_loo,
                se_elpd: r.se_elpd,
                elpd_diff: diff,
                se_diff: se,
                n_flagged: r.flagged.len(),
            }
        })
        .collect();
    Ok(ComparisonTable { reference, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_lengths() {
        assert_eq!(tail_length(4000), 190);
        assert_eq!(tail_length(100), 20);
        assert_eq!(tail_length(20), 4);
    }

    #[test]
    fn qgpd_inverts_cdf() {
        for &(k, s) in &[(0.5, 1.0), (0.0, 2.0), (-0.3, 1.5)] {
            for &p in &[0.1, 0.5, 0.9] {
                let x: f64 = qgpd(p, k, s);
                let cdf = if k == 0.0 {
                    1.0 - (-x / s).exp()
                } else {
                    1.0 - (1.0 + k * x / s).powf(-1.0 / k)
                };
                assert!((cdf - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fewer_than_five_is_an_error() {
        assert!(gpd_fit(&[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn constant_tail_is_degenerate() {
        let f = gpd_fit(&[2.0; 10]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.k, f64::NEG_INFINITY);
    }

    #[test]
    fn identical_results_compare_to_zero() {
        let r = LooResult {
            elpd_loo: -10.0,
            se_elpd: 1.0,
            p_loo: 1.0,
            lpd: -9.0,
            pointwise_elpd: vec![-5.0, -5.0],
            pointwise_lpd: vec![-4.5, -4.5],
            pareto_k: vec![0.1, 0.2],
            flagged: vec![],
        };
        let t = compare(
            &[("a".into(), r.clone()), ("b".into(), r)],
            DiffReference::ImmediatelyBetter,
        )
        .unwrap();
        assert_eq!(t.rows[1].elpd_diff, Some(0.0));
        assert_eq!(t.rows[1].se_diff, Some(0.0));
        assert_eq!(t.order(), vec!["a", "b"]);
    }
}
