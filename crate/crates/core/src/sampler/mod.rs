//! Posterior fitting with the No-U-Turn sampler and convergence diagnostics.
//!
//! Chains run independently (in parallel through rayon). Chain `c` draws its
//! randomness from stream `c` of a ChaCha generator seeded with the
//! configured seed, so output does not depend on the worker count.

pub mod diagnostics;
pub(crate) mod nuts;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, Observations, Params};
use crate::stats::stream_rng;

pub use diagnostics::{diagnose, ess, split_rhat, Diagnostics, EssEstimate, Verdict};
pub use nuts::MAX_DELTA_H;

/// Log density with gradient, the only thing the sampler needs to know about
/// a target. Implementations must be pure.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(q)` and writes its gradient into `grad`.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// A model posterior bound to its data.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub spec: &'a ModelSpec,
    pub obs: Observations<'a>,
}

impl<'a> Posterior<'a> {
    pub fn new(spec: &'a ModelSpec, obs: Observations<'a>) -> Result<Self> {
        spec.validate()?;
        // Validates index ranges once up front.
        model::log_likelihood_pointwise(
            spec,
            &model::constrain_unchecked(spec, &vec![0.0; spec.dim()]),
            obs,
        )?;
        Ok(Posterior { spec, obs })
    }
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        model::log_posterior_grad_into(self.spec, q, self.obs, grad)
    }
}

/// Adapter for closures `(q, grad) -> log p`.
pub struct FnDensity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(q, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Initial points are uniform on `[-r, r]` per coordinate.
    pub init_radius: f64,
    /// Fixed step size with adaptation switched off (testing aid).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_step_size: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
            init_radius: 2.0,
            fixed_step_size: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::invalid(
                "chain, draw and tree-depth counts must be positive",
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0, 1)"));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return Err(Error::invalid("init_radius must be nonnegative"));
        }
        if let Some(e) = self.fixed_step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid("fixed step size must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub divergent: bool,
    pub energy: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub accept_stat: f64,
    pub lp: f64,
}

/// Post-warmup draws in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    pub n_chains: usize,
    pub n_draws: usize,
    pub dim: usize,
    /// Flattened `[chain][iteration][coordinate]`.
    pub samples: Vec<f64>,
    /// Flattened `[chain][iteration]`.
    pub stats: Vec<IterationStats>,
    pub step_sizes: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
    pub coordinate_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    /// Wall-clock seconds; not serialized so archives stay reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl Draws {
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let start = (chain * self.n_draws + iter) * self.dim;
        &self.samples[start..start + self.dim]
    }

    pub fn stat(&self, chain: usize, iter: usize) -> &IterationStats {
        &self.stats[chain * self.n_draws + iter]
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_draws
    }

    /// Draw by flat index `chain * n_draws + iter`.
    pub fn flat_draw(&self, s: usize) -> &[f64] {
        &self.samples[s * self.dim..(s + 1) * self.dim]
    }

    /// Per-chain series of one coordinate.
    pub fn chains(&self, coordinate: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| {
                (0..self.n_draws)
                    .map(|i| self.draw(c, i)[coordinate])
                    .collect()
            })
            .collect()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    /// Builds draws from per-chain series of each coordinate; used for
    /// synthetic inputs to the diagnostics.
    pub fn from_chains(chains: &[Vec<Vec<f64>>]) -> Self {
        let n_chains = chains.len();
        let n_draws = chains.first().map_or(0, |c| c.len());
        let dim = chains
            .first()
            .and_then(|c| c.first())
            .map_or(0, |d| d.len());
        let mut samples = Vec::with_capacity(n_chains * n_draws * dim);
        for chain in chains {
            for d in chain {
                samples.extend_from_slice(d);
            }
        }
        let stats = vec![
            IterationStats {
                divergent: false,
                energy: 0.0,
                tree_depth: 0,
                n_leapfrog: 0,
                accept_stat: 1.0,
                lp: 0.0,
            };
            n_chains * n_draws
        ];
        Draws {
            n_chains,
            n_draws,
            dim,
            samples,
            stats,
            step_sizes: vec![0.0; n_chains],
            inv_metric: vec![vec![1.0; dim]; n_chains],
            coordinate_names: (0..dim).map(|j| format!("q[{j}]")).collect(),
            spec: None,
            elapsed_seconds: 0.0,
        }
    }

    /// Constrained parameters of every draw, chain-major.
    pub fn params(&self) -> Result<Vec<Params>> {
        let spec = self.require_spec()?;
        (0..self.total_draws())
            .map(|s| model::constrain(spec, self.flat_draw(s)))
            .collect()
    }

    pub fn require_spec(&self) -> Result<&ModelSpec> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::ModelMismatch("draws carry no model spec".into()))
    }

    /// Columnar CSV: `chain,iteration,<stats>,<coordinates>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "chain,iteration,lp,accept_stat,step_size,tree_depth,n_leapfrog,divergent,energy",
        );
        for name in &self.coordinate_names {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for c in 0..self.n_chains {
            for i in 0..self.n_draws {
                let st = self.stat(c, i);
                s.push_str(&format!(
                    "{c},{i},{},{},{},{},{},{},{}",
                    st.lp,
                    st.accept_stat,
                    self.step_sizes[c],
                    st.tree_depth,
                    st.n_leapfrog,
                    st.divergent as u8,
                    st.energy
                ));
                for v in self.draw(c, i) {
                    s.push(',');
                    s.push_str(&v.to_string());
                }
                s.push('\n');
            }
        }
        s
    }
}

struct ChainOutput {
    samples: Vec<f64>,
    stats: Vec<IterationStats>,
    step_size: f64,
    inv_metric: Vec<f64>,
}

/// Runs `config.n_chains` NUTS chains on `target`.
pub fn nuts_sample<T: LogDensity + ?Sized>(config: &SamplerConfig, target: &T) -> Result<Draws> {
    config.validate()?;
    let dim = target.dim();
    if dim == 0 {
        return Err(Error::invalid("target dimension must be at least 1"));
    }
    let started = Instant::now();
    let outputs: Vec<Result<ChainOutput>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(config, target, c as u64))
        .collect();
    let mut samples = Vec::with_capacity(config.n_chains * config.n_draws * dim);
    let mut stats = Vec::with_capacity(config.n_chains * config.n_draws);
    let mut step_sizes = Vec::new();
    let mut inv_metric = Vec::new();
    for out in outputs {
        let out = out?;
        samples.extend(out.samples);
        stats.extend(out.stats);
        step_sizes.push(out.step_size);
        inv_metric.push(out.inv_metric);
    }
    Ok(Draws {
        n_chains: config.n_chains,
        n_draws: config.n_draws,
        dim,
        samples,
        stats,
        step_sizes,
        inv_metric,
        coordinate_names: (0..dim).map(|j| format!("q[{j}]")).collect(),
        spec: None,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Fits `spec` to `obs` and attaches the spec and coordinate names.
pub fn fit(config: &SamplerConfig, spec: &ModelSpec, obs: Observations<'_>) -> Result<Draws> {
    let posterior = Posterior::new(spec, obs)?;
    let mut draws = nuts_sample(config, &posterior)?;
    draws.coordinate_names = spec.coordinate_names();
    draws.spec = Some(spec.clone());
    Ok(draws)
}

fn initial_point<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    config: &SamplerConfig,
    target: &T,
    rng: &mut R,
) -> Result<nuts::PhasePoint> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim)
            .map(|_| {
                if config.init_radius > 0.0 {
                    rng.random_range(-config.init_radius..=config.init_radius)
                } else {
                    0.0
                }
            })
            .collect();
        let lp = nuts::evaluate(target, &q, &mut grad);
        if lp.is_finite() {
            return Ok(nuts::PhasePoint {
                q,
                p: vec![0.0; dim],
                grad: grad.clone(),
                lp,
            });
        }
    }
    Err(Error::Sampler(
        "log density not finite at any of 100 initial points".into(),
    ))
}

fn run_chain<T: LogDensity + ?Sized>(
    config: &SamplerConfig,
    target: &T,
    chain: u64,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = stream_rng(config.seed, chain);
    let mut z = initial_point(config, target, &mut rng)?;
    let mut inv_metric = vec![1.0; dim];

    let adapt = config.fixed_step_size.is_none();
    let mut eps = match config.fixed_step_size {
        Some(e) => e,
        None => nuts::find_reasonable_step_size(target, &z, 1.0, &inv_metric, &mut rng),
    };
    let mut dual = nuts::DualAveraging::new(eps, config.target_accept);
    let mut schedule = nuts::WindowSchedule::new(config.n_warmup);
    let mut estimator = nuts::VarianceEstimator::new(dim);

    for i in 0..config.n_warmup {
        let (next, st) = nuts::transition(
            target,
            &z,
            eps,
            &inv_metric,
            config.max_tree_depth,
            &mut rng,
        );
        z = next;
        if !adapt {
            continue;
        }
        eps = dual.update(st.accept_stat);
        if schedule.in_slow_window(i) {
            estimator.add(&z.q);
        }
        if schedule.window_closes(i) {
            inv_metric = estimator.estimate();
            estimator.reset();
            eps = nuts::find_reasonable_step_size(target, &z, eps, &inv_metric, &mut rng);
            dual.restart(eps);
        }
    }
    if adapt && config.n_warmup > 0 {
        eps = dual.final_step_size();
    }

    let mut samples = Vec::with_capacity(config.n_draws * dim);
    let mut stats = Vec::with_capacity(config.n_draws);
    for _ in 0..config.n_draws {
        let (next, st) = nuts::transition(
            target,
            &z,
            eps,
            &inv_metric,
            config.max_tree_depth,
            &mut rng,
        );
        z = next;
        samples.extend_from_slice(&z.q);
        stats.push(IterationStats {
            divergent: st.divergent,
            energy: st.energy,
            tree_depth: st.depth,
            n_leapfrog: st.n_leapfrog,
            accept_stat: st.accept_stat,
            lp: z.lp,
        });
    }
    Ok(ChainOutput {
        samples,
        stats,
        step_size: eps,
        inv_metric,
    })
}

/// Per-step Hamiltonian error of a fixed-step leapfrog trajectory; exposed
/// for integrator checks.
pub fn leapfrog_energy_errors<T: LogDensity + ?Sized>(
    target: &T,
    q0: &[f64],
    p0: &[f64],
    eps: f64,
    n_steps: usize,
) -> Vec<f64> {
    let dim = target.dim();
    let inv_metric = vec![1.0; dim];
    let mut grad = vec![0.0; dim];
    let lp = nuts::evaluate(target, q0, &mut grad);
    let mut z = nuts::PhasePoint {
        q: q0.to_vec(),
        p: p0.to_vec(),
        grad,
        lp,
    };
    let mut h_prev = z.hamiltonian(&inv_metric);
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        nuts::leapfrog(target, &mut z, eps, &inv_metric);
        let h = z.hamiltonian(&inv_metric);
        out.push((h - h_prev).abs());
        h_prev = h;
    }
    out
}
