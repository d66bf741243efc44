use bayesflow::checks::{
    posterior_predictive, ppc_summary, prior_predictive, sbc, two_sided_tail_probability,
    OutcomeScale, PredictiveEnsemble, SbcConfig, SbcFault,
};
use bayesflow::model::{NormalPrior, PriorConfig};
use bayesflow::sampler::fit;
use bayesflow::stats::{self, stream_rng};
use bayesflow::synthetic::{generate, SyntheticConfig};
use bayesflow::{ModelSpec, Observations, SamplerConfig, Variant, Verdict};
use rand::Rng;
use rand_distr::StandardNormal;

fn synthetic_design() -> bayesflow::Dataset {
    generate(&SyntheticConfig::default()).unwrap()
}

#[test]
fn single_simulation_ensemble() {
    let ds = synthetic_design();
    let spec = ModelSpec::for_dataset(Variant::M1, &ds);
    let e = prior_predictive(1, &spec, Observations::from(&ds), 1).unwrap();
    assert_eq!(e.simulations.len(), 1);
    assert_eq!(e.simulations[0].len(), ds.n_rows());
    assert!(e.observed.is_none());
    assert!(prior_predictive(1, &spec, Observations::from(&ds), 0).is_err());
}

#[test]
fn point_mass_toy_prior() {
    let mut spec = ModelSpec::toy_with_fixed_sigma(1.0);
    spec.priors = PriorConfig {
        toy_mu: NormalPrior {
            mean: 170.0,
            sd: 1e-9,
        },
        ..PriorConfig::default()
    };
    let design = vec![0.0; 200];
    let e = prior_predictive(3, &spec, Observations::Heights(&design), 5).unwrap();
    for sim in &e.simulations {
        assert!(
            (stats::mean(sim) - 170.0).abs() < 0.5,
            "{}",
            stats::mean(sim)
        );
    }
    assert_eq!(e.scale, OutcomeScale::Identity);
}

#[test]
fn wide_priors_produce_huge_counts() {
    let ds = synthetic_design();
    let spec = ModelSpec::for_dataset(Variant::M2, &ds);
    let e = prior_predictive(11, &spec, Observations::from(&ds), 100).unwrap();
    let s = e.prior_summary();
    assert!(s.max_of_maxima > 1e5, "{}", s.max_of_maxima);
    assert!(s.pooled_q99.is_finite());
    assert!((0.0..=1.0).contains(&s.fraction_above_1e6));
    assert_eq!(s.n_simulations, 100);
}

#[test]
fn prior_predictive_is_deterministic() {
    let ds = synthetic_design();
    let spec = ModelSpec::for_dataset(Variant::M3, &ds);
    let a = prior_predictive(5, &spec, Observations::from(&ds), 10).unwrap();
    let b = prior_predictive(5, &spec, Observations::from(&ds), 10).unwrap();
    assert_eq!(a, b);
}

#[test]
fn prior_predictive_row_order_invariance_in_distribution() {
    // The per-simulation median of log10(1 + y) has the same distribution
    // whatever the design row order.
    let ds = synthetic_design();
    let spec = ModelSpec::for_dataset(Variant::M1, &ds);
    let mut rows = ds.rows.clone();
    rows.reverse();
    let medians = |rows: &[bayesflow::PreparedRow], seed| {
        let e = prior_predictive(seed, &spec, Observations::Counts(rows), 400).unwrap();
        let m: Vec<f64> = e
            .simulations
            .iter()
            .map(|s| {
                let t: Vec<f64> = s.iter().map(|&v| OutcomeScale::Log10p1.apply(v)).collect();
                stats::quantile(&t, 0.5)
            })
            .collect();
        m
    };
    let a = medians(&ds.rows, 21);
    let b = medians(&rows, 22);
    let (ma, mb) = (stats::quantile(&a, 0.5), stats::quantile(&b, 0.5));
    let spread = stats::sd(&a).max(stats::sd(&b));
    assert!((ma - mb).abs() < 0.4 * spread, "{ma} vs {mb} (sd {spread})");
}

fn ensemble_of(sims: Vec<Vec<f64>>, observed: Vec<f64>) -> PredictiveEnsemble {
    PredictiveEnsemble::new(sims, Some(observed), OutcomeScale::Log10p1).unwrap()
}

#[test]
fn observed_equal_to_one_simulation_passes() {
    let mut rng = stream_rng(31, 0);
    let sims: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            (0..50)
                .map(|_| (3.0 + rng.sample::<f64, _>(StandardNormal)).exp().round())
                .collect()
        })
        .collect();
    let observed = sims[42].clone();
    let report = ppc_summary(&ensemble_of(sims, observed)).unwrap();
    assert!(
        report.checks.iter().all(|c| c.tail_probability > 0.05),
        "{report:?}"
    );
    assert_eq!(report.verdict, Verdict::Pass);
}

#[test]
fn observed_mean_far_above_simulations_fails() {
    let sims: Vec<Vec<f64>> = (0..100).map(|j| vec![1.0 + j as f64 % 3.0; 20]).collect();
    let report = ppc_summary(&ensemble_of(sims, vec![1e6; 20])).unwrap();
    let mean = report
        .checks
        .iter()
        .find(|c| c.statistic == "mean")
        .unwrap();
    assert_eq!(mean.tail_probability, 0.0);
    assert_eq!(report.verdict, Verdict::Fail);
}

#[test]
fn ppc_needs_observed_outcomes() {
    let e = PredictiveEnsemble::new(vec![vec![1.0, 2.0]], None, OutcomeScale::Log10p1).unwrap();
    assert!(ppc_summary(&e).is_err());
    assert!(
        PredictiveEnsemble::new(vec![vec![1.0], vec![1.0, 2.0]], None, OutcomeScale::Log10p1)
            .is_err()
    );
}

#[test]
fn density_curves_cover_every_simulation() {
    let sims: Vec<Vec<f64>> = (0..7)
        .map(|j| (0..30).map(|i| (i * j) as f64).collect())
        .collect();
    let report = ppc_summary(&ensemble_of(sims, (0..30).map(f64::from).collect())).unwrap();
    let curves = report.curves.unwrap();
    assert_eq!(curves.simulated.len(), 7);
    assert_eq!(curves.grid.len(), 128);
    assert_eq!(curves.observed.len(), 128);
    assert!(curves.simulated.iter().flatten().all(|d| *d >= 0.0));
}

#[test]
fn self_consistent_fits_are_adequate() {
    // Toy data simulated from the model itself: posterior predictive checks
    // pass in at least 19 of 20 replicates.
    let spec = ModelSpec::toy();
    let config = SamplerConfig {
        n_chains: 2,
        n_warmup: 300,
        n_draws: 300,
        ..SamplerConfig::default()
    };
    let mut passes = 0;
    for r in 0..20u64 {
        let mut rng = stream_rng(500 + r, 0);
        let heights: Vec<f64> = (0..40)
            .map(|_| 165.0 + 8.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let draws = fit(
            &SamplerConfig {
                seed: r,
                ..config.clone()
            },
            &spec,
            Observations::Heights(&heights),
        )
        .unwrap();
        let e = posterior_predictive(r, &draws, Observations::Heights(&heights), 100).unwrap();
        assert_eq!(e.observed.as_deref(), Some(&heights[..]));
        if ppc_summary(&e).unwrap().passed() {
            passes += 1;
        }
    }
    assert!(passes >= 19, "{passes}/20");
}

#[test]
fn posterior_predictive_bounds_n_sims() {
    let heights = [170.0, 171.0, 169.0, 175.0];
    let config = SamplerConfig {
        n_chains: 1,
        n_warmup: 50,
        n_draws: 20,
        ..SamplerConfig::default()
    };
    let draws = fit(&config, &ModelSpec::toy(), Observations::Heights(&heights)).unwrap();
    assert!(posterior_predictive(1, &draws, Observations::Heights(&heights), 21).is_err());
    assert_eq!(
        posterior_predictive(1, &draws, Observations::Heights(&heights), 20)
            .unwrap()
            .simulations
            .len(),
        20
    );
}

#[test]
fn tail_probabilities_in_unit_interval() {
    let sims: Vec<f64> = (0..10).map(f64::from).collect();
    for obs in [-1.0, 0.0, 4.5, 9.0, 12.0] {
        let p = two_sided_tail_probability(&sims, obs);
        assert!((0.0..=1.0).contains(&p));
    }
}

fn toy_sbc_config(fault: Option<SbcFault>) -> SbcConfig {
    SbcConfig {
        iterations: 200,
        seed: 2024,
        fault,
        ..SbcConfig::default()
    }
}

#[test]
fn toy_sbc_is_calibrated() {
    let design = vec![0.0; 20];
    let r = sbc(
        &toy_sbc_config(None),
        &ModelSpec::toy(),
        Observations::Heights(&design),
    )
    .unwrap();
    assert_eq!(r.n_failed, 0);
    let m = r.posterior_draws as f64;
    let n = 200.0;
    for p in &r.parameters {
        assert!(p.p_value > 0.01, "{}: p = {}", p.name, p.p_value);
        assert!(p.ranks.iter().all(|&k| k <= r.posterior_draws));
        assert_eq!(p.bins.iter().sum::<usize>(), 200);
        assert!((p.expected_bins.iter().sum::<f64>() - n).abs() < 1e-9);
        let tol = 3.0 * (m * m / 12.0 / n).sqrt();
        assert!(
            (p.mean_rank - m / 2.0).abs() < tol,
            "{}: mean rank {}",
            p.name,
            p.mean_rank
        );
    }
    assert_eq!(r.parameters.len(), 2);
}

#[test]
fn toy_sbc_detects_fault() {
    let design = vec![0.0; 20];
    let r = sbc(
        &toy_sbc_config(Some(SbcFault::DoubleMean)),
        &ModelSpec::toy(),
        Observations::Heights(&design),
    )
    .unwrap();
    assert!(r.min_p_value() < 0.01, "{}", r.min_p_value());
}

#[test]
fn sbc_csv_shapes() {
    let design = vec![0.0; 10];
    let config = SbcConfig {
        iterations: 8,
        posterior_draws: 19,
        thinning: 2,
        seed: 3,
        ..SbcConfig::default()
    };
    let r = sbc(&config, &ModelSpec::toy(), Observations::Heights(&design)).unwrap();
    assert_eq!(r.ranks_csv().lines().count(), 1 + 2 * 8);
    assert_eq!(r.bins_csv().lines().count(), 1 + 2 * 20);
    let again = sbc(&config, &ModelSpec::toy(), Observations::Heights(&design)).unwrap();
    assert_eq!(r, again);
}
