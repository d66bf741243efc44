use bayesflow::analyze::{
    conditional_effect, credible_interval, fitted_from_params, pairwise_effect, params_at,
    posterior_vs_prior_sd, rank_languages, simulate_projects, simulate_scenario, EffectMode,
    FittedModel, LanguagePrediction, PairwiseOptions, ProjectMode, Scenario,
};
use bayesflow::stats::{self, stream_rng};
use bayesflow::{ModelSpec, Params, PreparedRow, Variant};
use rand::Rng;
use rand_distr::StandardNormal;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|l| format!("lang{l}")).collect()
}

/// `n_draws` copies of `base` after `edit(draw_index, params)`.
fn synthetic_fit(
    variant: Variant,
    n_languages: usize,
    n_projects: usize,
    n_draws: usize,
    edit: impl Fn(usize, &mut Params),
) -> FittedModel {
    let spec = ModelSpec::new(variant, n_languages, n_projects);
    let base = params_at(&spec, &vec![0.0; spec.dim()]).unwrap();
    let params = (0..n_draws)
        .map(|s| {
            let mut p = base.clone();
            edit(s, &mut p);
            p
        })
        .collect();
    fitted_from_params(spec, params, names(n_languages))
}

fn unit_scenario() -> Scenario {
    Scenario::new(1.0, 1.0, 1.0, 1.0, "unit")
}

#[test]
fn poisson_limit_mean() {
    let fitted = synthetic_fit(Variant::M2, 3, 1, 20_000, |_, p| {
        p.alpha = 5f64.ln();
        p.alpha_language = vec![0.0; 3];
        p.phi = 1e9;
    });
    let pred = simulate_scenario(1, &fitted, &unit_scenario()).unwrap();
    assert_eq!(pred.samples.len(), 3);
    for s in &pred.samples {
        let m = stats::mean(s);
        assert!((m / 5.0 - 1.0).abs() < 0.02, "{m}");
        assert!(s.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }
}

#[test]
fn scenario_determinism_and_validation() {
    let fitted = synthetic_fit(Variant::M3, 3, 4, 200, |s, p| {
        p.alpha = 1.0 + 0.01 * s as f64;
        p.sigma_gamma = 0.5;
    });
    let a = simulate_scenario(9, &fitted, &unit_scenario()).unwrap();
    let b = simulate_scenario(9, &fitted, &unit_scenario()).unwrap();
    assert_eq!(a, b);
    assert!(a.note.contains("sigma_gamma"));
    let bad = Scenario::new(10.0, 10.0, 10.0, -3.0, "bad");
    assert!(simulate_scenario(9, &fitted, &bad).is_err());
    let m1 = synthetic_fit(Variant::M1, 3, 1, 10, |_, _| {});
    assert!(simulate_scenario(9, &m1, &unit_scenario()).is_err());
}

#[test]
fn intercept_shift_dominates() {
    let fitted = synthetic_fit(Variant::M2, 3, 1, 4000, |_, p| {
        p.alpha = 2.0;
        p.alpha_language = vec![0.0, 0.3, 0.0];
        p.phi = 5.0;
    });
    let pred = simulate_scenario(4, &fitted, &unit_scenario()).unwrap();
    let means: Vec<f64> = pred.samples.iter().map(|s| stats::mean(s)).collect();
    assert!(means[1] > means[0] && means[1] > means[2], "{means:?}");
    let table = rank_languages(&pred).unwrap();
    assert_eq!(table.rows[0].language, "lang1");
    assert_eq!(table.position("lang1"), Some(0));
}

fn prediction(samples: Vec<Vec<f64>>) -> LanguagePrediction {
    let n = samples.len();
    LanguagePrediction {
        scenario: unit_scenario(),
        languages: (0..n).collect(),
        language_names: names(n),
        samples,
        note: String::new(),
    }
}

#[test]
fn ranking_ties_follow_label_order() {
    let v = vec![1.0, 2.0, 3.0, 4.0];
    let table = rank_languages(&prediction(vec![v.clone(), vec![9.0; 4], v])).unwrap();
    let order: Vec<&str> = table.rows.iter().map(|r| r.language.as_str()).collect();
    assert_eq!(order, vec!["lang1", "lang0", "lang2"]);
    assert!(table.tie_broken_by_label);
    assert_eq!(
        table.rows.iter().map(|r| r.rank).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    assert!(rank_languages(&prediction(vec![vec![1.0]])).is_err());
}

#[test]
fn ranking_invariant_under_increasing_transform() {
    // Continuous samples, so medians are distinct and the mean tie-break
    // (which is not transform invariant) never fires.
    let mut rng = stream_rng(12, 0);
    let samples: Vec<Vec<f64>> = (0..5)
        .map(|l| {
            (0..100)
                .map(|_| (l as f64 * 0.2 + rng.sample::<f64, _>(StandardNormal)).exp())
                .collect()
        })
        .collect();
    let transformed: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().map(|&v| (v + 1.0).ln() * 3.0 + 7.0).collect())
        .collect();
    let a = rank_languages(&prediction(samples)).unwrap();
    let b = rank_languages(&prediction(transformed)).unwrap();
    let order = |t: &bayesflow::analyze::RankingTable| {
        t.rows
            .iter()
            .map(|r| r.language.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(order(&a), order(&b));
}

fn data_rows() -> Vec<PreparedRow> {
    (0..6)
        .map(|i| PreparedRow {
            project_index: i % 4,
            language_index: i % 3,
            x: [1.0 + 0.3 * i as f64, 2.0, 0.5, 0.1 * i as f64],
            bugs: 3,
        })
        .collect()
}

fn varied_m3() -> FittedModel {
    synthetic_fit(Variant::M3, 3, 4, 300, |s, p| {
        let t = s as f64 / 300.0;
        p.alpha = 0.5 + t;
        p.beta = [0.4, 0.1, -0.1, 0.2];
        p.alpha_language = vec![-0.3 + t, 0.2, 0.1 - t];
        p.beta_language = vec![[0.05, 0.0, 0.0, 0.01]; 3];
        p.alpha_project = vec![0.1, -0.2, 0.4, 0.0];
        p.sigma_gamma = 0.7;
        p.phi = 3.0;
    })
}

#[test]
fn pairwise_same_language_is_zero() {
    let fitted = varied_m3();
    let d = pairwise_effect(3, &fitted, &data_rows(), 1, 1, PairwiseOptions::default()).unwrap();
    assert!(d.samples.iter().all(|&v| v == 0.0));
    assert_eq!(d.prob_positive, 0.0);
    assert_eq!(d.samples.len(), 6 * 300);
    assert!(pairwise_effect(3, &fitted, &data_rows(), 0, 7, PairwiseOptions::default()).is_err());
}

#[test]
fn pairwise_antisymmetry() {
    let fitted = varied_m3();
    for mode in [EffectMode::Expected, EffectMode::Sampled] {
        for project in [ProjectMode::Redraw, ProjectMode::Reuse] {
            let opts = PairwiseOptions {
                mode,
                project,
                max_draws: Some(120),
            };
            let ab = pairwise_effect(5, &fitted, &data_rows(), 0, 2, opts).unwrap();
            let ba = pairwise_effect(5, &fitted, &data_rows(), 2, 0, opts).unwrap();
            assert_eq!(ab.samples.len(), 6 * 120);
            for (x, y) in ab.samples.iter().zip(&ba.samples) {
                assert!(
                    (x + y).abs() <= 1e-12 * x.abs().max(1.0),
                    "{mode:?} {project:?}"
                );
            }
            assert_eq!(ab.prob_positive, ba.prob_negative);
            let frac =
                ab.samples.iter().filter(|&&v| v > 0.0).count() as f64 / ab.samples.len() as f64;
            assert_eq!(ab.prob_positive, frac);
        }
    }
}

#[test]
fn zero_slopes_give_flat_curve() {
    let fitted = synthetic_fit(Variant::M2, 2, 1, 50, |s, p| {
        p.alpha = 1.0 + 0.01 * s as f64;
        p.beta = [0.0; 4];
    });
    let grid = [1.0, 10.0, 100.0, 1000.0];
    let c = conditional_effect(
        &fitted,
        1,
        &grid,
        &Scenario::new(50.0, 500.0, 100.0, 3.0, "a"),
    )
    .unwrap();
    let first = c.points[0].mean;
    let level: f64 = (0..50).map(|s| (1.0 + 0.01 * s as f64).exp()).sum::<f64>() / 50.0;
    assert!((first - level).abs() < 1e-12);
    assert!(c.points.iter().all(|p| (p.mean - first).abs() < 1e-12));
    assert_eq!(c.predictor, "insertions");
    assert!(conditional_effect(&fitted, 1, &[], &unit_scenario()).is_err());
}

#[test]
fn positive_slope_curve_is_increasing_and_analytic() {
    let fitted = synthetic_fit(Variant::M3, 2, 3, 40, |_, p| {
        p.alpha = -0.5;
        p.beta = [0.0, 0.3, 0.0, 0.0];
        p.alpha_language = vec![2.0, -2.0];
    });
    let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 50.0).collect();
    let c = conditional_effect(&fitted, 1, &grid, &unit_scenario()).unwrap();
    for w in c.points.windows(2) {
        assert!(w[1].mean > w[0].mean);
    }
    // Group effects are left out of the population-level curve.
    for p in &c.points {
        let expected = (-0.5 + 0.3 * p.value.ln()).exp();
        assert!((p.mean - expected).abs() < 1e-12 * expected);
        assert!((p.low - expected).abs() < 1e-12 * expected);
    }
    let mut anchored = unit_scenario();
    anchored.language = Some(0);
    let c = conditional_effect(&fitted, 1, &grid[..1], &anchored).unwrap();
    let expected = (1.5 + 0.3 * 50f64.ln()).exp();
    assert!((c.points[0].mean - expected).abs() < 1e-9 * expected);
}

#[test]
fn constant_samples_give_zero_width_interval() {
    let fitted = synthetic_fit(Variant::M2, 2, 1, 30, |_, p| p.beta[1] = 0.25);
    let i = credible_interval(&fitted, "beta[1]", 0.95).unwrap();
    assert_eq!((i.low, i.median, i.high), (0.25, 0.25, 0.25));
    assert!(credible_interval(&fitted, "nonsense", 0.95).is_err());
    assert!(credible_interval(&fitted, "beta[1]", 1.0).is_err());
}

#[test]
fn projects_without_heterogeneity_match() {
    let fitted = synthetic_fit(Variant::M3, 1, 2, 4000, |_, p| {
        p.alpha = 2.0;
        p.sigma_gamma = 0.0;
        p.phi = 4.0;
    });
    let rows: Vec<PreparedRow> = (0..2)
        .map(|i| PreparedRow {
            project_index: i,
            language_index: 0,
            x: [0.0; 4],
            bugs: 0,
        })
        .collect();
    let projects = simulate_projects(2, &fitted, &rows, 6).unwrap();
    assert_eq!(projects.len(), 6);
    let means: Vec<f64> = projects.iter().map(|p| stats::mean(&p.samples)).collect();
    let lambda = 2f64.exp();
    // NB(λ, φ) mean has sd √((λ + λ²/φ) / 4000) ≈ 0.07.
    for m in &means {
        assert!((m - lambda).abs() < 0.3, "{means:?}");
    }
    assert_eq!(projects, simulate_projects(2, &fitted, &rows, 6).unwrap());
    assert!(simulate_projects(2, &fitted, &rows, 0).is_err());
    let m2 = synthetic_fit(Variant::M2, 1, 1, 10, |_, _| {});
    assert!(simulate_projects(2, &m2, &rows, 3).is_err());
}

#[test]
fn projects_differ_through_borrowed_rows() {
    let fitted = synthetic_fit(Variant::M3, 1, 3, 2000, |_, p| {
        p.alpha = 0.5;
        p.beta = [1.0, 0.0, 0.0, 0.0];
        p.sigma_gamma = 0.3;
        p.phi = 20.0;
    });
    let rows: Vec<PreparedRow> = (0..3)
        .map(|i| PreparedRow {
            project_index: i,
            language_index: 0,
            x: [1.5 * i as f64, 0.0, 0.0, 0.0],
            bugs: 0,
        })
        .collect();
    let projects = simulate_projects(8, &fitted, &rows, 10).unwrap();
    let medians: Vec<f64> = projects
        .iter()
        .map(|p| stats::quantile(&p.samples, 0.5))
        .collect();
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().copied().fold(0.0, f64::max);
    assert!(hi / lo.max(1.0) > 2.0, "{medians:?}");
    assert!(projects
        .iter()
        .all(|p| p.source_row < 3 && p.language == "lang0"));
}

#[test]
fn sd_overlay_prior_normalized() {
    let fitted = synthetic_fit(Variant::M3, 2, 3, 500, |s, p| {
        p.sigma_gamma = 0.8 + 0.1 * ((s % 10) as f64 / 10.0);
    });
    let o = posterior_vs_prior_sd(&fitted).unwrap();
    let area: f64 = o
        .grid
        .windows(2)
        .zip(o.prior.windows(2))
        .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
        .sum();
    assert!((area - 1.0).abs() < 1e-6, "{area}");
    assert!(o.grid[0] > 0.0);
    assert!(o.posterior.iter().all(|&d| d >= 0.0));
    assert!(o.posterior_sd < o.prior_sd / 10.0);
    let m2 = synthetic_fit(Variant::M2, 2, 1, 10, |_, _| {});
    assert!(posterior_vs_prior_sd(&m2).is_err());
}
