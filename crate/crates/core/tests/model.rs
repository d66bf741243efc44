use bayesflow::model::{
    self, constrain, log_likelihood_pointwise, log_posterior_and_grad, log_prior, nb_logpmf,
    sample_prior, simulate_outcomes, unconstrain, ModelSpec, Observations, Variant,
};
use bayesflow::stats::{self, stream_rng};
use bayesflow::PreparedRow;
use rand::Rng;

fn synthetic_rows(n: usize, n_lang: usize, n_proj: usize, seed: u64) -> Vec<PreparedRow> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|i| PreparedRow {
            project_index: i % n_proj,
            language_index: i % n_lang,
            x: [
                rng.random_range(0.0..6.0),
                rng.random_range(2.0..10.0),
                rng.random_range(3.0..8.0),
                rng.random_range(0.0..3.0),
            ],
            bugs: rng.random_range(0..200),
        })
        .collect()
}

fn spec(variant: Variant) -> ModelSpec {
    ModelSpec::new(variant, 3, 4)
}

#[test]
fn dimensions() {
    assert_eq!(ModelSpec::toy().dim(), 2);
    assert_eq!(ModelSpec::toy_with_fixed_sigma(1.0).dim(), 1);
    assert_eq!(ModelSpec::new(Variant::M1, 17, 1).dim(), 20);
    assert_eq!(ModelSpec::new(Variant::M2, 17, 1).dim(), 24);
    // 1 + 4 + 5L + P + 5 + 1 + 10 + 1 at L = 2, P = 3.
    assert_eq!(ModelSpec::new(Variant::M3, 2, 3).dim(), 35);
    for v in [Variant::Toy, Variant::M1, Variant::M2, Variant::M3] {
        let s = spec(v);
        assert_eq!(s.coordinate_names().len(), s.dim());
    }
}

#[test]
fn constrain_examples() {
    let p = constrain(&ModelSpec::toy(), &[170.0, 0.0]).unwrap();
    assert_eq!(p.mu, 170.0);
    assert_eq!(p.sigma, 1.0);

    let s = ModelSpec::new(Variant::M3, 2, 3);
    let p = constrain(&s, &vec![0.0; s.dim()]).unwrap();
    for i in 0..5 {
        for k in 0..5 {
            assert_eq!(p.corr_chol[i * 5 + k], if i == k { 1.0 } else { 0.0 });
        }
    }

    // M1 layout: α, z_language[L], ln σ_α, ln φ.
    let s = ModelSpec::new(Variant::M1, 3, 1);
    let mut u = vec![0.0; s.dim()];
    u[1] = 0.5;
    u[4] = 2f64.ln();
    let p = constrain(&s, &u).unwrap();
    assert!((p.alpha_language[0] - 1.0).abs() < 1e-15);
}

#[test]
fn constrain_rejects_wrong_length() {
    assert!(constrain(&spec(Variant::M2), &[0.0; 3]).is_err());
}

#[test]
fn round_trip_all_variants() {
    let mut rng = stream_rng(11, 0);
    for v in [Variant::Toy, Variant::M1, Variant::M2, Variant::M3] {
        let s = spec(v);
        for _ in 0..20 {
            let u: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = constrain(&s, &u).unwrap();
            let back = unconstrain(&s, &p).unwrap();
            let again = constrain(&s, &back).unwrap();
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10, "{v}: {a} vs {b}");
            }
            assert!((p.phi - again.phi).abs() <= 1e-10 * p.phi);
        }
    }
}

#[test]
fn log_prior_examples() {
    let lp = log_prior(&ModelSpec::toy_with_fixed_sigma(1.0), &[170.0]).unwrap();
    let expected = -(50.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
    assert!((lp - expected).abs() < 1e-12);
    assert!((expected + 4.83097).abs() < 1e-5);

    // Weibull(2,1) at σ_α = 1 is ln 2 − 1; the log-transform Jacobian is ln 1 = 0.
    let s = ModelSpec::new(Variant::M1, 1, 1);
    let base = log_prior(&s, &[0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut u = [0.0, 0.0, 0.0, 0.0];
    u[2] = 0.3;
    let shifted = log_prior(&s, &u).unwrap();
    let weibull = |sig: f64| 2f64.ln() + sig.ln() - sig * sig + sig.ln();
    assert!(((shifted - base) - (weibull(0.3f64.exp()) - weibull(1.0))).abs() < 1e-12);
    assert!((weibull(1.0) - (2f64.ln() - 1.0)).abs() < 1e-15);

    // A raw language effect moving from 0 to 1 costs exactly 1/2.
    let mut u = [0.0; 4];
    u[1] = 1.0;
    let moved = log_prior(&s, &u).unwrap();
    assert!((moved - base + 0.5).abs() < 1e-12);
}

#[test]
fn nb_examples_and_normalization() {
    let v = nb_logpmf(3, 2.0, 1.0).unwrap();
    assert!((v - ((1.0 / 3.0) * (2.0f64 / 3.0).powi(3)).ln()).abs() < 1e-12);
    assert!((nb_logpmf(0, 2.0, 1.0).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    for lambda in [0.5, 5.0, 50.0] {
        for phi in [0.5, 1.0, 5.0] {
            let total: f64 = (0..=10_000u64)
                .map(|y| nb_logpmf(y, lambda, phi).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "λ={lambda} φ={phi}: {total}");
        }
    }
    assert!(nb_logpmf(1, 0.0, 1.0).is_err());
    assert!(nb_logpmf(1, 1.0, -1.0).is_err());
}

#[test]
fn linear_predictor_examples() {
    let s = ModelSpec::new(Variant::M1, 2, 1);
    let mut p = constrain(&s, &vec![0.0; s.dim()]).unwrap();
    p.alpha = 1.0;
    p.alpha_language = vec![0.0, 0.5];
    let row = PreparedRow {
        project_index: 0,
        language_index: 1,
        x: [3.0, 1.0, 1.0, 1.0],
        bugs: 0,
    };
    assert_eq!(model::linear_predictor(&s, &p, &row).unwrap(), 1.5);

    let s = ModelSpec::new(Variant::M2, 2, 1);
    let mut p = constrain(&s, &vec![0.0; s.dim()]).unwrap();
    p.alpha_language = vec![0.0, 0.0];
    p.beta = [0.1, 0.0, 0.0, 0.0];
    let row = PreparedRow {
        x: [2.0, 7.0, 7.0, 7.0],
        ..row
    };
    assert!((model::linear_predictor(&s, &p, &row).unwrap() - 0.2).abs() < 1e-15);

    let bad = PreparedRow {
        language_index: 5,
        ..row
    };
    assert!(model::linear_predictor(&s, &p, &bad).is_err());
}

#[test]
fn pointwise_examples() {
    let s = ModelSpec::new(Variant::M1, 1, 1);
    let mut p = constrain(&s, &vec![0.0; s.dim()]).unwrap();
    p.alpha = 2f64.ln();
    p.alpha_language = vec![0.0];
    p.phi = 1.0;
    let rows = [PreparedRow {
        project_index: 0,
        language_index: 0,
        x: [0.0; 4],
        bugs: 3,
    }];
    let ll = log_likelihood_pointwise(&s, &p, Observations::Counts(&rows)).unwrap();
    assert_eq!(ll.len(), 1);
    assert!((ll[0] - (8.0f64 / 81.0).ln()).abs() < 1e-12);

    let s = ModelSpec::toy();
    let p = constrain(&s, &[170.0, 0.0]).unwrap();
    let ll = log_likelihood_pointwise(&s, &p, Observations::Heights(&[170.0])).unwrap();
    assert!((ll[0] + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((ll[0] + 0.91894).abs() < 1e-5);

    assert!(log_likelihood_pointwise(&s, &p, Observations::Counts(&rows)).is_err());
}

#[test]
fn posterior_is_prior_plus_pointwise_sum() {
    let mut rng = stream_rng(3, 0);
    for v in [Variant::M1, Variant::M2, Variant::M3] {
        let s = spec(v);
        let rows = synthetic_rows(30, 3, 4, 1);
        let u: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (lp, _) = log_posterior_and_grad(&s, &u, Observations::Counts(&rows)).unwrap();
        let p = constrain(&s, &u).unwrap();
        let ll: f64 = log_likelihood_pointwise(&s, &p, Observations::Counts(&rows))
            .unwrap()
            .iter()
            .sum();
        let prior = log_prior(&s, &u).unwrap();
        assert!((lp - prior - ll).abs() < 1e-9 * lp.abs().max(1.0));

        let (a, b) = rows.split_at(13);
        let lp_a = log_posterior_and_grad(&s, &u, Observations::Counts(a))
            .unwrap()
            .0;
        let lp_b = log_posterior_and_grad(&s, &u, Observations::Counts(b))
            .unwrap()
            .0;
        assert!((lp - lp_a - lp_b + prior).abs() < 1e-9);
    }
}

/// Central finite differences with h = 1e-5; relative error against
/// `max(1, |fd|)`.
fn max_gradient_error(s: &ModelSpec, obs: Observations<'_>, u: &[f64]) -> f64 {
    let (_, g) = log_posterior_and_grad(s, u, obs).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..u.len() {
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[j] += h;
        dn[j] -= h;
        let fd = (log_posterior_and_grad(s, &up, obs).unwrap().0
            - log_posterior_and_grad(s, &dn, obs).unwrap().0)
            / (2.0 * h);
        worst = worst.max((g[j] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = stream_rng(21, 0);
    let rows = synthetic_rows(12, 3, 4, 2);
    let heights: Vec<f64> = (0..10).map(|i| 160.0 + i as f64).collect();
    for s in [
        ModelSpec::toy(),
        ModelSpec::toy_with_fixed_sigma(7.0),
        spec(Variant::M1),
        spec(Variant::M2),
        spec(Variant::M3),
    ] {
        let obs = if s.variant == Variant::Toy {
            Observations::Heights(&heights)
        } else {
            Observations::Counts(&rows)
        };
        for _ in 0..20 {
            let mut u: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            if s.variant == Variant::Toy {
                u[0] = rng.random_range(150.0..190.0);
                if s.dim() > 1 {
                    u[1] = rng.random_range(1.0..3.0);
                }
            }
            let err = max_gradient_error(&s, obs, &u);
            assert!(err < 1e-6, "{}: relative error {err}", s.variant);
        }
    }
}

#[test]
fn toy_gradient_vanishes_at_conjugate_mode() {
    let sigma: f64 = 8.0;
    let h: Vec<f64> = (0..25).map(|i| 165.0 + (i % 7) as f64).collect();
    let n = h.len() as f64;
    let prec = 1.0 / 50f64.powi(2) + n / sigma.powi(2);
    let mode = (170.0 / 50f64.powi(2) + h.iter().sum::<f64>() / sigma.powi(2)) / prec;
    let s = ModelSpec::toy_with_fixed_sigma(sigma);
    let (_, g) = log_posterior_and_grad(&s, &[mode], Observations::Heights(&h)).unwrap();
    assert!(g[0].abs() < 1e-10, "{}", g[0]);
}

#[test]
fn nesting_m3_m2_m1() {
    let rows = synthetic_rows(25, 3, 4, 5);
    let obs = Observations::Counts(&rows);
    let s3 = spec(Variant::M3);
    let s2 = spec(Variant::M2);
    let s1 = spec(Variant::M1);
    let mut rng = stream_rng(8, 0);
    let mut p3 = sample_prior(&mut rng, &s3);
    p3.alpha_language = vec![0.1, -0.2, 0.3];
    p3.beta_language = vec![[0.0; 4]; 3];
    p3.alpha_project = vec![0.0; 4];
    let mut p2 = p3.clone();
    p2.beta_language.clear();
    p2.alpha_project.clear();
    p2.corr_chol.clear();
    let a = log_likelihood_pointwise(&s3, &p3, obs).unwrap();
    let b = log_likelihood_pointwise(&s2, &p2, obs).unwrap();
    assert_eq!(a, b);

    let mut p2z = p2.clone();
    p2z.beta = [0.0; 4];
    let c = log_likelihood_pointwise(&s2, &p2z, obs).unwrap();
    let d = log_likelihood_pointwise(&s1, &p2z, obs).unwrap();
    assert_eq!(c, d);
}

#[test]
fn log_posterior_finite_far_out() {
    let rows = synthetic_rows(10, 3, 4, 6);
    for v in [Variant::M1, Variant::M2, Variant::M3] {
        let s = spec(v);
        for scale in [5.0, 20.0] {
            let u: Vec<f64> = (0..s.dim())
                .map(|j| if j % 2 == 0 { scale } else { -scale })
                .collect();
            let (lp, g) = log_posterior_and_grad(&s, &u, Observations::Counts(&rows)).unwrap();
            assert!(lp.is_finite(), "{v} at {scale}");
            assert!(g.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn prior_sample_moments() {
    let mut rng = stream_rng(12, 0);
    let s = ModelSpec::toy();
    let mus: Vec<f64> = (0..100_000)
        .map(|_| sample_prior(&mut rng, &s).mu)
        .collect();
    assert!((stats::mean(&mus) - 170.0).abs() < 1.0);
    assert!((stats::sd(&mus) - 50.0).abs() < 1.0);

    let s = spec(Variant::M1);
    let sds: Vec<f64> = (0..100_000)
        .map(|_| sample_prior(&mut rng, &s).sigma_alpha)
        .collect();
    let expected = std::f64::consts::PI.sqrt() / 2.0;
    assert!((stats::mean(&sds) / expected - 1.0).abs() < 0.01);

    let s = spec(Variant::M3);
    for _ in 0..20_000 {
        let p = sample_prior(&mut rng, &s);
        assert!(p.sigma_alpha > 0.0 && p.sigma_gamma > 0.0 && p.phi > 0.0);
        assert!(p.sigma_beta.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn simulate_outcomes_behaviour() {
    let s = ModelSpec::new(Variant::M1, 1, 1);
    let mut p = constrain(&s, &vec![0.0; s.dim()]).unwrap();
    p.alpha = -20.0;
    p.alpha_language = vec![0.0];
    let rows = vec![
        PreparedRow {
            project_index: 0,
            language_index: 0,
            x: [0.0; 4],
            bugs: 0,
        };
        10_000
    ];
    let mut rng = stream_rng(1, 0);
    let y = simulate_outcomes(&mut rng, &s, &p, Observations::Counts(&rows)).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));

    p.alpha = 5f64.ln();
    p.phi = 2.0;
    let rows = vec![rows[0]; 1_000_000];
    let y = simulate_outcomes(&mut rng, &s, &p, Observations::Counts(&rows)).unwrap();
    assert!((stats::mean(&y) / 5.0 - 1.0).abs() < 0.02);
    assert!((stats::variance(&y) / 17.5 - 1.0).abs() < 0.05);

    let a = simulate_outcomes(
        &mut stream_rng(4, 2),
        &s,
        &p,
        Observations::Counts(&rows[..50]),
    )
    .unwrap();
    let b = simulate_outcomes(
        &mut stream_rng(4, 2),
        &s,
        &p,
        Observations::Counts(&rows[..50]),
    )
    .unwrap();
    assert_eq!(a, b);
}
