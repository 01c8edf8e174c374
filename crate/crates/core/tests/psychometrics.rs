use handground::experiment::*;
use handground::psychometrics::*;
use proptest::prelude::*;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ContinuousCDF, Normal};

fn sampled_table(obs: &ObserverModel, levels: &[f64], n: u64, seed: u64) -> ProportionTable {
    let mut rng = stream_rng(seed, 0);
    ProportionTable::new(
        levels
            .iter()
            .map(|&k| {
                let p = obs.choice_probability(100.0, k);
                let y = Binomial::new(n, p).unwrap().sample(&mut rng);
                LevelCount { stimulus: k, n_trials: n as u32, n_chose_comparison: y as u32 }
            })
            .collect(),
    )
    .unwrap()
}

/// Exhaustive grid search over (mu, sigma, lambda); shares nothing with the
/// production optimiser.
fn grid_mle(table: &ProportionTable) -> (f64, [f64; 3]) {
    let phi = Normal::standard();
    let nll = |mu: f64, sigma: f64, lambda: f64| -> f64 {
        table
            .levels()
            .iter()
            .map(|l| {
                let p = ((1.0 - lambda) * phi.cdf((l.stimulus - mu) / sigma)).clamp(1e-12, 1.0 - 1e-12);
                let (y, n) = (l.n_chose_comparison as f64, l.n_trials as f64);
                -(y * p.ln() + (n - y) * (1.0 - p).ln())
            })
            .sum()
    };
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=240 {
        let mu = 40.0 + 0.5 * i as f64;
        for j in 0..=120 {
            let sigma = 3.0 * 1.03f64.powi(j);
            for k in 0..=10 {
                let lambda = 0.005 * k as f64;
                let v = nll(mu, sigma, lambda);
                if v < best.0 {
                    best = (v, [mu, sigma, lambda]);
                }
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn jnd_is_half_the_quartile_range(a in -1e3..1e3f64, b in 0.0..500.0f64, c in 0.0..500.0f64) {
        let (j25, pse, j75) = (a, a + b, a + b + c);
        let j = jnd(pse, j25, j75).unwrap();
        prop_assert!((j - (j75 - j25) / 2.0).abs() <= 1e-12 * (1.0 + j.abs()));
        prop_assert!(j >= 0.0);
    }

    #[test]
    fn weber_is_exact_division(j in 0.0..200.0f64) {
        prop_assert_eq!(weber_fraction(j, 100.0), j / 100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn fit_invariants(bias in -30.0..40.0f64, sigma in 4.0..60.0f64, lapse in 0.0..0.1f64, seed in any::<u64>()) {
        let obs = ObserverModel { pse_bias: bias, noise_sigma: sigma, lapse_rate: lapse };
        let t = sampled_table(&obs, &DEFAULT_COMPARISONS_NM, 10, seed);
        let Ok(f) = fit(&t, 100.0, &FitConfig::default()) else { return Ok(()) };
        let samples = curve_samples(&f, 10.0, 190.0, 1.0);
        prop_assert!(samples.windows(2).all(|w| w[1].1 >= w[0].1));
        for s in &f.starts {
            prop_assert!(-f.log_likelihood <= s.start_nll + 1e-9);
        }
        prop_assert!(f.j25 < f.pse && f.pse < f.j75);
        prop_assert!(((f.pse - f.j25) - (f.j75 - f.pse)).abs() <= 1e-9);
        prop_assert!(f.deviance >= 0.0);
        prop_assert!((0.0..=0.05).contains(&f.lambda));
    }

    #[test]
    fn rescaling_stimuli_rescales_thresholds(bias in -20.0..30.0f64, sigma in 8.0..40.0f64, seed in any::<u64>()) {
        let obs = ObserverModel { pse_bias: bias, noise_sigma: sigma, lapse_rate: 0.0 };
        let t = sampled_table(&obs, &DEFAULT_COMPARISONS_NM, 10, seed);
        let Ok(f1) = fit(&t, 100.0, &FitConfig::default()) else { return Ok(()) };
        let f2 = fit(&t.scaled(2.0), 200.0, &FitConfig::default()).unwrap();
        prop_assert!((f2.pse - 2.0 * f1.pse).abs() <= 1e-4 * f1.pse.abs().max(1.0), "{} {}", f1.pse, f2.pse);
        prop_assert!((f2.jnd - 2.0 * f1.jnd).abs() <= 1e-4 * f1.jnd.max(1.0), "{} {}", f1.jnd, f2.jnd);
        prop_assert!((f2.weber_fraction - f1.weber_fraction).abs() <= 1e-4 * f1.weber_fraction.max(1e-3));
    }
}

#[test]
fn optimiser_matches_exhaustive_grid() {
    for seed in 0..6 {
        let obs = ObserverModel { pse_bias: 8.0 - 3.0 * seed as f64, noise_sigma: 12.0 + 6.0 * seed as f64, lapse_rate: 0.02 };
        let t = sampled_table(&obs, &DEFAULT_COMPARISONS_NM, 40, seed);
        let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
        let (grid_nll, [mu, sigma, _]) = grid_mle(&t);
        // the continuous optimum can only improve on a grid point
        assert!(-f.log_likelihood <= grid_nll + 1e-9, "seed {seed}");
        assert!(grid_nll + f.log_likelihood < 0.05, "seed {seed}: grid is far from the optimum");
        assert!((f.mu - mu).abs() < 2.0, "seed {seed}: mu {} vs {mu}", f.mu);
        assert!((f.sigma / sigma - 1.0).abs() < 0.08, "seed {seed}: sigma {} vs {sigma}", f.sigma);
    }
}

#[test]
fn logistic_family_recovers_its_own_generator() {
    let levels: Vec<f64> = (0..11).map(|i| 10.0 + 18.0 * i as f64).collect();
    let table = ProportionTable::new(
        levels
            .iter()
            .map(|&x| {
                let p = 1.0 / (1.0 + (-(x - 120.0) / 15.0f64).exp());
                LevelCount { stimulus: x, n_trials: 10_000, n_chose_comparison: (p * 10_000.0).round() as u32 }
            })
            .collect(),
    )
    .unwrap();
    let cfg = FitConfig { family: Family::Logistic, ..FitConfig::default() };
    let f = fit(&table, 100.0, &cfg).unwrap();
    assert!((f.mu - 120.0).abs() < 0.2 && (f.sigma - 15.0).abs() < 0.2, "{f:?}");
    assert_eq!(f.pse, f.mu);
    assert!((f.jnd - 15.0 * 3f64.ln()).abs() < 0.2);
}

#[test]
fn default_session_aggregates_to_eleven_rows_of_ten() {
    let obs = ObserverDescriptor {
        id: "s".into(),
        model: ObserverModel::from_pse_jnd(111.0, 22.9, 100.0),
        ratings: None,
    };
    let log = run_session(&StimulusProtocol::default(), &obs, 21, &RenderSetup::default()).unwrap();
    let t = aggregate(&log).unwrap();
    assert_eq!(t.levels().len(), 11);
    assert!(t.levels().iter().all(|l| l.n_trials == 10));
    assert!(t.levels()[0].proportion() <= 0.1);
    assert!(t.levels()[10].proportion() >= 0.9);
    let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
    assert!((80.0..=160.0).contains(&f.pse), "{}", f.pse);

    let mut plot = Vec::new();
    write_plot_csv(&t, &f, &mut plot).unwrap();
    let text = String::from_utf8(plot).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("data,")).count(), 11);
    assert_eq!(text.lines().filter(|l| l.starts_with("fit,")).count(), 181);
}

#[test]
fn empty_log_is_an_error() {
    let obs = ObserverDescriptor { id: "s".into(), model: ObserverModel::from_pse_jnd(100.0, 20.0, 100.0), ratings: None };
    let mut log = run_session(&StimulusProtocol::default(), &obs, 1, &RenderSetup::default()).unwrap();
    log.records.clear();
    assert!(matches!(aggregate(&log), Err(FitError::EmptyLog)));
}

#[test]
fn fit_json_round_trip() {
    let obs = ObserverModel::from_pse_jnd(104.0, 19.5, 100.0);
    let f = fit(&sampled_table(&obs, &DEFAULT_COMPARISONS_NM, 10, 4), 100.0, &FitConfig::default()).unwrap();
    let text = serde_json::to_string(&f).unwrap();
    let back: PsychometricFit = serde_json::from_str(&text).unwrap();
    assert_eq!(back, f);
}
