use lfe_design::ode::OdeModel;
use lfe_design::rng::rng_from;
use lfe_design::stochastic::{add_noise, generate_batch, sample_prior, NoiseKind, ParamPrior, Prior};

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Standard errors of the sample mean and sample std of a lognormal with
/// the given mean and std, from its closed-form kurtosis.
fn lognormal_standard_errors(mean: f64, std: f64, n: usize) -> (f64, f64) {
    let s2 = (1.0 + (std / mean).powi(2)).ln();
    let excess = (4.0 * s2).exp() + 2.0 * (3.0 * s2).exp() + 3.0 * (2.0 * s2).exp() - 6.0;
    let kurt = excess + 3.0;
    let n = n as f64;
    (std / n.sqrt(), std * ((kurt - 1.0) / (4.0 * n)).sqrt())
}

#[test]
fn lognormal_moments_at_a_million_samples() {
    let n = 1_000_000;
    for (k, m) in [OdeModel::three_tissue(), OdeModel::predator_prey()].iter().enumerate() {
        let q = sample_prior(&m.prior, n, &mut rng_from(100 + k as u64));
        for (j, p) in m.prior.params.iter().enumerate() {
            let col = q.column(j).to_vec();
            assert!(col.iter().all(|v| *v > 0.0));
            let (em, es) = mean_std(&col);
            let (se_m, se_s) = lognormal_standard_errors(p.mean(), p.std(), n);
            assert!((em - p.mean()).abs() <= 3.0 * se_m, "{:?} param {j}: mean {em} vs {}", m.name, p.mean());
            assert!((es - p.std()).abs() <= 3.0 * se_s, "{:?} param {j}: std {es} vs {}", m.name, p.std());
        }
    }
}

#[test]
fn zero_spread_prior_is_degenerate() {
    let prior = Prior::new(vec![
        ParamPrior::LogNormal { mean: 0.3, std: 0.0 },
        ParamPrior::LogNormal { mean: 7.0, std: 0.0 },
    ]);
    let q = sample_prior(&prior, 50, &mut rng_from(1));
    assert!(q.column(0).iter().all(|v| (v - 0.3).abs() < 1e-15));
    assert!(q.column(1).iter().all(|v| (v - 7.0).abs() < 1e-14));
}

#[test]
fn prior_draws_are_seeded() {
    let m = OdeModel::three_tissue();
    let a = sample_prior(&m.prior, 64, &mut rng_from(9));
    let b = sample_prior(&m.prior, 64, &mut rng_from(9));
    assert_eq!(a, b);
}

#[test]
fn multiplicative_noise_std() {
    let d = add_noise(&vec![1.0; 100_000], 0.1, NoiseKind::MultiplicativeRelative, &mut rng_from(2)).unwrap();
    let (m, s) = mean_std(&d);
    assert!((m - 1.0).abs() < 3.0 * 0.1 / (1e5f64).sqrt());
    assert!((s - 0.1).abs() < 0.002, "std {s}");
}

#[test]
fn additive_log_noise_moments() {
    let e = std::f64::consts::E;
    let d = add_noise(&vec![e; 100_000], 0.1, NoiseKind::AdditiveOnLog, &mut rng_from(3)).unwrap();
    let logs: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let (m, s) = mean_std(&logs);
    assert!((m - 1.0).abs() < 3.0 * 0.1 / (1e5f64).sqrt());
    assert!((s - 0.1).abs() < 0.002, "std {s}");
}

#[test]
fn zero_noise_is_identity() {
    let d = vec![0.5, 2.0, 3.0];
    for kind in [NoiseKind::MultiplicativeRelative, NoiseKind::AdditiveOnLog] {
        assert_eq!(add_noise(&d, 0.0, kind, &mut rng_from(4)).unwrap(), d);
    }
}

#[test]
fn log_noise_rejects_nonpositive_data() {
    assert!(add_noise(&[1.0, 0.0], 0.1, NoiseKind::AdditiveOnLog, &mut rng_from(5)).is_err());
}

#[test]
fn sampled_noise_levels_come_from_the_level_set() {
    for (m, max) in [(OdeModel::three_tissue(), 19), (OdeModel::predator_prey(), 10)] {
        let b = generate_batch(&m, 400, &mut rng_from(6)).unwrap();
        for s in &b.sigma {
            let pct = s * 100.0;
            assert!((pct - pct.round()).abs() < 1e-9 && pct.round() <= max as f64 && pct >= 0.0, "{s}");
        }
        assert_eq!(b.d_noisy.ncols(), m.n());
    }
}
