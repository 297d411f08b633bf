use std::collections::VecDeque;

use proptest::prelude::*;

use lfe_design::designers::{
    soft_shrink, sparsity, tabu_neighbors, tabu_search, update_w_continuous, DesignWeights, Fingerprint, TabuState,
    SPARSITY_THRESHOLD,
};
use lfe_design::harness::{log_error_halfwidth, Summary};
use lfe_design::ode::TimeGrid;
use lfe_design::risk::{nmse_data, nmse_params, sem};
use lfe_design::rng::rng_from;
use lfe_design::stochastic::lognormal_params;

fn fnv(v: &[usize]) -> f64 {
    // deterministic pseudo-loss of a design
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in v {
        h = (h ^ i as u64).wrapping_mul(0x100_0000_01b3);
    }
    (h % 10_000) as f64
}

proptest! {
    #[test]
    fn prox_step_minimises_the_one_dimensional_objective(
        w in 0.0f64..3.0, dw in -10.0f64..10.0, mu in 1e-4f64..1.0, rho in 0.0f64..2.0,
    ) {
        let x = update_w_continuous(&[w], &[dw], mu, rho)[0];
        let t = w - mu * dw;
        let obj = |x: f64| 0.5 * (x - t).powi(2) + rho * x;
        prop_assert!(x >= 0.0);
        // first-order optimality on x >= 0
        if x > 0.0 {
            prop_assert!((x - t + rho).abs() < 1e-12);
        } else {
            prop_assert!(t - rho <= 0.0);
        }
        for probe in [0.0, x + 1e-3, (x - 1e-3).max(0.0), t.abs()] {
            prop_assert!(obj(x) <= obj(probe) + 1e-15);
        }
    }

    #[test]
    fn shrink_is_nonexpansive_and_nonnegative(a in -5.0f64..5.0, b in -5.0f64..5.0, rho in 0.0f64..2.0) {
        let (sa, sb) = (soft_shrink(a, rho), soft_shrink(b, rho));
        prop_assert!(sa >= 0.0 && sb >= 0.0);
        prop_assert!((sa - sb).abs() <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn sparsity_never_grows_under_pure_shrinkage(w in prop::collection::vec(0.0f64..2.0, 1..50), rho in 0.0f64..0.5) {
        let zero = vec![0.0; w.len()];
        let out = update_w_continuous(&w, &zero, 1.0, rho);
        prop_assert!(sparsity(&out, SPARSITY_THRESHOLD) <= sparsity(&w, SPARSITY_THRESHOLD));
    }

    #[test]
    fn parameter_risk_is_scale_invariant(
        q in prop::collection::vec(0.1f64..10.0, 1..8), noise in prop::collection::vec(-1.0f64..1.0, 8), c in 0.01f64..100.0,
    ) {
        let q_hat: Vec<f64> = q.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let sq: Vec<f64> = q.iter().map(|v| c * v).collect();
        let sh: Vec<f64> = q_hat.iter().map(|v| c * v).collect();
        let a = nmse_params(&q_hat, &q).unwrap();
        let b = nmse_params(&sh, &sq).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn data_risk_is_scale_invariant(d in prop::collection::vec(0.1f64..10.0, 5), e in prop::collection::vec(-1.0f64..1.0, 5), c in -10.0f64..10.0) {
        prop_assume!(c.abs() > 1e-3);
        let grid = TimeGrid::linear(0.0, 4.0, 5).unwrap();
        let dh: Vec<f64> = d.iter().zip(&e).map(|(a, b)| a + b).collect();
        let a = nmse_data(&dh, &d, &grid).unwrap();
        let b = nmse_data(&dh.iter().map(|v| c * v).collect::<Vec<_>>(), &d.iter().map(|v| c * v).collect::<Vec<_>>(), &grid).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn lognormal_parameters_round_trip(mean in 1e-4f64..1e3, cv in 0.0f64..1.0) {
        let std = cv * mean;
        let (mu, s) = lognormal_params(mean, std).unwrap();
        let m = (mu + 0.5 * s * s).exp();
        let v = (s * s).exp_m1() * (2.0 * mu + s * s).exp();
        prop_assert!((m - mean).abs() <= 1e-12 * mean);
        prop_assert!((v - std * std).abs() <= 1e-10 * mean * mean);
    }

    #[test]
    fn sem_of_constant_sets_is_zero(v in 0.0f64..10.0, n in 2usize..60) {
        prop_assert!(sem(&vec![v; n]) <= 1e-15 * v.max(1.0));
    }

    #[test]
    fn log_half_width_is_positive(l in 1e-6f64..10.0, s in 1e-9f64..1.0) {
        let h = log_error_halfwidth(l, s);
        prop_assert!(h > 0.0);
        prop_assert!((10f64.powf(l.log10() + h) - (l + s)).abs() <= 1e-9 * (l + s));
    }

    #[test]
    fn neighbours_are_single_swaps_outside_the_list(
        n in 5usize..30, s in 1usize..5, k in 1usize..20, seed in 0u64..1000,
    ) {
        prop_assume!(s < n);
        let mut rng = rng_from(seed);
        let cur = Fingerprint((0..s).collect());
        let state = TabuState::new(cur.clone(), 4);
        let nb = tabu_neighbors(&cur, n, k, &state, &mut rng).unwrap();
        prop_assert_eq!(nb.len(), k.min(s * (n - s)));
        for fp in &nb {
            prop_assert_eq!(fp.0.len(), s);
            prop_assert!(fp.0.windows(2).all(|w| w[0] < w[1]));
            let shared = fp.0.iter().filter(|i| cur.0.contains(i)).count();
            prop_assert_eq!(shared, s - 1);
            prop_assert!(!state.is_tabu(fp));
        }
    }

    #[test]
    fn tabu_never_revisits_a_listed_design(
        n in 6usize..14, s in 2usize..4, k in 1usize..12, list in 1usize..10, steps in 1usize..40, seed in 0u64..500,
    ) {
        let mut rng = rng_from(seed);
        let start = Fingerprint((0..s).collect());
        let mut state = TabuState::new(start.clone(), list);
        let moves = match tabu_search(&mut state, n, steps, k, &mut rng, |c| Ok(c.iter().map(|f| fnv(&f.0)).collect())) {
            Ok(m) => m,
            // a neighbourhood can be exhausted by a long list on a tiny instance
            Err(lfe_design::Error::Exhausted) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let mut shadow: VecDeque<Fingerprint> = VecDeque::from([start]);
        let mut best = f64::INFINITY;
        for m in &moves {
            prop_assert!(!shadow.contains(&m.to), "revisited {:?}", m.to);
            if shadow.len() == list {
                shadow.pop_front();
            }
            shadow.push_back(m.to.clone());
            best = best.min(m.loss);
        }
        prop_assert_eq!(state.best_loss, best);
        prop_assert!(state.list_len() <= list);
    }

    #[test]
    fn summary_brackets_its_values(v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let s = Summary::of(&v);
        prop_assert!(s.min <= s.mean + 1e-12);
        prop_assert!(s.std >= 0.0);
    }
}

#[test]
fn binary_design_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = TimeGrid::linear(0.0, 30.0, 200).unwrap();
    let w = DesignWeights::binary_from_indices(200, &[3, 50, 199]).unwrap();
    let p = dir.path().join("w.csv");
    w.write_csv(&p, &grid).unwrap();
    let (back, t) = DesignWeights::read_csv(&p).unwrap();
    assert_eq!(back, w);
    assert_eq!(t, grid.points());
}

#[test]
fn continuous_design_csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let grid = TimeGrid::log_shifted(1e4, 400).unwrap();
    let vals: Vec<f64> = (0..400).map(|i| (i as f64 * 0.7).sin().abs() / 3.0).collect();
    let w = DesignWeights::continuous(vals).unwrap();
    let p = dir.path().join("w.csv");
    w.write_csv(&p, &grid).unwrap();
    let (back, t) = DesignWeights::read_csv(&p).unwrap();
    assert_eq!(back, w);
    assert_eq!(t, grid.points());
}
