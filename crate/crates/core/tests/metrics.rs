use ceofp::metrics::{cpc, flow_metrics, rmse, smape};
use proptest::prelude::*;

// Straight-line re-implementations used as oracles.
fn rmse_ref(t: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..t.len() {
        s += (t[i] - p[i]) * (t[i] - p[i]);
    }
    (s / t.len() as f64).sqrt()
}

fn smape_ref(t: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..t.len() {
        let d = (t[i].abs() + p[i].abs()) / 2.0;
        if d > 0.0 {
            s += (t[i] - p[i]).abs() / d;
        }
    }
    s / t.len() as f64
}

fn cpc_ref(t: &[f64], p: &[f64]) -> f64 {
    let mut common = 0.0;
    let mut total = 0.0;
    for i in 0..t.len() {
        common += if t[i] < p[i] { t[i] } else { p[i] };
        total += t[i] + p[i];
    }
    2.0 * common / total
}

fn flows(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 9 => 0.0..1000.0f64], n)
}

#[test]
fn hand_case() {
    let (t, p) = ([2.0, 4.0], [3.0, 4.0]);
    assert!((rmse(&t, &p).unwrap() - 0.7071).abs() < 1e-4);
    assert_eq!(rmse(&t, &p).unwrap(), 0.5f64.sqrt());
    assert_eq!(smape(&t, &p).unwrap(), 0.2);
    assert_eq!(cpc(&t, &p).unwrap(), 12.0 / 13.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_brute_force((t, p) in (flows(50), flows(50))) {
        prop_assume!(t.iter().sum::<f64>() + p.iter().sum::<f64>() > 0.0);
        let m = flow_metrics(&t, &p).unwrap();
        prop_assert!((m.rmse - rmse_ref(&t, &p)).abs() <= 1e-9 * m.rmse.max(1.0));
        prop_assert!((m.smape - smape_ref(&t, &p)).abs() <= 1e-9);
        prop_assert!((m.cpc - cpc_ref(&t, &p)).abs() <= 1e-9);
        prop_assert_eq!(m.n_pairs, 50);
    }

    #[test]
    fn rmse_squared_times_n_is_the_residual_sum((t, p) in (flows(20), flows(20))) {
        let r = rmse(&t, &p).unwrap();
        let ss: f64 = t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((r * r * 20.0 - ss).abs() <= 1e-9 * ss.max(1.0));
    }

    #[test]
    fn cpc_is_symmetric_and_scale_free((t, p) in (flows(30), flows(30)), c in 0.01..100.0f64) {
        prop_assume!(t.iter().sum::<f64>() + p.iter().sum::<f64>() > 0.0);
        let base = cpc(&t, &p).unwrap();
        prop_assert!((base - cpc(&p, &t).unwrap()).abs() < 1e-12);
        let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        prop_assert!((base - cpc(&ts, &ps).unwrap()).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn smape_is_invariant_to_pairwise_scaling((t, p) in (flows(30), flows(30)), scales in prop::collection::vec(0.01..100.0f64, 30)) {
        let ts: Vec<f64> = t.iter().zip(&scales).map(|(v, c)| v * c).collect();
        let ps: Vec<f64> = p.iter().zip(&scales).map(|(v, c)| v * c).collect();
        let a = smape(&t, &p).unwrap();
        prop_assert!((a - smape(&ts, &ps).unwrap()).abs() < 1e-9);
        prop_assert!((0.0..=2.0).contains(&a));
    }
}
