//! Acceptance suite. Run with
//! `cargo test -p ceofp-core --release --test acceptance`; pass criterion
//! numbers (e.g. `-- 1 2 6`) to run a subset. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.
//!
//! Criteria 7 to 11 run the full default experiment on five seeds and take
//! most of an hour on one core. Artifacts go to `ACCEPTANCE_OUT` when set,
//! otherwise to a temporary directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ceofp::causal::{acyclicity_penalty, exact_dag_search, train_causal_discovery, CausalSearchConfig};
use ceofp::cevae::{CevaeConfig, CevaeParams};
use ceofp::dag::{is_acyclic, shd, Adjacency, CausalDag};
use ceofp::data::{off_diagonal_pairs, CityDataset, CityRole, FeatureMatrix, RegionSet};
use ceofp::metrics::{cpc, rmse, smape};
use ceofp::nn::{standard_normal, Params, Tape};
use ceofp::odpred::{build_region_graph, prediction_gradients, prediction_loss, OdConfig, OdModelParams};
use ceofp::pipeline::{self, ExperimentReport, PipelineConfig};
use ceofp::synthcity::{feature_names, generate_features, generate_layout, generate_od, sample_random_dag, GravitySpec, ScmSpec};
use ceofp::{seed, Matrix};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn c1() -> Outcome {
    let mut rng = seed::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..500.0)).collect();
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..500.0)).collect();
        let n = 50.0;
        let r = (t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
        let s = t.iter().zip(&p).map(|(a, b)| (a - b).abs() / ((a.abs() + b.abs()) / 2.0)).sum::<f64>() / n;
        let c = 2.0 * t.iter().zip(&p).map(|(a, b)| a.min(*b)).sum::<f64>() / (t.iter().sum::<f64>() + p.iter().sum::<f64>());
        worst = worst
            .max((rmse(&t, &p).unwrap() - r).abs())
            .max((smape(&t, &p).unwrap() - s).abs())
            .max((cpc(&t, &p).unwrap() - c).abs());
    }
    let (t, p) = ([2.0, 4.0], [3.0, 4.0]);
    let hand = (rmse(&t, &p).unwrap(), smape(&t, &p).unwrap(), cpc(&t, &p).unwrap());
    let hand_ok = (hand.0 - 0.7071).abs() < 5e-5 && hand.0 == 0.5f64.sqrt() && hand.1 == 0.2 && hand.2 == 12.0 / 13.0;
    outcome(worst <= 1e-9 && hand_ok, format!("max deviation {worst:.1e}; hand case {:.4} / {} / {}", hand.0, hand.1, hand.2))
}

fn c2() -> Outcome {
    let mut bad = 0;
    for bits in 0u32..512 {
        let mut a = Adjacency::empty(3);
        let mut k = 0;
        // diagonal bits are dropped, so every zero-diagonal matrix appears
        for i in 0..3 {
            for j in 0..3 {
                if i != j && bits >> k & 1 == 1 {
                    a.set(i, j, true);
                }
                k += 1;
            }
        }
        let h = acyclicity_penalty(&a);
        let ok = if is_acyclic(&a).unwrap() { h == 0.0 } else { h > 0.0 };
        bad += usize::from(!ok);
    }
    let two = Adjacency::from_edges(3, &[(0, 1), (1, 0)]).unwrap();
    let err = (acyclicity_penalty(&two) - (2.0 * 1f64.cosh() - 2.0)).abs();
    outcome(bad == 0 && err <= 1e-9, format!("{bad} of 512 patterns misclassified; 2-cycle error {err:.1e}"))
}

fn c3() -> Outcome {
    let mut hits = 0;
    let mut per_seed = Vec::new();
    for s in 0..5u64 {
        let truth = sample_random_dag(3, 0.5, seed::derive(s, "acceptance.dag")).unwrap();
        let spec = ScmSpec::random(truth, 1.0, seed::derive(s, "acceptance.scm")).unwrap();
        let data = generate_features(&spec, 1000, seed::derive(s, "acceptance.rows")).unwrap();
        let config = CausalSearchConfig { seed: s, ..Default::default() };
        let found = train_causal_discovery(&data, &config).unwrap().dag;
        let same = found == exact_dag_search(&data).unwrap();
        hits += usize::from(same);
        per_seed.push(if same { '=' } else { 'x' });
    }
    outcome(hits >= 4, format!("{hits}/5 seeds equal the exact search [{}]", per_seed.iter().collect::<String>()))
}

fn c4() -> Outcome {
    let edges: Vec<(usize, usize)> = (1..6).map(|i| (i - 1, i)).collect();
    let truth = CausalDag::new(feature_names(6), Adjacency::from_edges(6, &edges).unwrap()).unwrap();
    let mut dists = Vec::new();
    let mut rising = true;
    for s in 0..5u64 {
        let spec = ScmSpec::random(truth.clone(), 1.0, seed::derive(s, "acceptance.scm")).unwrap();
        let data = generate_features(&spec, 2000, seed::derive(s, "acceptance.rows")).unwrap();
        let out = train_causal_discovery(&data, &CausalSearchConfig { seed: s, ..Default::default() }).unwrap();
        dists.push(shd(out.dag.adjacency(), truth.adjacency()));
        let q = out.reward_curve.len() / 4;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        rising &= mean(&out.reward_curve[out.reward_curve.len() - q..]) > mean(&out.reward_curve[..q]);
    }
    let mut sorted = dists.clone();
    sorted.sort_unstable();
    outcome(sorted[2] <= 2 && rising, format!("SHD per seed {dists:?}, median {}; reward rises in every seed: {rising}", sorted[2]))
}

/// Worst relative error between analytic and central-difference gradients
/// over 20 random scalar parameters.
fn fd_check(params: &mut Params, grads: &[Matrix], seed_: u64, value: &dyn Fn(&Params) -> f64) -> f64 {
    let slots: Vec<(usize, usize)> = (0..grads.len()).flat_map(|k| (0..grads[k].as_slice().len()).map(move |i| (k, i))).collect();
    let mut rng = seed::rng(seed_);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (k, i) = slots[rng.random_range(0..slots.len())];
        let orig = params.values()[k].as_slice()[i];
        params.values_mut()[k].as_mut_slice()[i] = orig + h;
        let up = value(params);
        params.values_mut()[k].as_mut_slice()[i] = orig - h;
        let down = value(params);
        params.values_mut()[k].as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads[k].as_slice()[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
    }
    worst
}

fn c5() -> Outcome {
    let d = CausalDag::new(feature_names(3), Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap()).unwrap();
    let config = CevaeConfig { latent_dim: 2, hidden: 5, beta: 0.7, ..Default::default() };
    let mut model = CevaeParams::new(&d, &[1, 2], &config).unwrap();
    let spec = ScmSpec::random(d.clone(), 1.0, 9).unwrap();
    let x = generate_features(&spec, 4, 10).unwrap().values;
    let noise = model.draw_noise(4, 21);
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let loss = model.objective(&tape, &p, &x, &noise).0;
    let grads = p.grads(&tape.backward(loss));
    drop(tape);
    let shape = model.clone();
    let cevae_err = fd_check(&mut model.params, &grads, 4, &|params: &Params| {
        let mut m = shape.clone();
        m.params = params.clone();
        let tape = Tape::new();
        let p = m.params.bind(&tape);
        m.objective(&tape, &p, &x, &noise).0.scalar_value()
    });

    let n = 6;
    let names: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
    let values = standard_normal(n, 3, &mut seed::rng(11));
    let features = FeatureMatrix::complete(values.clone(), names.clone()).unwrap();
    let (_, topology) = generate_layout(n, 11).unwrap();
    let gravity = GravitySpec { mass_features: (0, 1), alpha: 1.0, beta: 1.0, gamma: 1.5, scale: 200.0, noise: 0.2 };
    let od = generate_od(&features, &topology, &gravity, 11).unwrap();
    let city = CityDataset { regions: RegionSet::numbered(n).unwrap(), features, topology, od, role: CityRole::Source };
    let graph = build_region_graph(&city.topology, 2).unwrap();
    let cfg = OdConfig { k: 2, hidden: 6, head_hidden: 5, ..Default::default() };
    let teacher = OdModelParams::new(names.clone(), &cfg, 99).unwrap().layer_values(&values, &graph).unwrap();
    let mut student = OdModelParams::new(names, &cfg, 4).unwrap();
    let pairs = off_diagonal_pairs(n);
    let distill = Some((teacher.as_slice(), 0.7));
    let (_, grads) = prediction_gradients(&student, &city, &values, &graph, &pairs, distill).unwrap();
    let shape = student.clone();
    let od_err = fd_check(&mut student.params, &grads, 6, &|params: &Params| {
        let mut m = shape.clone();
        m.params = params.clone();
        prediction_loss(&m, &city, &values, &graph, &pairs, distill).unwrap().total
    });
    outcome(cevae_err < 1e-3 && od_err < 1e-3, format!("worst relative error: objective {cevae_err:.1e}, flow loss {od_err:.1e}"))
}

/// Does `c` feed `m` directly or through a chain of missing features?
fn feeds(d: &CausalDag, c: usize, m: usize, missing: &[usize]) -> bool {
    let mut stack = vec![m];
    let mut seen = vec![false; d.n()];
    while let Some(u) = stack.pop() {
        for q in d.parents(u) {
            if q == c {
                return true;
            }
            if missing.contains(&q) && !seen[q] {
                seen[q] = true;
                stack.push(q);
            }
        }
    }
    false
}

fn c6() -> Outcome {
    let mut checked = 0;
    let mut leaks = 0;
    for trial in 0..10u64 {
        let d = sample_random_dag(7, 0.4, seed::derive_idx(6, "acceptance.dag", trial)).unwrap();
        let missing = [1, 3, 4, 6];
        let config = CevaeConfig { latent_dim: 2, hidden: 6, seed: trial, ..Default::default() };
        let model = CevaeParams::new(&d, &missing, &config).unwrap();
        let x = standard_normal(8, 7, &mut seed::rng(trial));
        let base = model.missing_beliefs(&x, None);
        for &c in &model.observed {
            let mut zeroed = x.clone();
            zeroed.set_column(c, &[0.0; 8]);
            let after = model.missing_beliefs(&zeroed, None);
            for &m in &missing {
                if !feeds(&d, c, m, &missing) {
                    checked += 1;
                    leaks += usize::from(after[&m].mean != base[&m].mean);
                }
            }
        }
    }
    outcome(leaks == 0 && checked > 0, format!("{leaks} changed means in {checked} non-parent zeroings"))
}

struct Experiment {
    config: PipelineConfig,
    report: ExperimentReport,
    elapsed: Duration,
}

fn experiment(root: &Path) -> Experiment {
    let mut config = PipelineConfig { seeds: (0..5).collect(), ..Default::default() };
    config.output_dir = root.join("run-a");
    let start = Instant::now();
    let report = pipeline::run_pipeline(&config).expect("pipeline");
    Experiment { config, report, elapsed: start.elapsed() }
}

fn c7(e: &Experiment) -> Outcome {
    let r = &e.report.recon;
    let (ce, vae, ae) = (&r["ce_vae"], &r["vae"], &r["ae"]);
    let l = |s: &pipeline::ReconSummary| s.median_log_likelihood.unwrap_or(f64::NAN);
    let pass = ce.median_mse <= vae.median_mse && l(ce) >= l(vae) && ae.median_log_likelihood.is_none() && e.elapsed < minutes(30);
    outcome(
        pass,
        format!(
            "median MSE CE-VAE {:.4} VAE {:.4} AE {:.4}; median L CE-VAE {:.4} VAE {:.4}; {:.0?}",
            ce.median_mse, vae.median_mse, ae.median_mse, l(ce), l(vae), e.elapsed
        ),
    )
}

fn c8(e: &Experiment) -> Outcome {
    let f = &e.report.flows;
    let (ce, gat) = (&f["ce_ofp"], &f["gat_only"]);
    let gain = 1.0 - ce.median_rmse / gat.median_rmse;
    let gravity_worst = f.iter().all(|(arm, s)| arm == "gravity" || s.median_rmse < f["gravity"].median_rmse);
    let pass = gain >= 0.05 && ce.median_cpc > gat.median_cpc && gravity_worst && e.elapsed < minutes(60);
    let rmses: BTreeMap<&str, String> = f.iter().map(|(a, s)| (a.as_str(), format!("{:.2}", s.median_rmse))).collect();
    outcome(
        pass,
        format!("RMSE gain over GAT-only {:.1}%; CPC {:.4} vs {:.4}; median RMSE {rmses:?}", 100.0 * gain, ce.median_cpc, gat.median_cpc),
    )
}

fn c9(e: &Experiment) -> Outcome {
    let start = Instant::now();
    let report = pipeline::ablate(&e.config).expect("ablation");
    let elapsed = start.elapsed() + e.elapsed;
    let full = report.summary["ce_ofp"].median_rmse;
    let pass = report.summary.values().all(|s| full <= s.median_rmse) && elapsed < minutes(90);
    let rmses: BTreeMap<&str, String> = report.summary.iter().map(|(a, s)| (a.as_str(), format!("{:.2}", s.median_rmse))).collect();
    outcome(pass, format!("median RMSE {rmses:?}; {elapsed:.0?}"))
}

fn c10(e: &Experiment) -> Outcome {
    let start = Instant::now();
    let rows = pipeline::sweep_missing_features(&e.config, &[0, 5, 10, 15]).expect("sweep");
    let elapsed = start.elapsed();
    let medians = pipeline::sweep_medians(&rows);
    let without = &medians["no_cevae"];
    let with = &medians["ce_ofp"];
    let monotone = without.windows(2).all(|w| w[1].1 >= 0.95 * w[0].1);
    let (s_without, s_with) = (pipeline::slope(without), pipeline::slope(with));
    let pass = monotone && s_with < s_without && elapsed < minutes(60);
    let fmt = |v: &[(usize, f64)]| v.iter().map(|(c, r)| format!("{c}:{r:.2}")).collect::<Vec<_>>().join(" ");
    outcome(
        pass,
        format!("-CEVAE [{}] slope {s_without:.3}; CE-OFP [{}] slope {s_with:.3}; {elapsed:.0?}", fmt(without), fmt(with)),
    )
}

fn c11(e: &Experiment, root: &Path) -> Outcome {
    let mut again = e.config.clone();
    again.output_dir = root.join("run-b");
    pipeline::run_pipeline(&again).expect("second pipeline run");
    let a = fs::read(e.config.output_dir.join("report.json")).unwrap();
    let b = fs::read(again.output_dir.join("report.json")).unwrap();
    outcome(a == b, format!("report.json {} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let _tmp;
    let root: PathBuf = match std::env::var_os("ACCEPTANCE_OUT") {
        Some(p) => p.into(),
        None => {
            _tmp = tempfile::tempdir().unwrap();
            _tmp.path().to_path_buf()
        }
    };

    let mut failed = 0;
    let mut report = |k: u32, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut o = f();
        let elapsed = start.elapsed();
        if elapsed > limit {
            o.pass = false;
            o.detail.push_str(&format!("; over the {limit:?} limit"));
        }
        failed += usize::from(!o.pass);
        println!("criterion {k:>2}: {} ({:.1?}) {}", if o.pass { "PASS" } else { "FAIL" }, elapsed, o.detail);
    };
    let unit: [(u32, Duration, fn() -> Outcome); 6] = [
        (1, Duration::from_secs(1), c1),
        (2, Duration::from_secs(5), c2),
        (3, minutes(5), c3),
        (4, minutes(15), c4),
        (5, minutes(1), c5),
        (6, minutes(1), c6),
    ];
    for (k, limit, f) in unit {
        if run(k) {
            report(k, limit, &mut || f());
        }
    }
    if (7..=11).any(run) {
        let e = experiment(&root);
        // the shared pipeline run is charged inside each criterion's own budget
        let open = Duration::MAX;
        if run(7) {
            report(7, open, &mut || c7(&e));
        }
        if run(8) {
            report(8, open, &mut || c8(&e));
        }
        if run(9) {
            report(9, open, &mut || c9(&e));
        }
        if run(10) {
            report(10, open, &mut || c10(&e));
        }
        if run(11) {
            report(11, open, &mut || c11(&e, &root));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
