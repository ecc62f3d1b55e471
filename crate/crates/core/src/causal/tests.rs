use super::*;
use crate::dag::{cpdag_shd, is_acyclic, Adjacency, CausalDag};
use crate::data::FeatureMatrix;
use crate::matrix::Matrix;
use crate::nn::Tape;
use crate::seed;
use crate::synthcity::{feature_names, generate_features, ScmSpec};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn chain(n: usize) -> CausalDag {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    CausalDag::new(feature_names(n), Adjacency::from_edges(n, &edges).unwrap()).unwrap()
}

fn scm_data(dag: CausalDag, n: usize, seed: u64) -> FeatureMatrix {
    let spec = ScmSpec::random(dag, 1.0, seed).unwrap();
    generate_features(&spec, n, seed + 1).unwrap()
}

fn noise_data(n: usize, p: usize, seed: u64) -> FeatureMatrix {
    let mut rng = seed::rng(seed);
    let m = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    FeatureMatrix::complete(m, feature_names(p)).unwrap()
}

/// Plain least squares via normal equations with an intercept column.
fn rss_oracle(data: &FeatureMatrix, j: usize, parents: &[usize]) -> f64 {
    let n = data.n_regions();
    let k = parents.len() + 1;
    let x = nalgebra::DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { data.values.get(i, parents[c - 1]) });
    let y = nalgebra::DVector::from_fn(n, |i, _| data.values.get(i, j));
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
    (y - x * beta).norm_squared()
}

fn bic_oracle(data: &FeatureMatrix, adj: &Adjacency) -> f64 {
    let n = data.n_regions() as f64;
    (0..adj.n())
        .map(|j| {
            let ps = adj.parents(j);
            n * (rss_oracle(data, j, &ps) / n).ln() + ps.len() as f64 * n.ln()
        })
        .sum()
}

#[test]
fn bic_single_feature_is_log_variance() {
    let data = noise_data(200, 1, 3);
    let col = data.values.column(0);
    let m = col.iter().sum::<f64>() / 200.0;
    let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 200.0;
    let s = bic_score(&data, &Adjacency::empty(1)).unwrap();
    assert!((s.value - 200.0 * var.ln()).abs() < 1e-9);
    assert!(!s.rank_deficient);
}

#[test]
fn bic_matches_normal_equation_oracle() {
    let data = scm_data(chain(4), 300, 11);
    for adj in enumerate_dags(4).unwrap().iter().step_by(37) {
        let got = bic_score(&data, adj).unwrap().value;
        let want = bic_oracle(&data, adj);
        assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn bic_prefers_edge_for_copied_column() {
    let mut rng = seed::rng(5);
    for n in [10, 50] {
        let m = Matrix::from_fn(n, 2, |_, _| 0.0);
        let mut m = m;
        for i in 0..n {
            let v: f64 = rng.random::<f64>() * 4.0 - 2.0;
            m.set(i, 0, v);
            m.set(i, 1, v);
        }
        let data = FeatureMatrix::complete(m, feature_names(2)).unwrap();
        let edge = Adjacency::from_edges(2, &[(0, 1)]).unwrap();
        let with = bic_score(&data, &edge).unwrap().value;
        let without = bic_score(&data, &Adjacency::empty(2)).unwrap().value;
        assert!(with < without);
    }
}

#[test]
fn bic_flags_collinear_parents() {
    let mut data = noise_data(100, 3, 8);
    for i in 0..100 {
        let v = data.values.get(i, 0);
        data.values.set(i, 1, 2.0 * v);
    }
    let adj = Adjacency::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
    let s = bic_score(&data, &adj).unwrap();
    assert!(s.rank_deficient);
    assert!(s.value.is_finite());
}

#[test]
fn bic_rejects_cycles_and_bad_sizes() {
    let data = noise_data(50, 2, 1);
    let cyc = Adjacency::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
    assert!(bic_score(&data, &cyc).is_err());
    assert!(bic_score(&data, &Adjacency::empty(3)).is_err());
}

#[test]
fn chain_scores_below_every_non_equivalent_dag() {
    let truth = chain(3);
    let data = scm_data(truth.clone(), 1000, 21);
    let scorer = BicScorer::new(&data).unwrap();
    let t = scorer.score(truth.adjacency()).unwrap().value;
    for adj in enumerate_dags(3).unwrap() {
        if &adj == truth.adjacency() {
            continue;
        }
        let s = scorer.score(&adj).unwrap().value;
        if cpdag_shd(&adj, truth.adjacency()) == 0 {
            // Markov-equivalent graphs have the same free-variance BIC
            assert!((s - t).abs() < 1e-7 * t.abs());
        } else {
            assert!(t < s, "{adj:?}: {s} <= {t}");
        }
    }
}

#[test]
fn noise_data_prefers_empty_graph() {
    for seed in 0..3 {
        let data = noise_data(600, 3, 40 + seed);
        let scorer = BicScorer::new(&data).unwrap();
        let empty = scorer.score(&Adjacency::empty(3)).unwrap().value;
        for adj in enumerate_dags(3).unwrap().into_iter().filter(|a| a.edge_count() > 0) {
            assert!(empty < scorer.score(&adj).unwrap().value);
        }
    }
}

#[test]
fn penalty_is_zero_exactly_on_dags() {
    let slots = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];
    let mut count = 0;
    for mask in 0u32..512 {
        // all 9 bits, diagonal forced to zero, so each pattern is visited 8 times
        let mut adj = Adjacency::empty(3);
        for (b, &(i, j)) in slots.iter().enumerate() {
            adj.set(i, j, mask >> b & 1 == 1);
        }
        let pen = acyclicity_penalty(&adj);
        let acyclic = is_acyclic(&adj).unwrap();
        assert_eq!(pen == 0.0, acyclic, "{adj:?} penalty {pen}");
        assert!(pen >= 0.0);
        count += 1;
    }
    assert_eq!(count, 512);
}

#[test]
fn penalty_of_two_cycle_is_closed_form() {
    let adj = Adjacency::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
    let want = 2.0 * 1.0_f64.cosh() - 2.0;
    assert!((acyclicity_penalty(&adj) - want).abs() < 1e-9);
    assert_eq!(acyclicity_penalty(&Adjacency::empty(4)), 0.0);
    let tri = Adjacency::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
    assert_eq!(acyclicity_penalty(&tri), 0.0);
}

#[test]
fn forced_negative_logits_give_empty_action() {
    let logits = Matrix::filled(3, 3, f64::NEG_INFINITY);
    let (adj, lp) = sample_from_logits(&logits, &mut seed::rng(1));
    assert_eq!(adj.edge_count(), 0);
    assert_eq!(lp, 0.0);
}

#[test]
fn sample_action_is_deterministic_and_logprob_recomputes() {
    let data = noise_data(100, 4, 2);
    let params = PolicyParams::new(4, PolicyConfig::default(), 9);
    let a = sample_action(&params, &data, 77);
    let b = sample_action(&params, &data, 77);
    assert_eq!(a, b);
    let logits = params.logit_matrix(&feature_tokens(&data, 16));
    let mut lp = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                let pr = 1.0 / (1.0 + (-logits.get(i, j)).exp());
                lp += if a.0.has(i, j) { pr.ln() } else { (1.0 - pr).ln() };
            }
        }
    }
    assert!((lp - a.1).abs() < 1e-9);
    assert!((log_prob(&logits, &a.0) - a.1).abs() < 1e-12);
}

#[test]
fn prune_leaves_dags_alone_and_breaks_cycles() {
    let data = scm_data(chain(3), 500, 4);
    let dag = chain(3);
    assert_eq!(prune_to_dag(dag.adjacency(), &data).unwrap(), dag);

    let two = Adjacency::from_edges(3, &[(0, 1), (1, 0)]).unwrap();
    let pruned = prune_to_dag(&two, &data).unwrap();
    assert_eq!(pruned.edge_count(), 1);

    let tri = Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
    let pruned = prune_to_dag(&tri, &data).unwrap();
    // oracle: remove whichever single edge leaves the lowest BIC
    let best = [(0, 1), (1, 2), (2, 0)]
        .iter()
        .map(|&drop| {
            let keep: Vec<_> = [(0, 1), (1, 2), (2, 0)].into_iter().filter(|&e| e != drop).collect();
            let adj = Adjacency::from_edges(3, &keep).unwrap();
            (bic_oracle(&data, &adj), adj)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert_eq!(pruned.adjacency(), &best.1);
    assert!(!pruned.adjacency().has(2, 0));
}

#[test]
fn enumeration_counts_match_known_sequence() {
    assert_eq!(enumerate_dags(1).unwrap().len(), 1);
    assert_eq!(enumerate_dags(2).unwrap().len(), 3);
    assert_eq!(enumerate_dags(3).unwrap().len(), 25);
    assert_eq!(enumerate_dags(4).unwrap().len(), 543);
    assert!(exact_dag_search(&noise_data(50, 5, 0)).is_err());
}

#[test]
fn exact_search_finds_empty_graph_on_noise() {
    let data = noise_data(2000, 3, 12);
    assert_eq!(exact_dag_search(&data).unwrap().edge_count(), 0);
}

#[test]
fn exact_search_recovers_chain_equivalence_class() {
    let truth = chain(3);
    let data = scm_data(truth.clone(), 1000, 31);
    let found = exact_dag_search(&data).unwrap();
    assert_eq!(cpdag_shd(found.adjacency(), truth.adjacency()), 0);
    // representative: fewest edges, then lexicographically smallest
    let scorer = BicScorer::new(&data).unwrap();
    let fs = scorer.score(found.adjacency()).unwrap().value;
    for adj in enumerate_dags(3).unwrap() {
        let s = scorer.score(&adj).unwrap().value;
        assert!(s >= fs - 1e-9 * fs.abs());
    }
}

#[test]
fn single_feature_discovery_is_empty() {
    let data = noise_data(30, 1, 0);
    let out = train_causal_discovery(&data, &CausalSearchConfig::default()).unwrap();
    assert_eq!(out.dag.edge_count(), 0);
    assert!(out.reward_curve.is_empty());
}

#[test]
fn episode_reward_is_negative_bic_minus_penalty() {
    let data = noise_data(100, 3, 6);
    let scorer = BicScorer::new(&data).unwrap();
    let cyc = Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
    let (bic, pen, pruned) = penalized_reward(&cyc, &scorer, 10.0);
    assert!(is_acyclic(&pruned).unwrap());
    assert!((pen - 10.0 * acyclicity_penalty(&cyc)).abs() < 1e-12);
    assert_eq!(bic, scorer.score(&pruned).unwrap().value);
}

#[test]
fn discovery_matches_exact_search_on_three_node_chain() {
    let truth = chain(3);
    let data = scm_data(truth, 1000, 51);
    let config = CausalSearchConfig {
        n_episodes: 300,
        seed: 3,
        ..Default::default()
    };
    let out = train_causal_discovery(&data, &config).unwrap();
    assert!(is_acyclic(out.dag.adjacency()).unwrap());
    assert_eq!(out.reward_curve.len(), 300);
    assert_eq!(out.dag, exact_dag_search(&data).unwrap());
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let data = scm_data(chain(2), 200, 13);
    let config = PolicyConfig {
        embed_dim: 4,
        n_heads: 2,
        n_layers: 1,
        n_anchors: 2,
        init_edge_logit: 0.0,
    };
    let mut policy = PolicyParams::new(2, config, 5);
    let tokens = feature_tokens(&data, 2);
    let logits = policy.logit_matrix(&tokens);
    let mut rng = seed::rng(8);
    let samples: Vec<Adjacency> = (0..6).map(|_| sample_from_logits(&logits, &mut rng).0).collect();
    let advantages = [1.5, -0.3, 2.0, -1.1, 0.4, -0.7];

    // oracle objective: batch mean of advantage · logprob, recomputed from scratch
    let objective = |policy: &PolicyParams| {
        let l = policy.logit_matrix(&tokens);
        samples.iter().zip(&advantages).map(|(s, a)| a * log_prob(&l, s)).sum::<f64>() / samples.len() as f64
    };

    let tape = Tape::new();
    let bound = policy.params.bind(&tape);
    let out = surrogate(&tape, policy.logits(&tape, &bound, &tokens), &samples, &advantages);
    assert!((out.scalar_value() - objective(&policy)).abs() < 1e-10);
    let grads = bound.grads(&tape.backward(out));

    let h = 1e-6;
    let mut checked = 0;
    for (k, g) in grads.iter().enumerate() {
        for idx in 0..g.as_slice().len() {
            let orig = policy.params.values()[k].as_slice()[idx];
            policy.params.values_mut()[k].as_mut_slice()[idx] = orig + h;
            let up = objective(&policy);
            policy.params.values_mut()[k].as_mut_slice()[idx] = orig - h;
            let down = objective(&policy);
            policy.params.values_mut()[k].as_mut_slice()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.as_slice()[idx];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-3, "param {k}[{idx}]: fd {fd} vs {an}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn refinement_never_worsens_and_stays_acyclic() {
    let truth = chain(5);
    let data = scm_data(truth.clone(), 800, 61);
    let scorer = BicScorer::new(&data).unwrap();
    let start = Adjacency::from_edges(5, &[(4, 0), (0, 2)]).unwrap();
    let out = refine::hill_climb(&start, &scorer, 100);
    assert!(is_acyclic(&out).unwrap());
    assert!(scorer.score(&out).unwrap().value <= scorer.score(&start).unwrap().value);
    let from_empty = refine::hill_climb(&Adjacency::empty(5), &scorer, 100);
    assert_eq!(cpdag_shd(&from_empty, truth.adjacency()), 0);
}

#[test]
fn topological_order_respects_every_edge() {
    let adj = Adjacency::from_edges(5, &[(3, 1), (1, 0), (4, 0), (3, 2)]).unwrap();
    let order = refine::topological_order(&adj);
    let pos: Vec<usize> = (0..5).map(|j| order.iter().position(|&v| v == j).unwrap()).collect();
    for (i, j) in adj.edges() {
        assert!(pos[i] < pos[j]);
    }
    assert_eq!(order, vec![3, 1, 2, 4, 0]);
}

#[test]
fn order_refinement_scores_no_worse_than_the_plain_climb() {
    let truth = chain(5);
    let data = scm_data(truth.clone(), 800, 61);
    let scorer = BicScorer::new(&data).unwrap();
    let start = Adjacency::from_edges(5, &[(4, 0), (0, 2), (2, 1)]).unwrap();
    let climb = refine::hill_climb(&start, &scorer, 100);
    let out = refine::refine(&start, &scorer, 100);
    assert!(is_acyclic(&out).unwrap());
    assert!(scorer.score(&out).unwrap().value <= scorer.score(&climb).unwrap().value + 1e-9);
    assert_eq!(cpdag_shd(&out, truth.adjacency()), 0);
}

#[test]
fn order_search_under_the_true_order_recovers_the_graph() {
    let truth = chain(6);
    let data = scm_data(truth.clone(), 2000, 5);
    let scorer = BicScorer::new(&data).unwrap();
    let mut search = refine::OrderSearch::new(&scorer);
    let dag = search.dag(&refine::topological_order(truth.adjacency()));
    assert_eq!(&dag, truth.adjacency());
}
