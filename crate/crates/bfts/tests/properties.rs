//! Property tests over randomized inputs.

use proptest::prelude::*;

use bfts::autodiff::{Matrix, Tape};
use bfts::graph::Graph;
use bfts::losses::{adversary_loss, merge_sensitive, MergeMode};
use bfts::metrics::{
    adversary_objective, delta_dp, f1, js_divergence, optimal_adversary, DiscreteDistPair,
};
use bfts::missingness::{exact_min_k_union, greedy_min_k_union, CoverageInstance};

fn arbitrary_graph() -> impl Strategy<Value = Graph> {
    (2usize..16)
        .prop_flat_map(|n| {
            let edges = prop::collection::vec((0..n, 0..n), 0..40);
            let labels = prop::collection::vec(0u8..2, n);
            let sensitive = prop::collection::vec(0u8..2, n);
            let observed = prop::collection::vec(any::<bool>(), n);
            (Just(n), edges, labels, sensitive, observed)
        })
        .prop_map(|(n, raw_edges, labels, sensitive, observed)| {
            let mut seen = std::collections::HashSet::new();
            let mut edges = Vec::new();
            for (u, v) in raw_edges {
                let (lo, hi) = if u < v { (u, v) } else { (v, u) };
                if lo != hi && seen.insert((lo, hi)) {
                    edges.push((lo, hi));
                }
            }
            Graph::new(
                n,
                edges,
                Matrix::zeros(n, 1),
                labels,
                sensitive,
                observed,
                vec![false; n],
                vec![false; n],
                vec![false; n],
            )
            .unwrap()
        })
}

fn dist_pair() -> impl Strategy<Value = DiscreteDistPair> {
    (2usize..6)
        .prop_flat_map(|bins| {
            (
                prop::collection::vec(0.0f64..1.0, bins),
                prop::collection::vec(0.0f64..1.0, bins),
            )
        })
        .prop_filter_map("need positive mass", |(mut a, mut b)| {
            for v in [&mut a, &mut b] {
                let total: f64 = v.iter().sum();
                if total < 1e-3 {
                    return None;
                }
                v.iter_mut().for_each(|x| *x /= total);
                let correction: f64 = 1.0 - v.iter().sum::<f64>();
                v[0] += correction;
            }
            DiscreteDistPair::new(a, b).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_matrix_is_symmetric_with_unit_entries(g in arbitrary_graph()) {
        let m = g.normalized_adjacency();
        for i in 0..g.n_nodes() {
            for j in 0..g.n_nodes() {
                let v = m.get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v.to_bits(), m.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn assortativity_stays_in_range(g in arbitrary_graph()) {
        if let Ok(r) = g.label_assortativity() {
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&r), "r = {}", r);
        }
    }

    #[test]
    fn merge_never_alters_observed_entries(
        g in arbitrary_graph(),
        raw in prop::collection::vec(0.0f64..1.0, 16),
    ) {
        prop_assume!(g.n_observed() > 0);
        let si: Vec<f64> = (0..g.n_nodes()).map(|v| raw[v % raw.len()]).collect();
        let mut tape = Tape::new();
        let si_id = tape.constant_column(&si);
        let merged = merge_sensitive(&mut tape, si_id, &g, MergeMode::Observed).unwrap();
        let values = tape.value(merged.id);
        for v in 0..g.n_nodes() {
            if g.observed_mask()[v] {
                prop_assert_eq!(values[v], g.sensitive()[v] as f64);
            } else {
                prop_assert_eq!(values[v], si[v]);
            }
        }
    }

    #[test]
    fn adversary_loss_never_positive(
        sa in prop::collection::vec(0.001f64..0.999, 2..20),
        shat in prop::collection::vec(0.0f64..1.0, 2..20),
    ) {
        let n = sa.len().min(shat.len());
        let (sa, shat) = (&sa[..n], &shat[..n]);
        let mut tape = Tape::new();
        let sa_id = tape.constant_column(sa);
        let shat_id = tape.constant_column(shat);
        if let Ok(loss) = adversary_loss(&mut tape, sa_id, shat_id, &vec![true; n]) {
            prop_assert!(tape.scalar_value(loss) <= 1e-12);
        }
    }

    #[test]
    fn delta_dp_is_group_relabel_invariant(
        yhat in prop::collection::vec(0u8..2, 4..20),
        s in prop::collection::vec(0u8..2, 4..20),
    ) {
        let n = yhat.len().min(s.len());
        let (yhat, s) = (&yhat[..n], &s[..n]);
        let mask = vec![true; n];
        let flipped: Vec<u8> = s.iter().map(|&v| 1 - v).collect();
        match (delta_dp(yhat, s, &mask), delta_dp(yhat, &flipped, &mask)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.to_bits(), b.to_bits());
                prop_assert!((0.0..=1.0).contains(&a));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one orientation errored"),
        }
    }

    #[test]
    fn f1_stays_in_unit_range(
        yhat in prop::collection::vec(0u8..2, 1..20),
        y in prop::collection::vec(0u8..2, 1..20),
    ) {
        let n = yhat.len().min(y.len());
        let v = f1(&yhat[..n], &y[..n], &vec![true; n]);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn js_divergence_symmetric_and_bounded(pair in dist_pair()) {
        let js = js_divergence(&pair);
        prop_assert!((0.0..=2.0f64.ln() + 1e-12).contains(&js));
        let swapped = DiscreteDistPair::new(pair.p0().to_vec(), pair.p1().to_vec()).unwrap();
        prop_assert!((js - js_divergence(&swapped)).abs() < 1e-12);
    }

    #[test]
    fn optimal_adversary_attains_the_closed_form(pair in dist_pair()) {
        let f = optimal_adversary(&pair);
        prop_assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let objective = adversary_objective(&pair, &f).unwrap();
        let closed = -(4.0f64.ln()) + 2.0 * js_divergence(&pair);
        prop_assert!((objective - closed).abs() <= 1e-10);
        // no other response does better on a few perturbations
        let mut worse = f.clone();
        for w in worse.iter_mut() {
            *w = (*w * 0.7 + 0.15).clamp(1e-6, 1.0 - 1e-6);
        }
        prop_assert!(adversary_objective(&pair, &worse).unwrap() <= objective + 1e-12);
    }

    #[test]
    fn greedy_union_never_beats_exact(
        sets in prop::collection::vec(prop::collection::vec(0usize..10, 0..6), 1..8),
        k in 1usize..4,
    ) {
        let sets: Vec<Vec<usize>> = sets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        let k = k.min(sets.len());
        let inst = CoverageInstance {
            sets,
            targets: (0..10).collect(),
        };
        let greedy = greedy_min_k_union(&inst, k);
        let exact = exact_min_k_union(&inst, k).unwrap();
        prop_assert!(greedy.union_size >= exact.union_size);
    }

    #[test]
    fn tape_replay_is_bitwise_stable(
        values in prop::collection::vec(-2.0f64..2.0, 9),
        weights in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let mut tape = Tape::new();
        let x = tape.param(&Matrix::from_vec(3, 3, values).unwrap());
        let w = tape.constant(&Matrix::from_vec(3, 3, weights).unwrap());
        let prod = tape.matmul(x, w).unwrap();
        let act = tape.sigmoid(prod).unwrap();
        let loss = tape.mean(act).unwrap();
        tape.backward(loss).unwrap();
        let g1 = tape.grad(x).unwrap().to_vec();
        let v1 = tape.scalar_value(loss);
        tape.recompute_forward();
        tape.zero_grads();
        tape.backward(loss).unwrap();
        prop_assert_eq!(tape.scalar_value(loss).to_bits(), v1.to_bits());
        let g2 = tape.grad(x).unwrap();
        for (a, b) in g1.iter().zip(g2) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
