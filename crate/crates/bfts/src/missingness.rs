//! Missingness-process generators for sensitive attributes.
//!
//! Three families: uniform (MCAR), a degree heuristic that leaves the
//! lowest-degree nodes unobserved, and a coverage-model adversary that
//! picks the observed set to minimize how many bias-relevant nodes are
//! covered within a hop radius (greedy, plus an exhaustive variant for
//! small instances).
//!
//! `k` always counts *observed* nodes: every generator returns a mask with
//! exactly `k` entries set.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingnessKind {
    Mcar,
    Degree,
    CoverageGreedy,
    CoverageExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub kind: MissingnessKind,
    /// Number of nodes retaining their sensitive value.
    pub k_observed: usize,
    pub seed: u64,
}

/// Dispatch on `spec.kind`. `radius` only affects the coverage variants.
pub fn generate_mask(g: &Graph, spec: &MissingnessSpec, radius: usize) -> Result<Vec<bool>> {
    let n = g.n_nodes();
    if spec.k_observed > n {
        return Err(Error::InvalidConfig(format!(
            "k_observed {} exceeds {} nodes",
            spec.k_observed, n
        )));
    }
    match spec.kind {
        MissingnessKind::Mcar => Ok(mcar_mask(n, spec.k_observed, spec.seed)),
        MissingnessKind::Degree => Ok(degree_adversary(g, spec.k_observed)),
        MissingnessKind::CoverageGreedy => {
            let inst = build_coverage_instance(g, radius);
            let picks = greedy_min_k_union(&inst, spec.k_observed);
            Ok(indices_to_mask(n, &picks.chosen))
        }
        MissingnessKind::CoverageExact => {
            let inst = build_coverage_instance(g, radius);
            let best = exact_min_k_union(&inst, spec.k_observed)?;
            Ok(indices_to_mask(n, &best.chosen))
        }
    }
}

fn indices_to_mask(n: usize, chosen: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &i in chosen {
        mask[i] = true;
    }
    mask
}

/// Missing completely at random: a uniformly random k-subset is observed.
pub fn mcar_mask(n: usize, k: usize, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, Stream::Mcar);
    order.shuffle(&mut rng);
    indices_to_mask(n, &order[..k.min(n)])
}

/// Keep the k highest-degree nodes observed; equivalently, make the n-k
/// lowest-degree nodes missing. Ties break toward lower node index being
/// unobserved first.
pub fn degree_adversary(g: &Graph, k: usize) -> Vec<bool> {
    let deg = g.degrees();
    let mut order: Vec<usize> = (0..g.n_nodes()).collect();
    order.sort_by_key(|&v| (deg[v], v));
    let n_missing = g.n_nodes() - k;
    let mut mask = vec![true; g.n_nodes()];
    for &v in order.iter().take(n_missing) {
        mask[v] = false;
    }
    mask
}

/// Coverage model for the adversary: one candidate set per node, holding
/// the bias-relevant targets within `radius` hops of it. Targets are the
/// nodes whose group/class combination carries the bias signal:
/// (s=0, y=1) and (s=1, y=0).
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInstance {
    /// Candidate sets, indexed by node; values are target indices.
    pub sets: Vec<Vec<usize>>,
    /// Node index of each target.
    pub targets: Vec<usize>,
}

impl CoverageInstance {
    pub fn n_items(&self) -> usize {
        self.targets.len()
    }
}

pub fn build_coverage_instance(g: &Graph, radius: usize) -> CoverageInstance {
    let targets: Vec<usize> = (0..g.n_nodes())
        .filter(|&v| {
            let (s, y) = (g.sensitive()[v], g.labels()[v]);
            (s == 0 && y == 1) || (s == 1 && y == 0)
        })
        .collect();
    let mut target_index = vec![usize::MAX; g.n_nodes()];
    for (i, &t) in targets.iter().enumerate() {
        target_index[t] = i;
    }

    let adj = g.adjacency_lists();
    let mut sets = Vec::with_capacity(g.n_nodes());
    let mut dist = vec![usize::MAX; g.n_nodes()];
    for v in 0..g.n_nodes() {
        // BFS truncated at `radius` hops; a node covers itself at hop 0.
        let mut covered = Vec::new();
        let mut touched = vec![v];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            if target_index[u] != usize::MAX {
                covered.push(target_index[u]);
            }
            if dist[u] == radius {
                continue;
            }
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    touched.push(w);
                    queue.push_back(w);
                }
            }
        }
        for t in touched {
            dist[t] = usize::MAX;
        }
        covered.sort_unstable();
        sets.push(covered);
    }
    CoverageInstance { sets, targets }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KUnionSolution {
    pub chosen: Vec<usize>,
    pub union_size: usize,
}

/// Greedy minimum k-union: k rounds, each picking the candidate set whose
/// union increase is smallest, ties to the lowest index.
pub fn greedy_min_k_union(inst: &CoverageInstance, k: usize) -> KUnionSolution {
    let k = k.min(inst.sets.len());
    let mut in_union = vec![false; inst.n_items()];
    let mut used = vec![false; inst.sets.len()];
    let mut chosen = Vec::with_capacity(k);
    let mut union_size = 0usize;
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None; // (increase, index)
        for (i, set) in inst.sets.iter().enumerate() {
            if used[i] {
                continue;
            }
            let increase = set.iter().filter(|&&t| !in_union[t]).count();
            if best.map_or(true, |(binc, _)| increase < binc) {
                best = Some((increase, i));
            }
        }
        let (increase, pick) = best.expect("k <= number of sets");
        used[pick] = true;
        chosen.push(pick);
        union_size += increase;
        for &t in &inst.sets[pick] {
            in_union[t] = true;
        }
    }
    KUnionSolution { chosen, union_size }
}

/// Exhaustive search over all k-subsets of candidate sets; refuses
/// instances with more than this many sets.
pub const EXACT_MAX_SETS: usize = 20;

/// Globally optimal minimum k-union with a witness. The witness is the
/// lexicographically first subset achieving the optimal union size.
pub fn exact_min_k_union(inst: &CoverageInstance, k: usize) -> Result<KUnionSolution> {
    let q = inst.sets.len();
    if q > EXACT_MAX_SETS {
        return Err(Error::TooLarge(format!(
            "{q} candidate sets exceeds exhaustive limit {EXACT_MAX_SETS}"
        )));
    }
    if k > q {
        return Err(Error::InvalidConfig(format!("k = {k} with only {q} sets")));
    }
    let mut best: Option<KUnionSolution> = None;
    let mut current = Vec::with_capacity(k);
    let mut counts = vec![0u32; inst.n_items()];
    fn recurse(
        inst: &CoverageInstance,
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        counts: &mut [u32],
        union_size: &mut usize,
        best: &mut Option<KUnionSolution>,
    ) {
        if current.len() == k {
            if best.as_ref().map_or(true, |b| *union_size < b.union_size) {
                *best = Some(KUnionSolution {
                    chosen: current.clone(),
                    union_size: *union_size,
                });
            }
            return;
        }
        let remaining = k - current.len();
        for i in start..=inst.sets.len() - remaining {
            let mut added = 0;
            for &t in &inst.sets[i] {
                if counts[t] == 0 {
                    added += 1;
                }
                counts[t] += 1;
            }
            *union_size += added;
            current.push(i);
            recurse(inst, k, i + 1, current, counts, union_size, best);
            current.pop();
            *union_size -= added;
            for &t in &inst.sets[i] {
                counts[t] -= 1;
            }
        }
    }
    let mut union_size = 0usize;
    recurse(inst, k, 0, &mut current, &mut counts, &mut union_size, &mut best);
    Ok(best.unwrap_or(KUnionSolution {
        chosen: vec![],
        union_size: 0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::graph::{generate_sbm, SbmConfig};

    fn tiny_graph(n: usize, edges: Vec<(usize, usize)>, labels: Vec<u8>, s: Vec<u8>) -> Graph {
        Graph::new(
            n,
            edges,
            Matrix::zeros(n, 1),
            labels,
            s,
            vec![true; n],
            vec![false; n],
            vec![false; n],
            vec![false; n],
        )
        .unwrap()
    }

    #[test]
    fn mcar_extremes() {
        assert_eq!(mcar_mask(5, 5, 0), vec![true; 5]);
        assert_eq!(mcar_mask(5, 0, 0), vec![false; 5]);
    }

    #[test]
    fn mcar_is_uniform_over_seeds() {
        let n = 20;
        let k = 5;
        let trials: u64 = 1000;
        let mut counts = vec![0usize; n];
        for seed in 0..trials {
            for (i, obs) in mcar_mask(n, k, 50_000 + seed).iter().enumerate() {
                if *obs {
                    counts[i] += 1;
                }
            }
        }
        let p = k as f64 / n as f64;
        let sigma = (p * (1.0 - p) * trials as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let expected = p * trials as f64;
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "node {i}: {c} observations vs {expected}"
            );
        }
    }

    #[test]
    fn degree_adversary_star_and_path() {
        let star = tiny_graph(
            5,
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            vec![0; 5],
            vec![0; 5],
        );
        assert_eq!(
            degree_adversary(&star, 1),
            vec![true, false, false, false, false]
        );

        // path 0-1-2-3, two missing: both degree-1 endpoints drop
        let path = tiny_graph(4, vec![(0, 1), (1, 2), (2, 3)], vec![0; 4], vec![0; 4]);
        assert_eq!(degree_adversary(&path, 2), vec![false, true, true, false]);
        assert_eq!(degree_adversary(&path, 4), vec![true; 4]);
    }

    #[test]
    fn degree_adversary_ignores_edge_order() {
        let a = tiny_graph(4, vec![(0, 1), (1, 2), (2, 3)], vec![0; 4], vec![0; 4]);
        let b = tiny_graph(4, vec![(2, 3), (0, 1), (1, 2)], vec![0; 4], vec![0; 4]);
        for k in 0..=4 {
            assert_eq!(degree_adversary(&a, k), degree_adversary(&b, k));
        }
    }

    #[test]
    fn all_generators_observe_exactly_k() {
        let g = generate_sbm(&SbmConfig {
            block_sizes: vec![10, 8],
            seed: 2,
            ..SbmConfig::default()
        })
        .unwrap();
        for k in [0, 3, 9, 18] {
            for kind in [
                MissingnessKind::Mcar,
                MissingnessKind::Degree,
                MissingnessKind::CoverageGreedy,
                MissingnessKind::CoverageExact,
            ] {
                let spec = MissingnessSpec {
                    kind,
                    k_observed: k,
                    seed: 4,
                };
                let mask = generate_mask(&g, &spec, 1).unwrap();
                assert_eq!(mask.iter().filter(|&&b| b).count(), k, "{kind:?} k={k}");
            }
        }
    }

    #[test]
    fn coverage_instance_radius_zero_and_complete() {
        // labels/s make nodes 0 (s=0,y=1) and 2 (s=1,y=0) targets
        let g = tiny_graph(
            3,
            vec![(0, 1), (0, 2), (1, 2)],
            vec![1, 1, 0],
            vec![0, 1, 1],
        );
        let inst0 = build_coverage_instance(&g, 0);
        assert_eq!(inst0.targets, vec![0, 2]);
        assert_eq!(inst0.sets, vec![vec![0], vec![], vec![1]]);

        let inst1 = build_coverage_instance(&g, 1);
        // complete graph at radius 1: every set covers all targets
        assert_eq!(inst1.sets, vec![vec![0, 1], vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn coverage_instance_on_path_matches_hand_bfs() {
        // path 0-1-2-3, targets at 0 (s=0,y=1) and 3 (s=1,y=0)
        let g = tiny_graph(
            4,
            vec![(0, 1), (1, 2), (2, 3)],
            vec![1, 0, 1, 0],
            vec![0, 0, 1, 1],
        );
        // targets: node0 (s0,y1) and node3 (s1,y0); node1 (s0,y0) and
        // node2 (s1,y1) are not targets
        let inst = build_coverage_instance(&g, 1);
        assert_eq!(inst.targets, vec![0, 3]);
        assert_eq!(inst.sets, vec![vec![0], vec![0], vec![1], vec![1]]);
        let inst2 = build_coverage_instance(&g, 2);
        assert_eq!(inst2.sets, vec![vec![0], vec![0, 1], vec![0, 1], vec![1]]);
    }

    fn inst_from_sets(sets: Vec<Vec<usize>>, n_items: usize) -> CoverageInstance {
        CoverageInstance {
            sets,
            targets: (0..n_items).collect(),
        }
    }

    #[test]
    fn greedy_prefers_smallest_increase_and_empty_sets() {
        let inst = inst_from_sets(vec![vec![0], vec![1], vec![2]], 3);
        let sol = greedy_min_k_union(&inst, 2);
        assert_eq!(sol.union_size, 2);
        assert_eq!(sol.chosen, vec![0, 1]); // index ties break low

        let inst = inst_from_sets(vec![vec![0, 1, 2], vec![], vec![0]], 3);
        let sol = greedy_min_k_union(&inst, 1);
        assert_eq!(sol.chosen, vec![1]);
        assert_eq!(sol.union_size, 0);
    }

    #[test]
    fn exact_extremes() {
        let inst = inst_from_sets(vec![vec![0, 1], vec![1, 2], vec![0]], 3);
        assert_eq!(exact_min_k_union(&inst, 0).unwrap().union_size, 0);
        assert_eq!(exact_min_k_union(&inst, 3).unwrap().union_size, 3);
        assert!(exact_min_k_union(&inst, 4).is_err());
    }

    #[test]
    fn exact_rejects_oversized_instances() {
        let inst = inst_from_sets(vec![vec![0]; EXACT_MAX_SETS + 1], 1);
        assert!(exact_min_k_union(&inst, 1).is_err());
    }

    #[test]
    fn greedy_never_beats_exact() {
        use rand::Rng;
        let mut rng = stream_rng(99, Stream::Mcar);
        for _ in 0..50 {
            let q = rng.random_range(3..=8);
            let items = rng.random_range(3..=10);
            let sets: Vec<Vec<usize>> = (0..q)
                .map(|_| (0..items).filter(|_| rng.random::<f64>() < 0.3).collect())
                .collect();
            let inst = inst_from_sets(sets, items);
            let k = rng.random_range(1..=q.min(4));
            let g = greedy_min_k_union(&inst, k);
            let e = exact_min_k_union(&inst, k).unwrap();
            assert!(g.union_size >= e.union_size);
        }
    }
}
