//! Property tests for graph algorithms, numerics and corpus handling.

use std::collections::{BTreeSet, VecDeque};

use aggcn::data::{generate_synthetic, read_corpus, split, write_corpus, SyntheticSpec};
use aggcn::depgraph::{dependency_path, prune_tree, restrict_graph, DependencyGraph, Pruning, Span};
use aggcn::numerics::{Matrix, Rng, Tape};
use proptest::prelude::*;

/// Parent array of a random rooted tree: node i > 0 hangs off an earlier node.
fn tree_strategy(max_n: usize) -> impl Strategy<Value = Vec<Option<usize>>> {
    (2..=max_n).prop_flat_map(|n| {
        (1..n)
            .map(|i| 0..i)
            .collect::<Vec<_>>()
            .prop_map(|ps| std::iter::once(None).chain(ps.into_iter().map(Some)).collect())
    })
}

fn graph(heads: Vec<Option<usize>>) -> DependencyGraph {
    let n = heads.len();
    DependencyGraph::new((0..n).map(|i| format!("w{i}")).collect(), heads, None, vec![0..n]).unwrap()
}

fn bfs(heads: &[Option<usize>], src: usize) -> Vec<usize> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (v, p) in heads.iter().enumerate() {
        if let Some(p) = *p {
            adj[v].push(p);
            adj[p].push(v);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn path_matches_bfs(heads in tree_strategy(12), a in 0usize..12, b in 0usize..12) {
        let n = heads.len();
        let (a, b) = (a % n, b % n);
        let g = graph(heads.clone());
        let path = dependency_path(&g, a, b).unwrap();
        prop_assert_eq!(path.len(), bfs(&heads, a)[b] + 1);
        prop_assert_eq!(path[0], a);
        prop_assert_eq!(*path.last().unwrap(), b);
        for w in path.windows(2) {
            prop_assert!(heads[w[0]] == Some(w[1]) || heads[w[1]] == Some(w[0]));
        }
    }

    #[test]
    fn adjacency_symmetric_unit_diagonal(heads in tree_strategy(12)) {
        let adj = graph(heads).build_adjacency();
        prop_assert!(adj.is_symmetric());
        let m = adj.matrix();
        for i in 0..m.rows() {
            prop_assert_eq!(m[(i, i)], 1.0);
        }
    }

    #[test]
    fn pruning_is_monotone_and_keeps_path(heads in tree_strategy(12), a in 0usize..12, b in 0usize..12) {
        let n = heads.len();
        let (a, b) = (a % n, b % n);
        let g = graph(heads);
        let spans = [Span::single(a), Span::single(b)];
        let path: BTreeSet<usize> = dependency_path(&g, a, b).unwrap().into_iter().collect();
        let mut prev = prune_tree(&g, &spans, Pruning::K(0)).unwrap();
        prop_assert_eq!(&prev, &path);
        for k in 1..=n {
            let next = prune_tree(&g, &spans, Pruning::K(k)).unwrap();
            prop_assert!(prev.is_subset(&next));
            prev = next;
        }
        let full = prune_tree(&g, &spans, Pruning::Full).unwrap();
        prop_assert!(prev.is_subset(&full));
        prop_assert_eq!(full.len(), n);
    }

    #[test]
    fn pruned_graph_stays_a_tree(heads in tree_strategy(12), a in 0usize..12, b in 0usize..12, k in 0usize..4) {
        let n = heads.len();
        let (a, b) = (a % n, b % n);
        let g = graph(heads);
        let keep = prune_tree(&g, &[Span::single(a), Span::single(b)], Pruning::K(k)).unwrap();
        let r = restrict_graph(&g, &keep).unwrap();
        prop_assert_eq!(r.graph.len(), keep.len());
        prop_assert_eq!(r.graph.edges().len(), keep.len() - 1);
        prop_assert_eq!(r.graph.roots().len(), 1);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..6,
        cols in 1usize..6,
        scale in 0.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let data = (0..rows * cols).map(|_| scale * rng.uniform(-1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(rows, cols, data).unwrap());
        let s = tape.softmax_rows(x).unwrap();
        for sum in tape.value(s).row_sums() {
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
        prop_assert!(tape.value(s).as_slice().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corpus_write_read_round_trip(seed in any::<u64>(), distance in 0usize..3) {
        let corpus = generate_synthetic(&SyntheticSpec {
            n_instances: 15,
            off_path_distance: distance,
            seed,
            ..Default::default()
        })
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&corpus, file.path()).unwrap();
        let back = read_corpus(file.path()).unwrap();
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn split_partitions_instances(seed in any::<u64>(), n in 1usize..40, f in 0.0f64..1.0) {
        let corpus = generate_synthetic(&SyntheticSpec { n_instances: n, seed, ..Default::default() }).unwrap();
        let dev = (1.0 - f) / 2.0;
        let (a, b, c) = split(&corpus, [f, dev, 1.0 - f - dev], &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), n);
        let ids: BTreeSet<&str> = a.instances.iter().chain(&b.instances).chain(&c.instances)
            .map(|i| i.id.as_str())
            .collect();
        prop_assert_eq!(ids.len(), n);
    }

    #[test]
    fn synthetic_cue_distance_holds(seed in any::<u64>(), distance in 0usize..3) {
        let corpus = generate_synthetic(&SyntheticSpec {
            n_instances: 10,
            off_path_distance: distance,
            seed,
            ..Default::default()
        })
        .unwrap();
        for inst in &corpus.instances {
            let heads = inst.graph.heads().to_vec();
            let path = dependency_path(&inst.graph, inst.entities[0].start, inst.entities[1].start).unwrap();
            let cue = inst.graph.tokens().iter().position(|t| t.starts_with("cue")).unwrap();
            let d = bfs(&heads, cue);
            prop_assert_eq!(path.iter().map(|&p| d[p]).min().unwrap(), distance);
        }
    }
}
