//! Dependency trees, their adjacency matrices, and path-centric hard pruning.
//!
//! Node indices are 0-based throughout this module. The 1-based
//! `0 = root` convention of corpus files is handled at the boundary by
//! [`DependencyGraph::from_conll`].

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Half-open token range `start..end`, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn single(i: usize) -> Self {
        Span { start: i, end: i + 1 }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }

    pub fn tokens(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependencyGraph {
    tokens: Vec<String>,
    heads: Vec<Option<usize>>,
    deprels: Option<Vec<String>>,
    sentences: Vec<Range<usize>>,
    roots_linked: bool,
}

impl DependencyGraph {
    /// Validated constructor. Each sentence range must contain exactly one
    /// root, every head must stay inside its sentence, and heads must be acyclic.
    pub fn new(
        tokens: Vec<String>,
        heads: Vec<Option<usize>>,
        deprels: Option<Vec<String>>,
        sentences: Vec<Range<usize>>,
    ) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::structure("graph has no tokens"));
        }
        if heads.len() != n {
            return Err(Error::structure(format!(
                "{} heads for {} tokens",
                heads.len(),
                n
            )));
        }
        if let Some(rels) = &deprels {
            if rels.len() != n {
                return Err(Error::structure(format!(
                    "{} deprels for {} tokens",
                    rels.len(),
                    n
                )));
            }
        }
        let mut expected_start = 0;
        for s in &sentences {
            if s.start != expected_start || s.end <= s.start || s.end > n {
                return Err(Error::structure(format!(
                    "sentence bounds {sentences:?} do not partition 0..{n}"
                )));
            }
            expected_start = s.end;
        }
        if expected_start != n {
            return Err(Error::structure(format!(
                "sentence bounds {sentences:?} do not partition 0..{n}"
            )));
        }
        for (k, s) in sentences.iter().enumerate() {
            let roots: Vec<usize> = s.clone().filter(|&i| heads[i].is_none()).collect();
            if roots.len() != 1 {
                return Err(Error::structure(format!(
                    "sentence {k} has {} roots",
                    roots.len()
                )));
            }
            for i in s.clone() {
                if let Some(h) = heads[i] {
                    if !s.contains(&h) {
                        return Err(Error::structure(format!(
                            "head {h} of token {i} lies outside sentence {k}"
                        )));
                    }
                    if h == i {
                        return Err(Error::structure(format!("token {i} heads itself")));
                    }
                }
            }
        }
        let g = DependencyGraph {
            tokens,
            heads,
            deprels,
            sentences,
            roots_linked: false,
        };
        g.check_acyclic()?;
        Ok(g)
    }

    /// Builds a graph from corpus conventions: 1-based heads with `0` as root,
    /// and 1-based inclusive `(start, end)` sentence bounds. Empty bounds mean
    /// a single sentence.
    pub fn from_conll(
        tokens: Vec<String>,
        heads: &[usize],
        deprels: Option<Vec<String>>,
        sent_bounds: &[(usize, usize)],
    ) -> Result<Self> {
        let n = tokens.len();
        let mut hs = Vec::with_capacity(heads.len());
        for (i, &h) in heads.iter().enumerate() {
            if h > n {
                return Err(Error::structure(format!(
                    "head {h} of token {} out of range 0..={n}",
                    i + 1
                )));
            }
            hs.push(h.checked_sub(1));
        }
        let sentences = if sent_bounds.is_empty() {
            vec![0..n]
        } else {
            sent_bounds
                .iter()
                .map(|&(s, e)| {
                    if s == 0 || e < s {
                        Err(Error::structure(format!("invalid sentence bound [{s}, {e}]")))
                    } else {
                        Ok(s - 1..e)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        };
        Self::new(tokens, hs, deprels, sentences)
    }

    /// Single-sentence shorthand for tests and literals.
    pub fn single_sentence(tokens: &[&str], conll_heads: &[usize]) -> Result<Self> {
        Self::from_conll(
            tokens.iter().map(|s| s.to_string()).collect(),
            conll_heads,
            None,
            &[],
        )
    }

    fn check_acyclic(&self) -> Result<()> {
        let n = self.len();
        // 0 = unvisited, 1 = on current walk, 2 = known to reach a root
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut walk = Vec::new();
            let mut v = start;
            loop {
                match state[v] {
                    2 => break,
                    1 => {
                        return Err(Error::structure(format!(
                            "cyclic heads through token {}",
                            v + 1
                        )))
                    }
                    _ => {}
                }
                state[v] = 1;
                walk.push(v);
                match self.heads[v] {
                    Some(h) => v = h,
                    None => break,
                }
            }
            for w in walk {
                state[w] = 2;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn deprels(&self) -> Option<&[String]> {
        self.deprels.as_deref()
    }

    pub fn sentences(&self) -> &[Range<usize>] {
        &self.sentences
    }

    pub fn roots_linked(&self) -> bool {
        self.roots_linked
    }

    /// Heads in corpus convention (1-based, 0 = root).
    pub fn conll_heads(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.map_or(0, |h| h + 1)).collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.heads[i].is_none()).collect()
    }

    /// Undirected edge list as `(dependent, head)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|h| (i, h)))
            .collect()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (d, h) in self.edges() {
            adj[d].push(h);
            adj[h].push(d);
        }
        adj
    }

    /// Joins consecutive sentences by making each sentence root a dependent
    /// of the previous sentence's root. The first sentence root becomes the
    /// root of the whole tree.
    pub fn link_sentence_roots(&self) -> DependencyGraph {
        let mut g = self.clone();
        if self.roots_linked || self.sentences.len() <= 1 {
            return g;
        }
        let roots: Vec<usize> = self
            .sentences
            .iter()
            .map(|s| {
                s.clone()
                    .find(|&i| self.heads[i].is_none())
                    .expect("validated: one root per sentence")
            })
            .collect();
        for w in roots.windows(2) {
            g.heads[w[1]] = Some(w[0]);
        }
        g.roots_linked = true;
        g
    }

    /// Symmetric 0/1 adjacency with self-loops: `A[i][j] = A[j][i] = 1` per arc.
    pub fn build_adjacency(&self) -> AdjMatrix {
        let n = self.len();
        let mut m = Matrix::identity(n);
        for (d, h) in self.edges() {
            m[(d, h)] = 1.0;
            m[(h, d)] = 1.0;
        }
        AdjMatrix(m)
    }

    fn rooted(&self) -> RootedTree {
        RootedTree::new(&self.link_sentence_roots())
    }

    /// Syntactic head of a span: the token whose head lies outside the span,
    /// leftmost on ties.
    pub fn span_head(&self, span: Span) -> Result<usize> {
        self.check_span(span)?;
        let linked = self.link_sentence_roots();
        Ok(span
            .tokens()
            .find(|&i| linked.heads[i].is_none_or(|h| !span.contains(h)))
            .expect("a tree span always has a token headed outside it"))
    }

    fn check_span(&self, span: Span) -> Result<()> {
        if span.is_empty() || span.end > self.len() {
            return Err(Error::contract(format!(
                "span {}..{} invalid for {} tokens",
                span.start,
                span.end,
                self.len()
            )));
        }
        Ok(())
    }
}

/// Square matrix used as graph structure in the convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjMatrix(Matrix);

impl AdjMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Shape {
                op: "adjacency",
                left: m.shape(),
                right: (m.rows(), m.rows()),
            });
        }
        Ok(AdjMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| self.0[(i, j)] == self.0[(j, i)]))
    }
}

struct RootedTree {
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl RootedTree {
    fn new(g: &DependencyGraph) -> Self {
        let n = g.len();
        let mut depth = vec![usize::MAX; n];
        for start in 0..n {
            let mut chain = Vec::new();
            let mut v = start;
            while depth[v] == usize::MAX {
                chain.push(v);
                match g.heads[v] {
                    Some(h) => v = h,
                    None => {
                        depth[v] = 0;
                        chain.pop();
                        break;
                    }
                }
            }
            let mut d = depth[v];
            for &w in chain.iter().rev() {
                d += 1;
                depth[w] = d;
            }
        }
        RootedTree {
            parent: g.heads.clone(),
            depth,
        }
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }

    fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let top = self.lca(a, b);
        let mut up = Vec::new();
        let mut v = a;
        while v != top {
            up.push(v);
            v = self.parent[v].unwrap();
        }
        up.push(top);
        let mut down = Vec::new();
        let mut v = b;
        while v != top {
            down.push(v);
            v = self.parent[v].unwrap();
        }
        up.extend(down.into_iter().rev());
        up
    }

    fn is_ancestor(&self, anc: usize, mut v: usize) -> bool {
        while self.depth[v] > self.depth[anc] {
            v = self.parent[v].unwrap();
        }
        v == anc
    }
}

fn check_nodes(g: &DependencyGraph, nodes: &[usize]) -> Result<()> {
    if let Some(&bad) = nodes.iter().find(|&&v| v >= g.len()) {
        return Err(Error::contract(format!(
            "node {bad} out of range for {} tokens",
            g.len()
        )));
    }
    Ok(())
}

/// Lowest common ancestor of a node set in the root-linked tree.
pub fn lca(g: &DependencyGraph, nodes: &[usize]) -> Result<usize> {
    let Some((&first, rest)) = nodes.split_first() else {
        return Err(Error::contract("lca of an empty node set"));
    };
    check_nodes(g, nodes)?;
    let tree = g.rooted();
    Ok(rest.iter().fold(first, |acc, &v| tree.lca(acc, v)))
}

/// The unique tree path `a → lca(a, b) → b`, endpoints inclusive.
pub fn dependency_path(g: &DependencyGraph, a: usize, b: usize) -> Result<Vec<usize>> {
    check_nodes(g, &[a, b])?;
    Ok(g.rooted().path(a, b))
}

/// Hard-pruning mode: the whole tree, or tokens within distance `K` of the
/// entity paths inside the LCA subtree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pruning {
    Full,
    K(usize),
}

impl fmt::Display for Pruning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pruning::Full => write!(f, "full"),
            Pruning::K(k) => write!(f, "k{k}"),
        }
    }
}

impl FromStr for Pruning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "full" {
            return Ok(Pruning::Full);
        }
        lower
            .strip_prefix('k')
            .and_then(|k| k.parse().ok())
            .map(Pruning::K)
            .ok_or_else(|| Error::Config(format!("invalid pruning mode '{s}' (expected full, k0, k1, ...)")))
    }
}

/// Tokens kept by path-centric pruning.
///
/// The base set is the union of pairwise paths between entity span heads,
/// plus the paths tying every span token to its span head. Tokens of the LCA
/// subtree within tree distance `k` of the base set are kept, along with all
/// entity tokens.
pub fn prune_tree(g: &DependencyGraph, entities: &[Span], k: Pruning) -> Result<BTreeSet<usize>> {
    if entities.is_empty() {
        return Err(Error::contract("prune_tree needs at least one entity"));
    }
    let heads = entities
        .iter()
        .map(|&s| g.span_head(s))
        .collect::<Result<Vec<_>>>()?;
    let k = match k {
        Pruning::Full => return Ok((0..g.len()).collect()),
        Pruning::K(k) => k,
    };
    let linked = g.link_sentence_roots();
    let tree = RootedTree::new(&linked);

    let mut base = BTreeSet::new();
    for (i, &a) in heads.iter().enumerate() {
        base.insert(a);
        for &b in &heads[i + 1..] {
            base.extend(tree.path(a, b));
        }
    }
    for (span, &h) in entities.iter().zip(&heads) {
        for t in span.tokens() {
            base.extend(tree.path(t, h));
        }
    }
    let top = heads[1..].iter().fold(heads[0], |acc, &v| tree.lca(acc, v));

    let adj = linked.neighbors();
    let mut dist = vec![usize::MAX; g.len()];
    let mut queue = VecDeque::new();
    for &v in &base {
        dist[v] = 0;
        queue.push_back(v);
    }
    let mut keep = base.clone();
    while let Some(v) = queue.pop_front() {
        if dist[v] == k {
            continue;
        }
        for &w in &adj[v] {
            if dist[w] == usize::MAX && tree.is_ancestor(top, w) {
                dist[w] = dist[v] + 1;
                keep.insert(w);
                queue.push_back(w);
            }
        }
    }
    Ok(keep)
}

/// A graph restricted to a node subset, with the old → new index map.
#[derive(Clone, Debug)]
pub struct Restricted {
    pub graph: DependencyGraph,
    pub index_map: Vec<Option<usize>>,
}

impl Restricted {
    /// Re-expresses a span in the restricted numbering; every span token must be kept.
    pub fn map_span(&self, span: Span) -> Result<Span> {
        let mut mapped = Vec::with_capacity(span.len());
        for t in span.tokens() {
            match self.index_map.get(t).copied().flatten() {
                Some(n) => mapped.push(n),
                None => {
                    return Err(Error::contract(format!(
                        "entity token {t} was dropped by the keep set"
                    )))
                }
            }
        }
        // Kept tokens preserve order, so a contiguous span stays contiguous.
        Ok(Span::new(mapped[0], mapped[mapped.len() - 1] + 1))
    }
}

/// Induced subgraph on `keep`, renumbered in original token order.
///
/// The kept nodes must induce a connected subtree; the highest kept node
/// becomes the single root of the result.
pub fn restrict_graph(g: &DependencyGraph, keep: &BTreeSet<usize>) -> Result<Restricted> {
    if keep.is_empty() {
        return Err(Error::contract("restrict_graph with an empty keep set"));
    }
    check_nodes(g, &keep.iter().copied().collect::<Vec<_>>())?;
    let linked = g.link_sentence_roots();
    let mut index_map = vec![None; g.len()];
    for (new, &old) in keep.iter().enumerate() {
        index_map[old] = Some(new);
    }
    let mut tokens = Vec::with_capacity(keep.len());
    let mut heads = Vec::with_capacity(keep.len());
    let mut rels = linked.deprels.as_ref().map(|_| Vec::with_capacity(keep.len()));
    for &old in keep {
        tokens.push(linked.tokens[old].clone());
        heads.push(linked.heads[old].and_then(|h| index_map[h]));
        if let (Some(out), Some(src)) = (rels.as_mut(), linked.deprels.as_ref()) {
            out.push(src[old].clone());
        }
    }
    let roots = heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(Error::contract(format!(
            "keep set induces {roots} disconnected components"
        )));
    }
    let n = tokens.len();
    let graph = DependencyGraph::new(tokens, heads, rels, vec![0..n])?;
    Ok(Restricted { graph, index_map })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> DependencyGraph {
        let toks: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let heads: Vec<usize> = (0..n).collect(); // token i+1 headed by token i (1-based)
        DependencyGraph::from_conll(toks, &heads, None, &[]).unwrap()
    }

    /// Two sentences modelled on the cross-sentence drug/gene/mutation example.
    fn two_sentence_example() -> (DependencyGraph, [usize; 3]) {
        let s1 = "The deletion mutation on exon-19 of EGFR gene was present in 16 patients , while the L858E point mutation on exon-21 was noted in 10 .";
        let s2 = "All patients were treated with gefitinib and showed a partial response .";
        let tokens: Vec<String> = s1
            .split(' ')
            .chain(s2.split(' '))
            .map(String::from)
            .collect();
        let heads = [
            3, 3, 10, 5, 3, 8, 8, 5, 10, 0, 13, 13, 10, 10, 23, 19, 19, 19, 23, 21, 19, 23, 10, 25,
            23, 10, // sentence 1
            28, 30, 30, 0, 32, 30, 34, 30, 37, 37, 34, 30, // sentence 2
        ];
        let g = DependencyGraph::from_conll(tokens, &heads, None, &[(1, 26), (27, 38)]).unwrap();
        let idx = |w: &str| g.tokens().iter().position(|t| t == w).unwrap();
        let ents = [idx("EGFR"), idx("L858E"), idx("gefitinib")];
        (g, ents)
    }

    #[test]
    fn adjacency_examples() {
        let one = DependencyGraph::single_sentence(&["a"], &[0]).unwrap();
        assert_eq!(one.build_adjacency().matrix(), &Matrix::from_rows(&[[1.0]]));

        let two = DependencyGraph::single_sentence(&["a", "b"], &[0, 1]).unwrap();
        assert_eq!(
            two.build_adjacency().matrix(),
            &Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]])
        );

        let c = chain(3).build_adjacency();
        // edge enumeration: arcs (2→1), (3→2) plus self-loops
        let mut expected = Matrix::identity(3);
        for (a, b) in [(0, 1), (1, 2)] {
            expected[(a, b)] = 1.0;
            expected[(b, a)] = 1.0;
        }
        assert_eq!(c.matrix(), &expected);
        assert_eq!(c.matrix()[(0, 2)], 0.0);
        assert!(c.is_symmetric());
    }

    #[test]
    fn validation_errors() {
        let cyc = DependencyGraph::single_sentence(&["a", "b"], &[2, 1]);
        assert!(matches!(cyc, Err(Error::Structure(_))));
        let two_roots = DependencyGraph::single_sentence(&["a", "b"], &[0, 0]);
        assert!(matches!(two_roots, Err(Error::Structure(_))));
        let out_of_range = DependencyGraph::single_sentence(&["a", "b"], &[0, 3]);
        assert!(matches!(out_of_range, Err(Error::Structure(_))));
        let crossing = DependencyGraph::from_conll(
            vec!["a".into(), "b".into()],
            &[0, 1],
            None,
            &[(1, 1), (2, 2)],
        );
        assert!(matches!(crossing, Err(Error::Structure(_))));
    }

    #[test]
    fn linking_single_sentence_is_identity() {
        let g = chain(4);
        assert_eq!(g.link_sentence_roots(), g);
    }

    #[test]
    fn linking_adds_one_edge_between_roots() {
        let g = DependencyGraph::from_conll(
            ["a", "b", "c", "d"].map(String::from).to_vec(),
            &[0, 1, 0, 3],
            None,
            &[(1, 2), (3, 4)],
        )
        .unwrap();
        assert_eq!(g.edges().len(), 2);
        let l = g.link_sentence_roots();
        let mut new_edges: Vec<_> = l.edges();
        new_edges.retain(|e| !g.edges().contains(e));
        assert_eq!(new_edges, vec![(2, 0)]);
        assert_eq!(l.roots(), vec![0]);
    }

    #[test]
    fn lca_examples() {
        let star = DependencyGraph::single_sentence(&["r", "a", "b"], &[0, 1, 1]).unwrap();
        assert_eq!(lca(&star, &[2]).unwrap(), 2);
        assert_eq!(lca(&star, &[1, 2]).unwrap(), 0);
        assert!(lca(&star, &[]).is_err());

        let (g, ents) = two_sentence_example();
        let root = lca(&g, &ents).unwrap();
        assert_eq!(g.tokens()[root], "present");
    }

    #[test]
    fn path_examples() {
        let g = chain(3);
        assert_eq!(dependency_path(&g, 1, 1).unwrap(), vec![1]);
        assert_eq!(dependency_path(&g, 0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(dependency_path(&g, 2, 0).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn prune_chain_examples() {
        let g = chain(5);
        let ents = [Span::single(0), Span::single(4)];
        let kept = prune_tree(&g, &ents, Pruning::K(0)).unwrap();
        assert_eq!(kept, (0..5).collect());

        // leaf 6 attached to 3 (1-based)
        let g = DependencyGraph::single_sentence(
            &["a", "b", "c", "d", "e", "f"],
            &[0, 1, 2, 3, 4, 3],
        )
        .unwrap();
        let k0 = prune_tree(&g, &ents, Pruning::K(0)).unwrap();
        let k1 = prune_tree(&g, &ents, Pruning::K(1)).unwrap();
        assert!(!k0.contains(&5));
        assert!(k1.contains(&5));
        assert!(prune_tree(&g, &[], Pruning::K(0)).is_err());
    }

    #[test]
    fn pruning_drops_partial_response() {
        let (g, ents) = two_sentence_example();
        let spans: Vec<Span> = ents.iter().map(|&e| Span::single(e)).collect();
        let partial = g.tokens().iter().position(|t| t == "partial").unwrap();
        let response = g.tokens().iter().position(|t| t == "response").unwrap();
        for k in [0, 1] {
            let kept = prune_tree(&g, &spans, Pruning::K(k)).unwrap();
            assert!(!kept.contains(&partial) && !kept.contains(&response), "k={k}");
        }
        let k1 = prune_tree(&g, &spans, Pruning::K(1)).unwrap();
        let showed = g.tokens().iter().position(|t| t == "showed").unwrap();
        assert!(k1.contains(&showed));
        let full = prune_tree(&g, &spans, Pruning::Full).unwrap();
        assert_eq!(full.len(), g.len());
    }

    #[test]
    fn restrict_examples() {
        let g = chain(3);
        let all: BTreeSet<usize> = (0..3).collect();
        let r = restrict_graph(&g, &all).unwrap();
        assert_eq!(r.graph, g);
        assert_eq!(r.index_map, vec![Some(0), Some(1), Some(2)]);

        let r = restrict_graph(&g, &[0, 1].into_iter().collect()).unwrap();
        assert_eq!(r.graph.len(), 2);
        assert_eq!(r.graph.edges().len(), 1);
        assert!(r.map_span(Span::single(2)).is_err());
        assert_eq!(r.map_span(Span::single(1)).unwrap(), Span::single(1));

        assert!(restrict_graph(&g, &[0, 2].into_iter().collect()).is_err());
        assert!(restrict_graph(&g, &BTreeSet::new()).is_err());
    }

    #[test]
    fn span_head_picks_token_headed_outside() {
        // "the big dog barked": dog heads the/big, barked is root
        let g = DependencyGraph::single_sentence(&["the", "big", "dog", "barked"], &[3, 3, 4, 0])
            .unwrap();
        assert_eq!(g.span_head(Span::new(0, 3)).unwrap(), 2);
        assert!(g.span_head(Span::new(2, 2)).is_err());
    }

    #[test]
    fn pruning_parses() {
        assert_eq!("full".parse::<Pruning>().unwrap(), Pruning::Full);
        assert_eq!("k2".parse::<Pruning>().unwrap(), Pruning::K(2));
        assert_eq!(Pruning::K(3).to_string(), "k3");
        assert!("kx".parse::<Pruning>().is_err());
        assert!("-1".parse::<Pruning>().is_err());
    }
}
