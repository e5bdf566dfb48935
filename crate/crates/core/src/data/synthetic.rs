//! Seeded synthetic relation task.
//!
//! Each instance is a uniformly random labeled tree (decoded from a random
//! Prüfer sequence, then rooted at a random node) with two single-token
//! entities. One cue token `cueC` sits at an exact tree distance from the
//! entity path and fixes the label `relC`; every other token is drawn from
//! a label-independent filler vocabulary. Pruning at `K < distance` removes
//! the only evidence for the label.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::corpus::{Corpus, RawInstance};
use crate::depgraph::{DependencyGraph, Span};
use crate::error::{Error, Result};
use crate::numerics::Rng;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub n_labels: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Tree distance between the cue token and the entity path.
    pub off_path_distance: usize,
    pub n_fillers: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_instances: 200,
            n_labels: 5,
            min_len: 8,
            max_len: 16,
            off_path_distance: 0,
            n_fillers: 30,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Fewest tokens that can place a cue at `off_path_distance`.
    pub fn min_feasible_len(&self) -> usize {
        if self.off_path_distance == 0 {
            3
        } else {
            2 + self.off_path_distance
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labels < 2 {
            return Err(Error::Config("synthetic task needs at least 2 labels".into()));
        }
        if self.n_fillers == 0 {
            return Err(Error::Config("synthetic task needs at least 1 filler token".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "sentence length range {}..={} is empty",
                self.min_len, self.max_len
            )));
        }
        if self.min_len < self.min_feasible_len() {
            return Err(Error::Config(format!(
                "sentence length {} too small for off-path distance {} (need >= {})",
                self.min_len,
                self.off_path_distance,
                self.min_feasible_len()
            )));
        }
        Ok(())
    }

    /// Parses `default` or a comma list of `key=value` overrides:
    /// `n`, `labels`, `len` (`a-b` or `a`), `dist`, `fillers`, `seed`.
    pub fn parse(text: &str, default_seed: u64) -> Result<Self> {
        let mut spec = SyntheticSpec {
            seed: default_seed,
            ..Default::default()
        };
        let text = text.trim();
        if text.is_empty() || text == "default" {
            return Ok(spec);
        }
        for part in text.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synthetic spec entry '{part}' is not key=value")))?;
            let bad = || Error::Config(format!("bad value '{value}' for synthetic key '{key}'"));
            let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
            match key.trim() {
                "n" => spec.n_instances = num(value)?,
                "labels" => spec.n_labels = num(value)?,
                "dist" => spec.off_path_distance = num(value)?,
                "fillers" => spec.n_fillers = num(value)?,
                "seed" => spec.seed = value.trim().parse().map_err(|_| bad())?,
                "len" => match value.split_once('-') {
                    Some((a, b)) => {
                        spec.min_len = num(a)?;
                        spec.max_len = num(b)?;
                    }
                    None => {
                        spec.min_len = num(value)?;
                        spec.max_len = spec.min_len;
                    }
                },
                other => return Err(Error::Config(format!("unknown synthetic key '{other}'"))),
            }
        }
        Ok(spec)
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticSpec::parse(s, 0)
    }
}

pub fn cue_token(label: usize) -> String {
    format!("cue{label}")
}

pub fn label_name(label: usize) -> String {
    format!("rel{label:02}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).derive("synthetic");
    let mut raw = Vec::with_capacity(spec.n_instances);
    for i in 0..spec.n_instances {
        let label = rng.below(0, spec.n_labels);
        let n = rng.below(spec.min_len, spec.max_len + 1);
        raw.push(generate_instance(&mut rng, spec, i, n, label)?);
    }
    Ok(Corpus::from_raw(raw))
}

fn generate_instance(
    rng: &mut Rng,
    spec: &SyntheticSpec,
    index: usize,
    n: usize,
    label: usize,
) -> Result<RawInstance> {
    for _ in 0..MAX_ATTEMPTS {
        let adj = random_tree(rng, n);
        let a = rng.below(0, n);
        let mut b = rng.below(0, n - 1);
        if b >= a {
            b += 1;
        }
        let path = bfs_path(&adj, a, b);
        let candidates: Vec<usize> = if spec.off_path_distance == 0 {
            path[1..path.len() - 1].to_vec()
        } else {
            let dist = distances_from(&adj, &path);
            (0..n).filter(|&v| dist[v] == spec.off_path_distance).collect()
        };
        if candidates.is_empty() {
            continue;
        }
        let cue = candidates[rng.below(0, candidates.len())];
        let root = rng.below(0, n);
        let heads = root_tree(&adj, root);

        let (e1, e2) = (a.min(b), a.max(b));
        let mut tokens = Vec::with_capacity(n);
        for v in 0..n {
            tokens.push(if v == cue {
                cue_token(label)
            } else if v == e1 {
                format!("subj{}", rng.below(0, 4))
            } else if v == e2 {
                format!("obj{}", rng.below(0, 4))
            } else {
                format!("w{}", rng.below(0, spec.n_fillers))
            });
        }
        let graph = DependencyGraph::new(tokens, heads, None, vec![0..n])?;
        return Ok(RawInstance {
            id: format!("syn-{index:05}"),
            graph,
            entities: vec![Span::single(e1), Span::single(e2)],
            label: label_name(label),
        });
    }
    Err(Error::Config(format!(
        "could not place a cue at distance {} in a {n}-token tree",
        spec.off_path_distance
    )))
}

/// Uniform labeled tree on `n` nodes via a random Prüfer sequence.
fn random_tree(rng: &mut Rng, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    if n < 2 {
        return adj;
    }
    let seq: Vec<usize> = (0..n - 2).map(|_| rng.below(0, n)).collect();
    for (u, v) in prufer_edges(&seq, n) {
        adj[u].push(v);
        adj[v].push(u);
    }
    adj
}

pub(crate) fn prufer_edges(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf always exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

fn bfs_parents(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                queue.push_back(w);
            }
        }
    }
    parent
}

fn bfs_path(adj: &[Vec<usize>], a: usize, b: usize) -> Vec<usize> {
    let parent = bfs_parents(adj, a);
    let mut path = vec![b];
    let mut v = b;
    while let Some(p) = parent[v] {
        path.push(p);
        v = p;
    }
    path.reverse();
    path
}

fn distances_from(adj: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

fn root_tree(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    bfs_parents(adj, root)
}
