//! Turning edge scores into disjoint trajectories.
//!
//! The selected edge set maximizes total score subject to every node having
//! at most one selected incoming and one selected outgoing edge. Edges
//! scoring below the threshold are never selected. Because edges point
//! forward in time this is a bipartite matching between out-slots and
//! in-slots. Small components are solved exactly. Large ones are matched
//! greedily by descending score, then improved by short alternating paths.

use serde::{Deserialize, Serialize};

use super::TrackGraph;
use crate::association::{hungarian, CostMatrix};

pub const EDGE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// Exact for components with at most this many eligible edges.
    Auto { exact_max_edges: usize },
    Exact,
    Greedy,
}

impl Default for RoundingMode {
    fn default() -> Self {
        RoundingMode::Auto { exact_max_edges: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rounded {
    /// Indices of selected edges, ascending.
    pub selected: Vec<usize>,
    /// Node chains in link order; every node appears in exactly one chain.
    pub chains: Vec<Vec<usize>>,
}

pub fn round_to_tracks(graph: &TrackGraph, scores: &[f64], mode: RoundingMode) -> Rounded {
    let edges: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.source, e.target)).collect();
    round_edges(graph.nodes.len(), &edges, scores, mode)
}

/// Rounding on a bare edge list. Edges must form a DAG.
pub fn round_edges(num_nodes: usize, edges: &[(usize, usize)], scores: &[f64], mode: RoundingMode) -> Rounded {
    assert_eq!(edges.len(), scores.len(), "one score per edge");
    let eligible: Vec<usize> = (0..edges.len()).filter(|&k| scores[k] >= EDGE_THRESHOLD).collect();

    let mut selected = Vec::new();
    for component in components(num_nodes, edges, &eligible) {
        let exact = match mode {
            RoundingMode::Exact => true,
            RoundingMode::Greedy => false,
            RoundingMode::Auto { exact_max_edges } => component.len() <= exact_max_edges,
        };
        if exact {
            selected.extend(select_exact(edges, scores, &component));
        } else {
            selected.extend(select_greedy(num_nodes, edges, scores, &component));
        }
    }
    selected.sort_unstable();
    let chains = chains(num_nodes, edges, &selected);
    Rounded { selected, chains }
}

/// Eligible edge indices grouped by weakly connected component, each group
/// ascending, groups ordered by their smallest edge index.
fn components(num_nodes: usize, edges: &[(usize, usize)], eligible: &[usize]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..num_nodes).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &k in eligible {
        let (a, b) = (find(&mut parent, edges[k].0), find(&mut parent, edges[k].1));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut order = Vec::new();
    for &k in eligible {
        let root = find(&mut parent, edges[k].0);
        let g = groups.entry(root).or_default();
        if g.is_empty() {
            order.push(root);
        }
        g.push(k);
    }
    order.into_iter().map(|r| groups.remove(&r).unwrap()).collect()
}

fn select_exact(edges: &[(usize, usize)], scores: &[f64], component: &[usize]) -> Vec<usize> {
    let mut sources: Vec<usize> = component.iter().map(|&k| edges[k].0).collect();
    let mut targets: Vec<usize> = component.iter().map(|&k| edges[k].1).collect();
    sources.sort_unstable();
    sources.dedup();
    targets.sort_unstable();
    targets.dedup();
    // best (highest score, then lowest index) edge per slot pair
    let mut best: std::collections::HashMap<(usize, usize), usize> = Default::default();
    for &k in component {
        let key = (edges[k].0, edges[k].1);
        best.entry(key)
            .and_modify(|b| {
                if scores[k] > scores[*b] {
                    *b = k;
                }
            })
            .or_insert(k);
    }
    let costs = CostMatrix::from_fn(sources.len(), targets.len(), |r, c| {
        best.get(&(sources[r], targets[c])).map_or(1.0, |&k| 1.0 - scores[k])
    });
    hungarian(&costs)
        .into_iter()
        .filter_map(|(r, c)| best.get(&(sources[r], targets[c])).copied())
        .collect()
}

fn select_greedy(num_nodes: usize, edges: &[(usize, usize)], scores: &[f64], component: &[usize]) -> Vec<usize> {
    let mut order = component.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut m = Matching {
        edges,
        scores,
        out_of: vec![None; num_nodes],
        into: vec![None; num_nodes],
        out_edges: vec![Vec::new(); num_nodes],
        in_edges: vec![Vec::new(); num_nodes],
    };
    for &k in &order {
        let (s, t) = edges[k];
        m.out_edges[s].push(k);
        m.in_edges[t].push(k);
        if m.out_of[s].is_none() && m.into[t].is_none() {
            m.out_of[s] = Some(k);
            m.into[t] = Some(k);
        }
    }
    for _ in 0..MAX_PASSES {
        let mut improved = false;
        for u in 0..num_nodes {
            if !m.out_edges[u].is_empty() {
                improved |= m.augment_from(u);
            }
        }
        if !improved {
            break;
        }
    }
    let mut chosen: Vec<usize> = m.out_of.into_iter().flatten().collect();
    chosen.sort_unstable();
    chosen
}

const MAX_PASSES: usize = 50;
/// Longest improving alternating path searched, in inserted edges.
const MAX_DEPTH: usize = 4;

/// Greedy selection state with per-node candidate lists in descending
/// score order.
struct Matching<'a> {
    edges: &'a [(usize, usize)],
    scores: &'a [f64],
    out_of: Vec<Option<usize>>,
    into: Vec<Option<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

struct Path {
    inserted: Vec<usize>,
    removed: Vec<usize>,
    /// In-slots emptied by removals along the path.
    freed_in: Vec<usize>,
}

impl Matching<'_> {
    /// Local search step: looks for an alternating path starting at the
    /// out-slot of `u` (after releasing its current edge) whose inserted
    /// edges outweigh the removed ones, and applies the first one found.
    fn augment_from(&mut self, u: usize) -> bool {
        let mut path = Path {
            inserted: Vec::new(),
            removed: Vec::new(),
            freed_in: Vec::new(),
        };
        let mut gain = 0.0;
        if let Some(e) = self.out_of[u] {
            path.removed.push(e);
            path.freed_in.push(self.edges[e].1);
            gain -= self.scores[e];
        }
        if self.search(u, gain, &mut path) {
            for &e in &path.removed {
                let (a, b) = self.edges[e];
                self.out_of[a] = None;
                self.into[b] = None;
            }
            for &c in &path.inserted {
                let (a, b) = self.edges[c];
                self.out_of[a] = Some(c);
                self.into[b] = Some(c);
            }
            return true;
        }
        false
    }

    fn search(&self, u: usize, gain: f64, path: &mut Path) -> bool {
        if path.inserted.len() >= MAX_DEPTH {
            return false;
        }
        for &c in &self.out_edges[u] {
            if path.removed.contains(&c) || path.inserted.contains(&c) {
                continue;
            }
            let v = self.edges[c].1;
            if path.inserted.iter().any(|&i| self.edges[i].1 == v) {
                continue;
            }
            let with_c = gain + self.scores[c];
            let holder = self.into[v].filter(|_| !path.freed_in.contains(&v));
            path.inserted.push(c);
            match holder {
                None => {
                    if with_c > 1e-12 {
                        return true;
                    }
                }
                Some(e) => {
                    let next = self.edges[e].0;
                    let after = with_c - self.scores[e];
                    let revisits = next == u || path.removed.iter().any(|&r| self.edges[r].0 == next);
                    if !revisits {
                        path.removed.push(e);
                        path.freed_in.push(v);
                        if after > 1e-12 || self.search(next, after, path) {
                            return true;
                        }
                        path.removed.pop();
                        path.freed_in.pop();
                    }
                }
            }
            path.inserted.pop();
        }
        false
    }
}

fn chains(num_nodes: usize, edges: &[(usize, usize)], selected: &[usize]) -> Vec<Vec<usize>> {
    let mut next = vec![None; num_nodes];
    let mut has_prev = vec![false; num_nodes];
    for &k in selected {
        let (s, t) = edges[k];
        next[s] = Some(t);
        has_prev[t] = true;
    }
    (0..num_nodes)
        .filter(|&v| !has_prev[v])
        .map(|head| {
            let mut chain = vec![head];
            let mut cur = head;
            while let Some(t) = next[cur] {
                chain.push(t);
                cur = t;
            }
            chain
        })
        .collect()
}

/// Total score of a selection.
pub fn objective(scores: &[f64], selected: &[usize]) -> f64 {
    selected.iter().map(|&k| scores[k]).sum()
}
