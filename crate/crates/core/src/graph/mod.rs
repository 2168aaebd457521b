//! Graph-based tracking.
//!
//! Nodes are detections or tracklets, edges are candidate links forward in
//! time. A message-passing network scores edges, a degree-constrained
//! rounding turns scores into trajectories, and a hierarchy of such blocks
//! over doubling windows builds long tracks. A final global block links each
//! new window to every identity seen so far.

pub mod gnn;
pub mod hierarchy;
pub mod nn;
pub mod rounding;
pub mod train;

pub use gnn::{classify_edges, message_passing, Aggregation, GnnDims, GnnState, GnnWeights};
pub use hierarchy::{
    run_hierarchy, stitch_heuristic, track_sequence_global, track_sequence_heuristic, HierarchyConfig,
    HierarchyWeights,
};
pub use rounding::{round_to_tracks, RoundingMode};
pub use train::{auroc, train, train_hierarchy, Curriculum, Example, TrainConfig};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;
use crate::reid::{cosine_distance, Embedding};
use crate::tracks::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Detection,
    Tracklet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub first_frame: u32,
    pub last_frame: u32,
    pub start_pos: WorldPoint,
    pub end_pos: WorldPoint,
    /// Normalized mean appearance of the members.
    pub appearance: Embedding,
    /// Observation indices, in frame order.
    pub members: Vec<usize>,
}

impl GraphNode {
    pub fn from_observation(index: usize, obs: &Observation) -> Self {
        Self {
            kind: NodeKind::Detection,
            first_frame: obs.frame,
            last_frame: obs.frame,
            start_pos: obs.position,
            end_pos: obs.position,
            appearance: obs.appearance.clone(),
            members: vec![index],
        }
    }

    /// Raw node input: a constant plus the log span and log member count.
    /// Nothing absolute in space or time enters the network.
    pub fn raw_features(&self) -> [f64; NODE_FEATURES] {
        [
            1.0,
            ((self.last_frame - self.first_frame) as f64).ln_1p() / 5.0,
            (self.members.len() as f64).ln() / 5.0,
        ]
    }
}

pub const NODE_FEATURES: usize = 3;
pub const EDGE_FEATURES: usize = 8;

/// Raw geometry and appearance of a candidate link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatures {
    /// `start_pos(target) - end_pos(source)`, componentwise.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Frame gap, at least one.
    pub gap: f64,
    pub app_dist: f64,
}

impl EdgeFeatures {
    pub fn between(a: &GraphNode, b: &GraphNode) -> Self {
        Self {
            dx: b.start_pos.x - a.end_pos.x,
            dy: b.start_pos.y - a.end_pos.y,
            dz: b.start_pos.z - a.end_pos.z,
            gap: (b.first_frame - a.last_frame) as f64,
            app_dist: cosine_distance(&a.appearance, &b.appearance),
        }
    }

    pub fn ground_distance(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Bounded transform of the raw features fed to the edge encoder.
    pub fn encoded(&self) -> [f64; EDGE_FEATURES] {
        let softsign = |v: f64| v / (1.0 + v.abs());
        let d = self.ground_distance();
        [
            softsign(self.dx / 2.0),
            softsign(self.dy / 2.0),
            self.dz,
            d.ln_1p(),
            (d / (0.08 * self.gap + 0.3)).ln_1p(),
            1.0 - (-self.gap / 60.0).exp(),
            self.gap.ln_1p() / 8.0,
            self.app_dist,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub features: EdgeFeatures,
}

/// Nodes plus candidate edges sorted by `(source, target)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Candidates kept per node and direction; `None` keeps all.
    pub prune_k: Option<usize>,
    /// Speed used to normalize distances by frame gap, m/frame.
    pub reference_speed: f64,
    /// Distance slack added to the normalizer, meters.
    pub distance_slack: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            prune_k: Some(5),
            reference_speed: 0.1,
            distance_slack: 0.5,
        }
    }
}

impl PruneConfig {
    fn score(&self, f: &EdgeFeatures) -> f64 {
        f.ground_distance() / (self.reference_speed * f.gap + self.distance_slack) + f.app_dist
    }
}

/// Builds candidate edges between temporally disjoint nodes. Per direction
/// each node keeps its `prune_k` best candidates under the mixed
/// distance/appearance score, plus the `prune_k` best among those closest in
/// time (ordered by gap, then score). The graph keeps the union.
/// `allow` can veto edges before pruning.
pub fn build_graph(
    nodes: Vec<GraphNode>,
    config: &PruneConfig,
    allow: Option<&dyn Fn(usize, usize) -> bool>,
) -> TrackGraph {
    let n = nodes.len();
    let mut candidates: Vec<(usize, usize, EdgeFeatures, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if nodes[i].last_frame >= nodes[j].first_frame {
                continue;
            }
            if let Some(allow) = allow {
                if !allow(i, j) {
                    continue;
                }
            }
            let f = EdgeFeatures::between(&nodes[i], &nodes[j]);
            candidates.push((i, j, f, config.score(&f)));
        }
    }
    let keep: Vec<bool> = match config.prune_k {
        None => vec![true; candidates.len()],
        Some(k) => {
            let mut keep = vec![false; candidates.len()];
            let mut out_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut in_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (c, &(i, j, _, _)) in candidates.iter().enumerate() {
                out_lists[i].push(c);
                in_lists[j].push(c);
            }
            let by_score = |a: &usize, b: &usize| -> Ordering {
                candidates[*a].3.total_cmp(&candidates[*b].3).then(a.cmp(b))
            };
            let by_gap = |a: &usize, b: &usize| -> Ordering {
                candidates[*a].2.gap.total_cmp(&candidates[*b].2.gap).then(by_score(a, b))
            };
            for list in out_lists.iter_mut().chain(in_lists.iter_mut()) {
                list.sort_by(by_score);
                for &c in list.iter().take(k) {
                    keep[c] = true;
                }
                list.sort_by(by_gap);
                for &c in list.iter().take(k) {
                    keep[c] = true;
                }
            }
            keep
        }
    };
    let edges = candidates
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((source, target, features, _), _)| GraphEdge {
            source,
            target,
            features,
        })
        .collect();
    TrackGraph { nodes, edges }
}
