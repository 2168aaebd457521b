//! Hierarchical tracking over doubling windows, and the two ways of
//! connecting consecutive windows: the global merging block and the
//! overlap-majority stitching heuristic.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gnn::{score_edges, GnnWeights};
use super::rounding::{round_to_tracks, RoundingMode};
use super::{build_graph, GraphNode, NodeKind, PruneConfig, TrackGraph};
use crate::reid::normalize_f64;
use crate::tracks::{check_frame_order, Observation, TrackPoint, TrackSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    /// Window size per level in frames, strictly increasing.
    pub levels: Vec<u32>,
    /// Frames per near-online step; equals the top window size.
    pub stride: u32,
    pub prune: PruneConfig,
    pub mp_steps: usize,
    pub rounding: RoundingMode,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self::with_top_window(480)
    }
}

impl HierarchyConfig {
    /// Levels `30, 60, ...` doubling up to `top`, stride `top`.
    pub fn with_top_window(top: u32) -> Self {
        let mut levels = vec![30];
        while *levels.last().unwrap() < top {
            levels.push(levels.last().unwrap() * 2);
        }
        Self {
            stride: *levels.last().unwrap(),
            levels,
            prune: PruneConfig::default(),
            mp_steps: 4,
            rounding: RoundingMode::default(),
        }
    }

    pub fn top_window(&self) -> u32 {
        self.levels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels[0] == 0 || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("hierarchy levels must be positive and strictly increasing".into()));
        }
        if self.stride != self.top_window() {
            return Err(Error::InvalidInput(format!(
                "stride {} must equal the top window {}",
                self.stride,
                self.top_window()
            )));
        }
        Ok(())
    }
}

/// One weight set per hierarchy level, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyWeights {
    pub levels: Vec<Arc<GnnWeights>>,
}

impl HierarchyWeights {
    pub fn new(levels: Vec<GnnWeights>) -> Self {
        Self {
            levels: levels.into_iter().map(Arc::new).collect(),
        }
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.levels.len() {
            return Err(Error::ShapeMismatch(format!(
                "hierarchy needs {depth} levels of weights, {} available",
                self.levels.len()
            )));
        }
        Ok(())
    }

    /// Weights of the global block: the deepest used level's buffer, shared.
    pub fn global_block(&self, config: &HierarchyConfig) -> Result<Arc<GnnWeights>> {
        let depth = config.levels.len();
        self.check_depth(depth)?;
        Ok(Arc::clone(&self.levels[depth - 1]))
    }
}

/// Observation indices in frame order plus their summed appearance.
#[derive(Debug, Clone)]
pub(crate) struct Tracklet {
    pub members: Vec<usize>,
    appearance_sum: Vec<f64>,
}

impl Tracklet {
    fn single(index: usize, obs: &Observation) -> Self {
        Self {
            members: vec![index],
            appearance_sum: obs.appearance.as_slice().iter().map(|&v| v as f64).collect(),
        }
    }

    fn absorb(&mut self, other: Tracklet) {
        self.members.extend(other.members);
        for (a, b) in self.appearance_sum.iter_mut().zip(other.appearance_sum) {
            *a += b;
        }
    }

    fn node(&self, observations: &[Observation], kind: NodeKind) -> Result<GraphNode> {
        let first = &observations[self.members[0]];
        let last = &observations[*self.members.last().unwrap()];
        Ok(GraphNode {
            kind,
            first_frame: first.frame,
            last_frame: last.frame,
            start_pos: first.position,
            end_pos: last.position,
            appearance: normalize_f64(self.appearance_sum.clone())?,
            members: self.members.clone(),
        })
    }
}

/// Graph over `tracklets` with one node per tracklet, in the same order.
pub(crate) fn tracklet_graph(
    tracklets: &[Tracklet],
    observations: &[Observation],
    kind: NodeKind,
    prune: &PruneConfig,
) -> Result<TrackGraph> {
    let nodes = tracklets
        .iter()
        .map(|t| t.node(observations, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_graph(nodes, prune, None))
}

/// Builds, scores and rounds one graph; chains become merged tracklets.
fn link(
    tracklets: Vec<Tracklet>,
    observations: &[Observation],
    kind: NodeKind,
    weights: &GnnWeights,
    config: &HierarchyConfig,
) -> Result<Vec<Tracklet>> {
    if tracklets.len() <= 1 {
        return Ok(tracklets);
    }
    let graph = tracklet_graph(&tracklets, observations, kind, &config.prune)?;
    let scores = score_edges(&graph, weights, config.mp_steps)?;
    let rounded = round_to_tracks(&graph, &scores, config.rounding);
    let mut slots: Vec<Option<Tracklet>> = tracklets.into_iter().map(Some).collect();
    Ok(rounded
        .chains
        .into_iter()
        .map(|chain| {
            let mut it = chain.into_iter();
            let mut merged = slots[it.next().unwrap()].take().unwrap();
            for v in it {
                merged.absorb(slots[v].take().unwrap());
            }
            merged
        })
        .collect())
}

/// Splits frame-ordered tracklets into groups by the window holding their
/// first frame.
pub(crate) fn group_by_window(
    tracklets: Vec<Tracklet>,
    observations: &[Observation],
    origin: u32,
    window: u32,
) -> Vec<Vec<Tracklet>> {
    let mut groups: Vec<(u32, Vec<Tracklet>)> = Vec::new();
    for t in tracklets {
        let key = (observations[t.members[0]].frame - origin) / window;
        match groups.last_mut() {
            Some((k, g)) if *k == key => g.push(t),
            _ => groups.push((key, vec![t])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

pub(crate) fn singletons(observations: &[Observation], range: std::ops::Range<usize>) -> Vec<Tracklet> {
    range.map(|i| Tracklet::single(i, &observations[i])).collect()
}

/// Runs hierarchy level `level` over its windows.
pub(crate) fn run_level(
    tracklets: Vec<Tracklet>,
    observations: &[Observation],
    origin: u32,
    level: usize,
    weights: &GnnWeights,
    config: &HierarchyConfig,
) -> Result<Vec<Tracklet>> {
    let kind = if level == 0 { NodeKind::Detection } else { NodeKind::Tracklet };
    let groups = group_by_window(tracklets, observations, origin, config.levels[level]);
    let linked: Vec<Vec<Tracklet>> = groups
        .into_par_iter()
        .map(|g| link(g, observations, kind, weights, config))
        .collect::<Result<_>>()?;
    let mut out: Vec<Tracklet> = linked.into_iter().flatten().collect();
    out.sort_by_key(|t| (observations[t.members[0]].frame, t.members[0]));
    Ok(out)
}

/// Runs every level over the observations `range` (indices into a
/// frame-ordered slice) whose windows start at `origin`.
pub(crate) fn hierarchy_tracklets(
    observations: &[Observation],
    range: std::ops::Range<usize>,
    origin: u32,
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
) -> Result<Vec<Tracklet>> {
    weights.check_depth(config.levels.len())?;
    let mut tracklets = singletons(observations, range);
    for level in 0..config.levels.len() {
        tracklets = run_level(tracklets, observations, origin, level, &weights.levels[level], config)?;
    }
    Ok(tracklets)
}

fn frame_range(observations: &[Observation], start: u32, end: u32) -> std::ops::Range<usize> {
    observations.partition_point(|o| o.frame < start)..observations.partition_point(|o| o.frame < end)
}

fn to_track_set(observations: &[Observation], tracks: impl IntoIterator<Item = (u64, Vec<usize>)>) -> TrackSet {
    let mut out = TrackSet::new();
    for (id, members) in tracks {
        out.insert_track(
            id,
            members.into_iter().map(|i| TrackPoint {
                frame: observations[i].frame,
                position: observations[i].position,
                observation: Some(i),
            }),
        );
    }
    out
}

/// Tracks inside a single window of frames. Identities are numbered in
/// order of first appearance.
pub fn run_hierarchy(
    observations: &[Observation],
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
) -> Result<TrackSet> {
    config.validate()?;
    check_frame_order(observations)?;
    let Some(first) = observations.first() else {
        return Ok(TrackSet::new());
    };
    let tracklets = hierarchy_tracklets(observations, 0..observations.len(), first.frame, weights, config)?;
    Ok(to_track_set(
        observations,
        tracklets.into_iter().enumerate().map(|(k, t)| (k as u64, t.members)),
    ))
}

/// Near-online tracking: non-overlapping windows of `stride` frames run the
/// hierarchy independently, then the global block links each window's
/// tracks to the bank of all earlier identities using the deepest level's
/// weights.
pub fn track_sequence_global(
    observations: &[Observation],
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
) -> Result<TrackSet> {
    run_global(observations, weights, config, &mut |_| {})
}

/// [`track_sequence_global`], handing every global-block graph to `inspect`
/// before it is scored.
pub(crate) fn run_global(
    observations: &[Observation],
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
    inspect: &mut dyn FnMut(&TrackGraph),
) -> Result<TrackSet> {
    config.validate()?;
    check_frame_order(observations)?;
    let (Some(first), Some(last)) = (observations.first(), observations.last()) else {
        return Ok(TrackSet::new());
    };
    let global = weights.global_block(config)?;
    let origin = first.frame;
    let s = config.stride;
    let num_windows = (last.frame - origin) / s + 1;
    let windows: Vec<Vec<Tracklet>> = (0..num_windows)
        .into_par_iter()
        .map(|k| {
            let start = origin + k * s;
            let range = frame_range(observations, start, start + s);
            hierarchy_tracklets(observations, range, start, weights, config)
        })
        .collect::<Result<_>>()?;

    let mut bank: Vec<Tracklet> = Vec::new();
    let mut assigned: Vec<(u64, Vec<usize>)> = Vec::new();
    for tracks in windows {
        let links = if bank.is_empty() || tracks.is_empty() {
            vec![Link::Open; tracks.len()]
        } else {
            let graph = global_graph(&bank, &tracks, observations, config)?;
            inspect(&graph);
            global_links(&graph, bank.len(), &global, config)?
        };
        let mut entry_of = Vec::with_capacity(tracks.len());
        for (t, link) in tracks.into_iter().zip(links) {
            let b = match link {
                Link::Bank(b) => b,
                Link::Track(j) => entry_of[j],
                Link::Open => {
                    bank.push(Tracklet {
                        members: Vec::new(),
                        appearance_sum: vec![0.0; t.appearance_sum.len()],
                    });
                    bank.len() - 1
                }
            };
            entry_of.push(b);
            assigned.push((b as u64, t.members.clone()));
            bank[b].absorb(t);
        }
    }
    Ok(to_track_set(observations, assigned))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Link {
    Open,
    Bank(usize),
    Track(usize),
}

/// Graph over the bank of past identities followed by the new tracks.
fn global_graph(
    bank: &[Tracklet],
    tracks: &[Tracklet],
    observations: &[Observation],
    config: &HierarchyConfig,
) -> Result<TrackGraph> {
    let nb = bank.len();
    let nodes = bank
        .iter()
        .chain(tracks)
        .map(|t| t.node(observations, NodeKind::Tracklet))
        .collect::<Result<Vec<_>>>()?;
    // past identities are never merged with each other
    let allow = move |_: usize, j: usize| j >= nb;
    Ok(build_graph(nodes, &config.prune, Some(&allow)))
}

/// For each new track, what it continues. Every track of a chain through
/// several new tracks reports the chain's head.
fn global_links(graph: &TrackGraph, nb: usize, weights: &GnnWeights, config: &HierarchyConfig) -> Result<Vec<Link>> {
    let scores = score_edges(graph, weights, config.mp_steps)?;
    let rounded = round_to_tracks(graph, &scores, config.rounding);
    let mut links = vec![Link::Open; graph.nodes.len() - nb];
    for chain in rounded.chains {
        let head = chain[0];
        for &v in &chain[1..] {
            links[v - nb] = if head < nb { Link::Bank(head) } else { Link::Track(head - nb) };
        }
    }
    Ok(links)
}

/// Tracks of one overlapping window, as observation index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTracks {
    pub start: u32,
    pub end: u32,
    pub tracks: Vec<Vec<usize>>,
}

/// Baseline tracking with windows of the top size overlapping by half,
/// joined by [`stitch_heuristic`].
pub fn track_sequence_heuristic(
    observations: &[Observation],
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
) -> Result<TrackSet> {
    config.validate()?;
    check_frame_order(observations)?;
    let (Some(first), Some(last)) = (observations.first(), observations.last()) else {
        return Ok(TrackSet::new());
    };
    let w = config.top_window();
    let step = (w / 2).max(1);
    let origin = first.frame;
    let mut starts = vec![origin];
    while starts.last().unwrap() + w <= last.frame {
        starts.push(starts.last().unwrap() + step);
    }
    let windows: Vec<WindowTracks> = starts
        .into_par_iter()
        .map(|start| {
            let range = frame_range(observations, start, start + w);
            let tracks = hierarchy_tracklets(observations, range, start, weights, config)?;
            Ok(WindowTracks {
                start,
                end: start + w,
                tracks: tracks.into_iter().map(|t| t.members).collect(),
            })
        })
        .collect::<Result<_>>()?;
    stitch_heuristic(&windows, observations)
}

/// Joins consecutive half-overlapping windows: a track continues an
/// identity from the previous window when each holds a strict majority of
/// the other's observations inside the overlap. Every observation is
/// reported from the window that owns its frame, with ownership switching
/// at the middle of each overlap.
pub fn stitch_heuristic(windows: &[WindowTracks], observations: &[Observation]) -> Result<TrackSet> {
    let mut next_id = 0u64;
    let mut prev_ids: Vec<u64> = Vec::new();
    let mut output: HashMap<u64, Vec<usize>> = HashMap::new();
    for (k, win) in windows.iter().enumerate() {
        let mut ids = vec![u64::MAX; win.tracks.len()];
        if k > 0 {
            let prev = &windows[k - 1];
            if win.start < prev.start || win.start > prev.end {
                return Err(Error::InvalidInput("windows must be ordered and overlapping".into()));
            }
            let overlap = win.start..prev.end;
            let owner: HashMap<usize, usize> = prev
                .tracks
                .iter()
                .enumerate()
                .flat_map(|(t, m)| m.iter().map(move |&o| (o, t)))
                .filter(|(o, _)| overlap.contains(&observations[*o].frame))
                .collect();
            let mut prev_counts = vec![0usize; prev.tracks.len()];
            for t in owner.values() {
                prev_counts[*t] += 1;
            }
            for (b, members) in win.tracks.iter().enumerate() {
                let in_overlap: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|o| overlap.contains(&observations[*o].frame))
                    .collect();
                let mut shared: HashMap<usize, usize> = HashMap::new();
                for o in &in_overlap {
                    if let Some(&a) = owner.get(o) {
                        *shared.entry(a).or_default() += 1;
                    }
                }
                let best = shared.into_iter().max_by_key(|&(a, c)| (c, std::cmp::Reverse(a)));
                if let Some((a, c)) = best {
                    if 2 * c > in_overlap.len() && 2 * c > prev_counts[a] {
                        ids[b] = prev_ids[a];
                    }
                }
            }
        }
        for id in ids.iter_mut().filter(|id| **id == u64::MAX) {
            *id = next_id;
            next_id += 1;
        }

        // boundaries sit at the middle of each overlap
        let core_start = if k == 0 { 0 } else { (win.start + windows[k - 1].end) / 2 };
        let core_end = match windows.get(k + 1) {
            Some(next) => (next.start + win.end) / 2,
            None => u32::MAX,
        };
        for (b, members) in win.tracks.iter().enumerate() {
            for &o in members {
                if (core_start..core_end).contains(&observations[o].frame) {
                    output.entry(ids[b]).or_default().push(o);
                }
            }
        }
        prev_ids = ids;
    }
    let mut tracks: Vec<(u64, Vec<usize>)> = output.into_iter().filter(|(_, m)| !m.is_empty()).collect();
    tracks.sort_unstable();
    Ok(to_track_set(observations, tracks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WorldPoint;
    use crate::graph::gnn::{Aggregation, GnnDims};
    use crate::reid::tests::random_unit;
    use crate::reid::Embedding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(frame: u32, x: f64, e: &Embedding) -> Observation {
        Observation {
            frame,
            position: WorldPoint::new(x, 0.0, 0.85),
            appearance: e.clone(),
        }
    }

    fn zero_weights(levels: usize) -> HierarchyWeights {
        HierarchyWeights::new(vec![GnnWeights::zeros(GnnDims::default(), Aggregation::Sum); levels])
    }

    #[test]
    fn single_detection_is_one_track() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = vec![obs(3, 0.0, &random_unit(&mut rng))];
        let t = run_hierarchy(&o, &zero_weights(5), &HierarchyConfig::default()).unwrap();
        assert_eq!(t.num_tracks(), 1);
    }

    #[test]
    fn missing_level_weights_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = vec![obs(0, 0.0, &random_unit(&mut rng))];
        let r = run_hierarchy(&o, &zero_weights(2), &HierarchyConfig::default());
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn global_block_shares_deepest_buffer() {
        let w = HierarchyWeights::new(
            (0..5).map(|s| GnnWeights::random(GnnDims::default(), Aggregation::Sum, s)).collect(),
        );
        let cfg = HierarchyConfig::default();
        let g = w.global_block(&cfg).unwrap();
        assert!(Arc::ptr_eq(&g, &w.levels[4]));
        assert_eq!(g.checksum(), w.levels[4].checksum());
    }

    #[test]
    fn config_validation() {
        assert!(HierarchyConfig::default().validate().is_ok());
        assert_eq!(HierarchyConfig::default().levels, vec![30, 60, 120, 240, 480]);
        let mut c = HierarchyConfig::default();
        c.stride = 100;
        assert!(c.validate().is_err());
        c.levels = vec![60, 30];
        c.stride = 30;
        assert!(c.validate().is_err());
    }

    fn windows_from(tracks: &[Vec<usize>], observations: &[Observation], starts: &[u32], w: u32) -> Vec<WindowTracks> {
        starts
            .iter()
            .map(|&s| WindowTracks {
                start: s,
                end: s + w,
                tracks: tracks
                    .iter()
                    .map(|t| t.iter().copied().filter(|&o| (s..s + w).contains(&observations[o].frame)).collect::<Vec<_>>())
                    .filter(|t: &Vec<usize>| !t.is_empty())
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn identical_overlaps_stitch_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
        let mut o = Vec::new();
        for f in 0..40 {
            o.push(obs(f, 0.0, &a));
            o.push(obs(f, 5.0, &b));
        }
        let truth: Vec<Vec<usize>> = vec![(0..40).map(|f| 2 * f).collect(), (0..40).map(|f| 2 * f + 1).collect()];
        let windows = windows_from(&truth, &o, &[0, 10, 20], 20);
        let t = stitch_heuristic(&windows, &o).unwrap();
        assert_eq!(t.num_tracks(), 2);
        assert_eq!(t.num_points(), 80);
        t.validate().unwrap();
    }

    #[test]
    fn disjoint_overlaps_open_new_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_unit(&mut rng);
        let o: Vec<_> = [0, 1, 2, 3, 16, 17, 18, 19].iter().map(|&f| obs(f, 0.0, &a)).collect();
        let windows = vec![
            WindowTracks { start: 0, end: 10, tracks: vec![vec![0, 1, 2, 3]] },
            WindowTracks { start: 5, end: 15, tracks: vec![] },
            WindowTracks { start: 10, end: 20, tracks: vec![vec![4, 5, 6, 7]] },
        ];
        let t = stitch_heuristic(&windows, &o).unwrap();
        assert_eq!(t.num_tracks(), 2);
    }
}

