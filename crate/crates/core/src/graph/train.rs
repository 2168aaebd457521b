//! Supervised training of the edge classifier and the per-level
//! curriculum on simulated scenes.
//!
//! The loss is class-balanced binary cross-entropy on edge logits: within
//! each graph, positives and negatives each carry half of the weight.
//! Parameters are updated with Adam on mini-batches of graphs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gnn::{backward, forward, Aggregation, GnnDims, GnnWeights};
use super::hierarchy::{group_by_window, run_global, run_level, singletons, tracklet_graph, HierarchyConfig, HierarchyWeights, Tracklet};
use super::{NodeKind, TrackGraph};
use crate::detections::DetectionConfig;
use crate::pipeline::{simulate_stream, SimulatedStream};
use crate::sim::{generate, SceneSpec};
use crate::tracks::Observation;
use crate::{Error, Result};

/// A graph with one label per edge.
#[derive(Debug, Clone)]
pub struct Example {
    pub graph: TrackGraph,
    pub labels: Vec<bool>,
}

impl Example {
    /// Labels an edge positive when both endpoints carry the same known
    /// identity and no other node of that identity starts or ends strictly
    /// between them.
    pub fn from_identities(graph: TrackGraph, identities: &[Option<u64>]) -> Self {
        let labels = graph
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (&graph.nodes[e.source], &graph.nodes[e.target]);
                match (identities[e.source], identities[e.target]) {
                    (Some(x), Some(y)) if x == y => {
                        let inside = |f: u32| f > a.last_frame && f < b.first_frame;
                        !graph.nodes.iter().enumerate().any(|(k, n)| {
                            k != e.source
                                && k != e.target
                                && identities[k] == Some(x)
                                && (inside(n.first_frame) || inside(n.last_frame))
                        })
                    }
                    _ => false,
                }
            })
            .collect();
        Self { graph, labels }
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dims: GnnDims,
    pub aggregation: Aggregation,
    /// Optimizer steps.
    pub steps: usize,
    /// Graphs per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient norm limit.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: GnnDims::default(),
            aggregation: Aggregation::Max,
            steps: 300,
            batch_size: 2,
            learning_rate: 5e-3,
            max_grad_norm: 5.0,
            seed: 0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-edge loss weights: each present class gets half of the total.
fn class_weights(labels: &[bool]) -> (f64, f64) {
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    match (pos, neg) {
        (0, 0) => (0.0, 0.0),
        (0, n) => (0.0, 1.0 / n as f64),
        (p, 0) => (1.0 / p as f64, 0.0),
        (p, n) => (0.5 / p as f64, 0.5 / n as f64),
    }
}

/// Class-balanced cross-entropy of one graph.
pub fn loss(weights: &GnnWeights, example: &Example) -> Result<f64> {
    let f = forward(&example.graph, weights, weights.dims.steps, false)?;
    let (wp, wn) = class_weights(&example.labels);
    Ok(f.logits
        .iter()
        .zip(&example.labels)
        .map(|(&z, &y)| if y { wp * softplus(-z) } else { wn * softplus(z) })
        .sum())
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(weights: &GnnWeights, example: &Example) -> Result<(f64, GnnWeights)> {
    if example.labels.len() != example.graph.edges.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} edges",
            example.labels.len(),
            example.graph.edges.len()
        )));
    }
    let f = forward(&example.graph, weights, weights.dims.steps, true)?;
    let (wp, wn) = class_weights(&example.labels);
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(f.logits.len());
    for (&z, &y) in f.logits.iter().zip(&example.labels) {
        let s = super::nn::sigmoid(z);
        if y {
            total += wp * softplus(-z);
            dlogits.push(wp * (s - 1.0));
        } else {
            total += wn * softplus(z);
            dlogits.push(wn * s);
        }
    }
    let grad = backward(&example.graph, weights, &f, &dlogits);
    Ok((total, grad))
}

/// Trains fresh weights on `examples`. Deterministic for a fixed config.
pub fn train(examples: &[Example], config: &TrainConfig) -> Result<GnnWeights> {
    train_from(GnnWeights::random(config.dims, config.aggregation, config.seed), examples, config)
}

/// Continues training from `weights`; `config.dims` and `aggregation` are
/// ignored in favor of the starting weights.
pub fn train_from(mut weights: GnnWeights, examples: &[Example], config: &TrainConfig) -> Result<GnnWeights> {
    let usable: Vec<&Example> = examples.iter().filter(|e| !e.labels.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData("no labeled edges to train on".into()));
    }
    weights.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut adam = Adam::new(&weights);
    let mut order: Vec<usize> = Vec::new();
    let batch = config.batch_size.max(1);

    for step in 0..config.steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch.min(usable.len()) {
            if order.is_empty() {
                order = (0..usable.len()).collect();
                order.shuffle(&mut rng);
            }
            picks.push(order.pop().unwrap());
        }
        let results: Vec<(f64, GnnWeights)> = picks
            .par_iter()
            .map(|&i| loss_and_gradient(&weights, usable[i]))
            .collect::<Result<_>>()?;
        let scale = 1.0 / results.len() as f64;
        let mut grad = weights.zeros_like();
        let mut batch_loss = 0.0;
        for (l, g) in &results {
            batch_loss += l * scale;
            for (acc, p) in grad.params_mut().into_iter().zip(g.params()) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v * scale;
                }
            }
        }
        let norm = grad.params().iter().flat_map(|p| p.iter()).map(|v| v * v).sum::<f64>().sqrt();
        if !batch_loss.is_finite() || !norm.is_finite() {
            return Err(Error::Divergence { step, loss: batch_loss });
        }
        let clip = if norm > config.max_grad_norm { config.max_grad_norm / norm } else { 1.0 };
        adam.step(&mut weights, &grad, clip, config.learning_rate);
    }
    Ok(weights)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(weights: &GnnWeights) -> Self {
        let zeros: Vec<Vec<f64>> = weights.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, weights: &mut GnnWeights, grad: &GnnWeights, scale: f64, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in weights.params_mut().into_iter().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Area under the ROC curve, with tied scores counted as half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InsufficientData("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with midranks
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Simulated scenes and schedule for training every hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    pub seed: u64,
    pub num_scenes: usize,
    /// Objects per training scene, cycled; empty uses the template's count.
    pub object_counts: Vec<usize>,
    /// Template for the training scenes; each gets its own seed.
    pub scene: SceneSpec,
    pub levels: Vec<u32>,
    /// Training graphs kept per level, spread evenly over the candidates.
    pub max_examples: usize,
    pub level_one: TrainConfig,
    pub higher_levels: TrainConfig,
    /// Window of the level that also serves as the global block; it gets a
    /// second round of training that adds global-block graphs.
    pub global_window: Option<u32>,
}

impl Default for Curriculum {
    fn default() -> Self {
        let mut scene = SceneSpec {
            num_objects: 12,
            num_frames: 6000,
            gaps_per_object: 4,
            min_gap: 20,
            max_gap: 1000,
            ..SceneSpec::default()
        };
        scene.noise.pos_sigma = 0.08;
        Self {
            seed: 0,
            num_scenes: 6,
            object_counts: vec![8, 12, 16, 20, 24],
            scene,
            levels: HierarchyConfig::with_top_window(3840).levels,
            max_examples: 24,
            level_one: TrainConfig {
                steps: 300,
                batch_size: 1,
                ..TrainConfig::default()
            },
            higher_levels: TrainConfig {
                steps: 400,
                batch_size: 4,
                ..TrainConfig::default()
            },
            global_window: Some(HierarchyConfig::default().top_window()),
        }
    }
}

/// Majority identity of a tracklet's members; false positives vote too.
fn majority_identity(members: &[usize], identities: &[Option<u64>]) -> Option<u64> {
    let mut counts: std::collections::BTreeMap<Option<u64>, usize> = Default::default();
    for &m in members {
        *counts.entry(identities[m]).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).and_then(|(id, _)| id)
}

/// Labeled graphs of one level. Besides the windows inference uses, the
/// windows shifted by one lower-level window are added as extra examples.
fn level_examples(
    tracklets: &[Tracklet],
    stream: &SimulatedStream,
    level: usize,
    config: &HierarchyConfig,
    shifted: bool,
) -> Result<Vec<Example>> {
    let kind = if level == 0 { NodeKind::Detection } else { NodeKind::Tracklet };
    let window = config.levels[level];
    let mut groups = group_by_window(tracklets.to_vec(), &stream.observations, 0, window);
    if shifted && level > 0 {
        let shift = config.levels[level - 1];
        let tail: Vec<Tracklet> = tracklets
            .iter()
            .filter(|t| stream.observations[t.members[0]].frame >= shift)
            .cloned()
            .collect();
        groups.extend(group_by_window(tail, &stream.observations, shift, window));
    }
    let mut out = Vec::new();
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        let graph = tracklet_graph(&g, &stream.observations, kind, &config.prune)?;
        let ids: Vec<Option<u64>> = g.iter().map(|t| majority_identity(&t.members, &stream.identities)).collect();
        let ex = Example::from_identities(graph, &ids);
        if ex.num_positive() > 0 && ex.num_positive() < ex.labels.len() {
            out.push(ex);
        }
    }
    Ok(out)
}

fn spread<T: Clone>(items: Vec<T>, keep: usize) -> Vec<T> {
    if items.len() <= keep {
        return items;
    }
    (0..keep).map(|k| items[k * items.len() / keep].clone()).collect()
}

/// Trains all levels bottom-up. Level `l` learns on the tracklets the
/// already trained levels below it produce on the training scenes.
pub fn train_hierarchy(curriculum: &Curriculum, detection: &DetectionConfig) -> Result<HierarchyWeights> {
    let mut config = HierarchyConfig {
        levels: curriculum.levels.clone(),
        stride: curriculum.levels.last().copied().unwrap_or(0),
        ..HierarchyConfig::default()
    };
    config.mp_steps = curriculum.level_one.dims.steps;
    config.validate()?;

    let streams: Vec<SimulatedStream> = (0..curriculum.num_scenes)
        .map(|k| {
            let spec = SceneSpec {
                seed: curriculum.seed.wrapping_mul(1000).wrapping_add(k as u64),
                num_objects: curriculum
                    .object_counts
                    .get(k % curriculum.object_counts.len().max(1))
                    .copied()
                    .unwrap_or(curriculum.scene.num_objects),
                ..curriculum.scene.clone()
            };
            let (truth, cams) = generate(&spec)?;
            simulate_stream(&truth, &cams, &spec, detection)
        })
        .collect::<Result<_>>()?;
    let mut tracklets: Vec<Vec<Tracklet>> = streams
        .iter()
        .map(|s| singletons(&s.observations, 0..s.observations.len()))
        .collect();

    let mut levels: Vec<GnnWeights> = Vec::new();
    for level in 0..config.levels.len() {
        let mut examples = Vec::new();
        for (s, t) in streams.iter().zip(&tracklets) {
            examples.extend(spread(level_examples(t, s, level, &config, true)?, curriculum.max_examples));
        }
        let base = if level == 0 { &curriculum.level_one } else { &curriculum.higher_levels };
        let tc = TrainConfig {
            seed: curriculum.seed.wrapping_mul(100).wrapping_add(level as u64),
            ..base.clone()
        };
        // deeper levels start from the level below
        let mut weights = match levels.last() {
            Some(prev) if level >= 2 => train_from(GnnWeights::clone(prev), &examples, &tc)?,
            _ => train(&examples, &tc)?,
        };
        if curriculum.global_window == Some(config.levels[level]) {
            let partial = HierarchyWeights::new(levels.iter().cloned().chain([weights.clone()]).collect());
            let global_config = HierarchyConfig {
                levels: config.levels[..=level].to_vec(),
                stride: config.levels[level],
                ..config.clone()
            };
            for s in &streams {
                examples.extend(spread(global_examples(s, &partial, &global_config)?, curriculum.max_examples));
            }
            weights = train_from(weights, &examples, &tc)?;
        }
        tracklets = streams
            .iter()
            .zip(tracklets)
            .map(|(s, t)| run_level(t, &s.observations, 0, level, &weights, &config))
            .collect::<Result<_>>()?;
        levels.push(weights);
    }
    Ok(HierarchyWeights::new(levels))
}

/// Labeled global-block graphs from near-online tracking of `stream`.
pub fn global_examples(
    stream: &SimulatedStream,
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
) -> Result<Vec<Example>> {
    let mut found = Vec::new();
    run_global(&stream.observations, weights, config, &mut |g| {
        let ids: Vec<Option<u64>> = g.nodes.iter().map(|n| majority_identity(&n.members, &stream.identities)).collect();
        let ex = Example::from_identities(g.clone(), &ids);
        if ex.num_positive() > 0 && ex.num_positive() < ex.labels.len() {
            found.push(ex);
        }
    })?;
    Ok(found)
}

/// Labeled graphs for level `level`, built from ground-truth fragments of
/// a held-out stream: used to measure edge AUROC.
pub fn evaluation_examples(
    stream: &SimulatedStream,
    weights: &HierarchyWeights,
    config: &HierarchyConfig,
    level: usize,
) -> Result<Vec<Example>> {
    let obs: &[Observation] = &stream.observations;
    let mut t = singletons(obs, 0..obs.len());
    for l in 0..level {
        t = run_level(t, obs, 0, l, &weights.levels[l], config)?;
    }
    level_examples(&t, stream, level, config, false)
}
