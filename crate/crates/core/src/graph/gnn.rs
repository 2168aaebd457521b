//! Time-aware message passing over a track graph.
//!
//! Each step updates every edge from its two endpoint embeddings, its
//! current embedding and its initial embedding, then sends one message per
//! edge to each endpoint. A node aggregates messages from past edges and
//! from future edges separately; the two aggregates are concatenated and
//! added to the node embedding. Aggregation visits messages in a canonical
//! order (sorted by value), so relabeling nodes permutes the outputs
//! without changing a single bit.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::{sigmoid, Mlp, MlpCache};
use super::{TrackGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnDims {
    pub node: usize,
    pub edge: usize,
    pub hidden: usize,
    pub steps: usize,
}

impl Default for GnnDims {
    fn default() -> Self {
        Self {
            node: 32,
            edge: 16,
            hidden: 32,
            steps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnWeights {
    pub dims: GnnDims,
    pub aggregation: Aggregation,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub edge_update: Mlp,
    pub message_past: Mlp,
    pub message_future: Mlp,
    pub classifier: Mlp,
}

impl GnnWeights {
    pub fn random(dims: GnnDims, aggregation: Aggregation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dn, de, hd) = (dims.node, dims.edge, dims.hidden);
        Self {
            dims,
            aggregation,
            node_encoder: Mlp::random(&[NODE_FEATURES, dn], true, &mut rng),
            edge_encoder: Mlp::random(&[EDGE_FEATURES, hd, de], true, &mut rng),
            edge_update: Mlp::random(&[2 * dn + 2 * de, hd, de], true, &mut rng),
            message_past: Mlp::random(&[dn + de, dn / 2], true, &mut rng),
            message_future: Mlp::random(&[dn + de, dn / 2], true, &mut rng),
            classifier: Mlp::random(&[de, (de / 2).max(1), 1], false, &mut rng),
        }
    }

    pub fn zeros(dims: GnnDims, aggregation: Aggregation) -> Self {
        Self::random(dims, aggregation, 0).zeros_like()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            aggregation: self.aggregation,
            node_encoder: self.node_encoder.zeros_like(),
            edge_encoder: self.edge_encoder.zeros_like(),
            edge_update: self.edge_update.zeros_like(),
            message_past: self.message_past.zeros_like(),
            message_future: self.message_future.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    fn networks(&self) -> [&Mlp; 6] {
        [
            &self.node_encoder,
            &self.edge_encoder,
            &self.edge_update,
            &self.message_past,
            &self.message_future,
            &self.classifier,
        ]
    }

    /// Every parameter tensor in a fixed order.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.networks().into_iter().flat_map(Mlp::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        [
            &mut self.node_encoder,
            &mut self.edge_encoder,
            &mut self.edge_update,
            &mut self.message_past,
            &mut self.message_future,
            &mut self.classifier,
        ]
        .into_iter()
        .flat_map(Mlp::params_mut)
        .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let GnnDims { node: dn, edge: de, .. } = self.dims;
        if dn == 0 || de == 0 || dn % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "node dimension {dn} must be even and edge dimension {de} positive"
            )));
        }
        self.node_encoder.check(NODE_FEATURES, dn, "node encoder")?;
        self.edge_encoder.check(EDGE_FEATURES, de, "edge encoder")?;
        self.edge_update.check(2 * dn + 2 * de, de, "edge update")?;
        self.message_past.check(dn + de, dn / 2, "past messages")?;
        self.message_future.check(dn + de, dn / 2, "future messages")?;
        self.classifier.check(de, 1, "classifier")?;
        Ok(())
    }

    /// SHA-256 over the configuration and the bit patterns of all parameters.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.dims.node, self.dims.edge, self.dims.hidden, self.dims.steps] {
            h.update((v as u64).to_le_bytes());
        }
        h.update([self.aggregation as u8]);
        for p in self.params() {
            h.update((p.len() as u64).to_le_bytes());
            for v in p {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Embeddings after message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnState {
    pub node_dim: usize,
    pub edge_dim: usize,
    /// `nodes × node_dim`, row-major.
    pub nodes: Vec<f64>,
    /// `edges × edge_dim`, row-major.
    pub edges: Vec<f64>,
}

impl GnnState {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.edges[e * self.edge_dim..(e + 1) * self.edge_dim]
    }
}

struct StepCache {
    edge_update: MlpCache,
    past: MlpCache,
    future: MlpCache,
    /// For max aggregation: winning edge per node and component.
    argmax_past: Vec<Option<usize>>,
    argmax_future: Vec<Option<usize>>,
}

pub(crate) struct ForwardCache {
    node_encoder: MlpCache,
    edge_encoder: MlpCache,
    steps: Vec<StepCache>,
    classifier: MlpCache,
}

pub(crate) struct Forward {
    pub state: GnnState,
    pub logits: Vec<f64>,
    cache: Option<ForwardCache>,
}

struct Incidence {
    past: Vec<Vec<usize>>,
    future: Vec<Vec<usize>>,
}

fn incidence(graph: &TrackGraph) -> Incidence {
    let n = graph.nodes.len();
    let mut past = vec![Vec::new(); n];
    let mut future = vec![Vec::new(); n];
    for (k, e) in graph.edges.iter().enumerate() {
        past[e.target].push(k);
        future[e.source].push(k);
    }
    Incidence { past, future }
}

fn gather(parts: &[(&[f64], usize, &dyn Fn(usize) -> usize)], rows: usize) -> Vec<f64> {
    let width: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for (data, w, idx) in parts {
            let i = idx(r);
            out.extend_from_slice(&data[i * w..(i + 1) * w]);
        }
    }
    out
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Aggregates the messages of `edges` into `out` (width `w`); returns the
/// argmax edge per component for max aggregation.
fn aggregate(
    messages: &[f64],
    w: usize,
    edges: &[usize],
    mode: Aggregation,
    out: &mut [f64],
    argmax: &mut [Option<usize>],
) {
    if edges.is_empty() {
        return;
    }
    let row = |e: usize| &messages[e * w..(e + 1) * w];
    match mode {
        Aggregation::Max => {
            for c in 0..w {
                let mut best: Option<usize> = None;
                for &e in edges {
                    let better = match best {
                        None => true,
                        Some(b) => {
                            let o = row(e)[c].total_cmp(&row(b)[c]);
                            o.is_gt() || (o.is_eq() && lexicographic(row(e), row(b)).is_lt())
                        }
                    };
                    if better {
                        best = Some(e);
                    }
                }
                let b = best.expect("non-empty");
                out[c] = row(b)[c];
                argmax[c] = Some(b);
            }
        }
        Aggregation::Sum | Aggregation::Mean => {
            let mut order = edges.to_vec();
            order.sort_by(|&a, &b| lexicographic(row(a), row(b)));
            for &e in &order {
                for (o, v) in out.iter_mut().zip(row(e)) {
                    *o += v;
                }
            }
            if mode == Aggregation::Mean {
                let n = edges.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
    }
}

fn node_inputs(graph: &TrackGraph) -> Vec<f64> {
    graph.nodes.iter().flat_map(|n| n.raw_features()).collect()
}

fn edge_inputs(graph: &TrackGraph) -> Vec<f64> {
    graph.edges.iter().flat_map(|e| e.features.encoded()).collect()
}

pub(crate) fn forward(graph: &TrackGraph, weights: &GnnWeights, steps: usize, keep_cache: bool) -> Result<Forward> {
    weights.validate()?;
    let GnnDims { node: dn, edge: de, .. } = weights.dims;
    let half = dn / 2;
    let (n, m) = (graph.nodes.len(), graph.edges.len());
    let inc = incidence(graph);
    let src = |k: usize| graph.edges[k].source;
    let dst = |k: usize| graph.edges[k].target;

    let (mut h, node_cache) = weights.node_encoder.forward_cached(node_inputs(graph), n);
    let (e0, edge_cache) = weights.edge_encoder.forward_cached(edge_inputs(graph), m);
    let mut e = e0.clone();
    let mut step_caches = Vec::new();

    for _ in 0..steps {
        let x_e = gather(
            &[(&h, dn, &src), (&h, dn, &dst), (&e, de, &|k| k), (&e0, de, &|k| k)],
            m,
        );
        let (e_new, cu) = weights.edge_update.forward_cached(x_e, m);
        let x_p = gather(&[(&h, dn, &dst), (&e_new, de, &|k| k)], m);
        let (m_past, cp) = weights.message_past.forward_cached(x_p, m);
        let x_f = gather(&[(&h, dn, &src), (&e_new, de, &|k| k)], m);
        let (m_fut, cf) = weights.message_future.forward_cached(x_f, m);

        let mut argmax_past = vec![None; n * half];
        let mut argmax_future = vec![None; n * half];
        let mut agg = vec![0.0; half];
        for i in 0..n {
            let row = &mut h[i * dn..(i + 1) * dn];
            agg.iter_mut().for_each(|v| *v = 0.0);
            aggregate(&m_past, half, &inc.past[i], weights.aggregation, &mut agg, &mut argmax_past[i * half..(i + 1) * half]);
            for (r, a) in row[..half].iter_mut().zip(&agg) {
                *r += a;
            }
            agg.iter_mut().for_each(|v| *v = 0.0);
            aggregate(&m_fut, half, &inc.future[i], weights.aggregation, &mut agg, &mut argmax_future[i * half..(i + 1) * half]);
            for (r, a) in row[half..].iter_mut().zip(&agg) {
                *r += a;
            }
        }
        e = e_new;
        if keep_cache {
            step_caches.push(StepCache {
                edge_update: cu,
                past: cp,
                future: cf,
                argmax_past,
                argmax_future,
            });
        }
    }

    let (logits, class_cache) = weights.classifier.forward_cached(e.clone(), m);
    let cache = keep_cache.then(|| ForwardCache {
        node_encoder: node_cache,
        edge_encoder: edge_cache,
        steps: step_caches,
        classifier: class_cache,
    });
    Ok(Forward {
        state: GnnState {
            node_dim: dn,
            edge_dim: de,
            nodes: h,
            edges: e,
        },
        logits,
        cache,
    })
}

/// Gradient of a loss with respect to all parameters, given `dL/dlogit`.
pub(crate) fn backward(graph: &TrackGraph, weights: &GnnWeights, fwd: &Forward, dlogits: &[f64]) -> GnnWeights {
    let cache = fwd.cache.as_ref().expect("forward pass kept its cache");
    let GnnDims { node: dn, edge: de, .. } = weights.dims;
    let half = dn / 2;
    let (n, m) = (graph.nodes.len(), graph.edges.len());
    let inc = incidence(graph);
    let mut grad = weights.zeros_like();

    let mut de_cur = weights.classifier.backward(&cache.classifier, dlogits.to_vec(), &mut grad.classifier);
    let mut dh = vec![0.0; n * dn];
    let mut de0 = vec![0.0; m * de];

    for sc in cache.steps.iter().rev() {
        // h' = h + agg: the residual passes dh through unchanged.
        let mut dm_past = vec![0.0; m * half];
        let mut dm_fut = vec![0.0; m * half];
        for i in 0..n {
            let g = &dh[i * dn..(i + 1) * dn];
            distribute(&g[..half], &inc.past[i], weights.aggregation, &sc.argmax_past[i * half..(i + 1) * half], &mut dm_past, half);
            distribute(&g[half..], &inc.future[i], weights.aggregation, &sc.argmax_future[i * half..(i + 1) * half], &mut dm_fut, half);
        }
        let mut de_new = de_cur;
        let dx_p = weights.message_past.backward(&sc.past, dm_past, &mut grad.message_past);
        let dx_f = weights.message_future.backward(&sc.future, dm_fut, &mut grad.message_future);
        let wp = dn + de;
        for (k, edge) in graph.edges.iter().enumerate() {
            let xp = &dx_p[k * wp..(k + 1) * wp];
            let xf = &dx_f[k * wp..(k + 1) * wp];
            add(&mut dh[edge.target * dn..(edge.target + 1) * dn], &xp[..dn]);
            add(&mut dh[edge.source * dn..(edge.source + 1) * dn], &xf[..dn]);
            let d = &mut de_new[k * de..(k + 1) * de];
            add(d, &xp[dn..]);
            add(d, &xf[dn..]);
        }
        let dx_e = weights.edge_update.backward(&sc.edge_update, de_new, &mut grad.edge_update);
        let we = 2 * dn + 2 * de;
        let mut de_prev = vec![0.0; m * de];
        for (k, edge) in graph.edges.iter().enumerate() {
            let x = &dx_e[k * we..(k + 1) * we];
            add(&mut dh[edge.source * dn..(edge.source + 1) * dn], &x[..dn]);
            add(&mut dh[edge.target * dn..(edge.target + 1) * dn], &x[dn..2 * dn]);
            add(&mut de_prev[k * de..(k + 1) * de], &x[2 * dn..2 * dn + de]);
            add(&mut de0[k * de..(k + 1) * de], &x[2 * dn + de..]);
        }
        de_cur = de_prev;
    }
    // the first step's current edge embedding is the initial one
    add(&mut de0, &de_cur);
    weights.edge_encoder.backward(&cache.edge_encoder, de0, &mut grad.edge_encoder);
    weights.node_encoder.backward(&cache.node_encoder, dh, &mut grad.node_encoder);
    grad
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn distribute(g: &[f64], edges: &[usize], mode: Aggregation, argmax: &[Option<usize>], dm: &mut [f64], w: usize) {
    if edges.is_empty() {
        return;
    }
    match mode {
        Aggregation::Sum | Aggregation::Mean => {
            let scale = if mode == Aggregation::Mean { 1.0 / edges.len() as f64 } else { 1.0 };
            for &e in edges {
                for (d, v) in dm[e * w..(e + 1) * w].iter_mut().zip(g) {
                    *d += v * scale;
                }
            }
        }
        Aggregation::Max => {
            for (c, winner) in argmax.iter().enumerate() {
                if let Some(e) = winner {
                    dm[e * w + c] += g[c];
                }
            }
        }
    }
}

/// Runs `steps` rounds of message passing from the encoded raw features.
pub fn message_passing(graph: &TrackGraph, weights: &GnnWeights, steps: usize) -> Result<GnnState> {
    Ok(forward(graph, weights, steps, false)?.state)
}

/// Sigmoid edge scores from final edge embeddings.
pub fn classify_edges(state: &GnnState, weights: &GnnWeights) -> Vec<f64> {
    let rows = state.edges.len() / state.edge_dim.max(1);
    weights
        .classifier
        .forward(&state.edges, rows)
        .into_iter()
        .map(sigmoid)
        .collect()
}

/// Message passing followed by classification.
pub fn score_edges(graph: &TrackGraph, weights: &GnnWeights, steps: usize) -> Result<Vec<f64>> {
    let f = forward(graph, weights, steps, false)?;
    Ok(f.logits.into_iter().map(sigmoid).collect())
}
