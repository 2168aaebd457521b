//! ReID embeddings, multi-view aggregation and retrieval evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::detections::{Detection2D, Detection3D};
use crate::{Error, Result};

pub const EMBEDDING_DIM: usize = 256;

const NORM_TOL: f64 = 1e-6;

/// A unit-norm appearance vector of dimension [`EMBEDDING_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Accepts a raw vector, renormalizing it when its norm drifts from one.
    pub fn from_raw(values: Vec<f32>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::ShapeMismatch(format!(
                "embedding has {} components, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding component".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() <= NORM_TOL {
            return Ok(Self(values));
        }
        normalize_f64(values.iter().map(|&v| v as f64).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// f64 dot product with eight interleaved accumulators, combined in a
/// fixed order.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x as f64 * y as f64).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] as f64 * y[i] as f64;
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Normalizes an f64 accumulator into an embedding.
pub(crate) fn normalize_f64(sum: Vec<f64>) -> Result<Embedding> {
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= 1e-9) {
        return Err(Error::DegenerateMean { norm });
    }
    Ok(Embedding(sum.iter().map(|v| (v / norm) as f32).collect()))
}

/// Mean of unit vectors, renormalized.
pub fn mean_embedding<'a>(items: impl IntoIterator<Item = &'a Embedding>) -> Result<Embedding> {
    let mut sum = vec![0.0f64; EMBEDDING_DIM];
    let mut count = 0usize;
    for e in items {
        for (s, &v) in sum.iter_mut().zip(&e.0) {
            *s += v as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no embeddings to average".into()));
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    normalize_f64(sum)
}

/// `1 - a·b` for unit vectors, clamped to `[0, 2]` against rounding.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> f64 {
    (1.0 - a.dot(b)).clamp(0.0, 2.0)
}

/// Where a 2D-crop embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewRef {
    pub frame: u32,
    pub camera_id: u32,
    pub det2d_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReIdEmbedding {
    pub source: ViewRef,
    pub vector: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedView {
    pub camera_id: u32,
    pub detection: Detection2D,
    pub embedding: ReIdEmbedding,
}

/// A verified 3D detection with its matched 2D views and their mean appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBundle {
    pub det3d: Detection3D,
    pub matched_views: Vec<MatchedView>,
    pub mean_embedding: Embedding,
}

/// Builds a bundle; views are put into `(camera_id, det2d_index)` order so
/// the mean does not depend on input order.
pub fn aggregate_views(det3d: Detection3D, mut views: Vec<MatchedView>) -> Result<ObservationBundle> {
    if views.is_empty() {
        return Err(Error::InsufficientData(
            "a bundle needs at least one matched view".into(),
        ));
    }
    views.sort_by_key(|v| (v.camera_id, v.embedding.source.det2d_index));
    let mean_embedding = mean_embedding(views.iter().map(|v| &v.embedding.vector))?;
    Ok(ObservationBundle {
        det3d,
        matched_views: views,
        mean_embedding,
    })
}

/// Embeddings keyed by their source view.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    items: HashMap<ViewRef, Embedding>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: ViewRef, embedding: Embedding) {
        self.items.insert(source, embedding);
    }

    pub fn get(&self, source: &ViewRef) -> Option<&Embedding> {
        self.items.get(source)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Entries in `ViewRef` order.
    pub fn sorted(&self) -> Vec<(ViewRef, &Embedding)> {
        let mut v: Vec<_> = self.items.iter().map(|(k, e)| (*k, e)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }
}

/// CMC ranks and mean average precision, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

/// Leave-one-out retrieval: every item queries all others, ranked by
/// cosine distance (ties by gallery position).
pub fn retrieval_eval(gallery: &[(u64, Embedding)]) -> Result<RetrievalMetrics> {
    let mut per_id: BTreeMap<u64, usize> = BTreeMap::new();
    for (id, _) in gallery {
        *per_id.entry(*id).or_default() += 1;
    }
    if per_id.len() < 2 {
        return Err(Error::InsufficientData("need at least two identities".into()));
    }
    if let Some((id, _)) = per_id.iter().find(|(_, &n)| n < 2) {
        return Err(Error::InsufficientData(format!(
            "identity {id} has a single observation"
        )));
    }

    let n = gallery.len();
    let (mut hits, mut ap_sum) = ([0usize; 3], 0.0);
    for q in 0..n {
        let (qid, qemb) = &gallery[q];
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&g| g != q)
            .map(|g| (cosine_distance(qemb, &gallery[g].1), g))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let first_hit = ranked.iter().position(|&(_, g)| gallery[g].0 == *qid);
        if let Some(pos) = first_hit {
            for (slot, k) in [1usize, 5, 10].iter().enumerate() {
                if pos < *k {
                    hits[slot] += 1;
                }
            }
        }
        let (mut found, mut precision_sum) = (0usize, 0.0);
        for (rank, &(_, g)) in ranked.iter().enumerate() {
            if gallery[g].0 == *qid {
                found += 1;
                precision_sum += found as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / found as f64;
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(RetrievalMetrics {
        rank1: pct(hits[0]),
        rank5: pct(hits[1]),
        rank10: pct(hits[2]),
        map: 100.0 * ap_sum / n as f64,
    })
}
