//! Per-camera 2D–3D detection association and 3D detection verification.
//!
//! Each 3D box is projected into a camera, compared with every 2D box of
//! that camera by the distance between bottom-center points (gated by IoU
//! and weighted by the occlusion factor), and the cost matrix is solved
//! with the Hungarian method. A 3D detection that matches nothing in any
//! camera is dropped.

mod hungarian;

pub use hungarian::{hungarian, CostMatrix};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detections::{Detection2D, Detection3D, DetectionConfig};
use crate::geometry::{project_box3d, CameraCalibration, PixelPoint, Rect};
use crate::{Error, Result};

/// Intersection over union of two rectangles; 0 when disjoint.
pub fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b).area();
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// The quantities that make up one entry of the association cost matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationCostTerms {
    pub bc3d: PixelPoint,
    pub bc2d: PixelPoint,
    pub iou: f64,
    pub lambda: f64,
    pub cost: f64,
}

pub fn assoc_cost_terms(proj3d: &Rect, det2d: &Rect, alpha: f64, iou_gate: f64) -> AssociationCostTerms {
    let bc3d = proj3d.bottom_center();
    let bc2d = det2d.bottom_center();
    let iou = rect_iou(proj3d, det2d);
    // image v grows downward: a 2D bottom below the projected bottom is penalized
    let lambda = if bc3d.v >= bc2d.v { 1.0 } else { alpha };
    let cost = if iou >= iou_gate {
        lambda * bc3d.distance(&bc2d)
    } else {
        f64::INFINITY
    };
    AssociationCostTerms {
        bc3d,
        bc2d,
        iou,
        lambda,
        cost,
    }
}

pub fn assoc_cost(proj3d: &Rect, det2d: &Rect, alpha: f64, iou_gate: f64) -> f64 {
    assoc_cost_terms(proj3d, det2d, alpha, iou_gate).cost
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub det3d: usize,
    pub det2d: usize,
    pub cost: f64,
}

/// Association output for one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    /// Per camera, matches sorted by 3D index.
    pub per_camera: BTreeMap<u32, Vec<Match>>,
    /// 3D indices matched in at least one camera.
    pub verified: BTreeSet<usize>,
    /// 3D indices that matched nothing.
    pub removed: Vec<usize>,
}

impl AssociationResult {
    /// The 3D detection a given 2D box was matched to, if any.
    pub fn partner_of(&self, camera_id: u32, det2d: usize) -> Option<usize> {
        self.per_camera
            .get(&camera_id)?
            .iter()
            .find(|m| m.det2d == det2d)
            .map(|m| m.det3d)
    }

    /// All `(camera_id, det2d)` views matched to a 3D detection.
    pub fn views_of(&self, det3d: usize) -> Vec<(u32, usize)> {
        self.per_camera
            .iter()
            .flat_map(|(&cam, ms)| {
                ms.iter()
                    .filter(move |m| m.det3d == det3d)
                    .map(move |m| (cam, m.det2d))
            })
            .collect()
    }
}

/// Matches one camera's 2D boxes against the projected 3D boxes.
pub fn associate_camera(
    dets3d: &[Detection3D],
    dets2d: &[Detection2D],
    cal: &CameraCalibration,
    config: &DetectionConfig,
) -> Vec<Match> {
    if dets3d.is_empty() || dets2d.is_empty() {
        return Vec::new();
    }
    let projected: Vec<Option<Rect>> = dets3d
        .iter()
        .map(|d| project_box3d(d, cal).ok().map(|(r, _)| r))
        .collect();
    let costs = CostMatrix::from_fn(dets3d.len(), dets2d.len(), |i, j| match &projected[i] {
        Some(rect) => assoc_cost(rect, &dets2d[j].rect, config.alpha, config.iou_gate),
        None => f64::INFINITY,
    });
    hungarian(&costs)
        .into_iter()
        .map(|(i, j)| Match {
            det3d: i,
            det2d: j,
            cost: costs.get(i, j),
        })
        .filter(|m| m.cost <= config.assoc_cost_limit)
        .collect()
}

/// Associates one frame across all calibrated cameras.
///
/// Cameras without an entry in `dets2d` contribute no matches.
pub fn associate_frame(
    dets3d: &[Detection3D],
    dets2d: &BTreeMap<u32, Vec<Detection2D>>,
    calibrations: &[CameraCalibration],
    config: &DetectionConfig,
) -> AssociationResult {
    let mut result = AssociationResult::default();
    for cal in calibrations {
        let boxes = dets2d.get(&cal.camera_id).map_or(&[][..], Vec::as_slice);
        let matches = associate_camera(dets3d, boxes, cal, config);
        result.verified.extend(matches.iter().map(|m| m.det3d));
        result.per_camera.insert(cal.camera_id, matches);
    }
    result.removed = (0..dets3d.len())
        .filter(|i| !result.verified.contains(i))
        .collect();
    result
}

/// Ground-truth partner of one 2D box; `det3d` is `None` when the box has
/// no true 3D detection in the evaluated set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruePair {
    pub camera_id: u32,
    pub det2d: usize,
    pub det3d: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccuracyCounts {
    pub correct: usize,
    pub total: usize,
}

impl AccuracyCounts {
    pub fn add(&mut self, other: AccuracyCounts) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn fraction(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyTruth);
        }
        Ok(self.correct as f64 / self.total as f64)
    }
}

pub fn assoc_accuracy_counts(predicted: &AssociationResult, truth: &[TruePair]) -> AccuracyCounts {
    let lookup: HashMap<(u32, usize), usize> = predicted
        .per_camera
        .iter()
        .flat_map(|(&cam, ms)| ms.iter().map(move |m| ((cam, m.det2d), m.det3d)))
        .collect();
    let mut counts = AccuracyCounts::default();
    for pair in truth {
        if let Some(true3d) = pair.det3d {
            counts.total += 1;
            if lookup.get(&(pair.camera_id, pair.det2d)) == Some(&true3d) {
                counts.correct += 1;
            }
        }
    }
    counts
}

/// Correct matches over ground-truth 2D boxes that have a true 3D partner.
pub fn assoc_accuracy(predicted: &AssociationResult, truth: &[TruePair]) -> Result<f64> {
    assoc_accuracy_counts(predicted, truth).fraction()
}
