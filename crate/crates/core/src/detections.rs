//! Detection records, confidence filtering and circle NMS.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{Rect, WorldPoint};
use crate::{Error, Result};

/// Default person box `(width, length, height)` in meters.
pub const DEFAULT_DIMS: [f64; 3] = [0.6, 0.6, 1.7];

/// A per-camera pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub camera_id: u32,
    pub frame: u32,
    pub rect: Rect,
    pub confidence: f64,
}

impl Detection2D {
    pub fn validate(&self) -> Result<()> {
        if !self.rect.is_valid() {
            return Err(Error::InvalidInput(format!("degenerate 2D box {:?}", self.rect)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!("confidence {} outside [0,1]", self.confidence)));
        }
        Ok(())
    }
}

/// A bird's-eye-view 3D box. `center` is the geometric center of the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection3D {
    pub frame: u32,
    pub center: WorldPoint,
    /// `(width, length, height)`; length runs along the heading.
    pub dims: [f64; 3],
    pub yaw: f64,
    pub confidence: f64,
}

impl Detection3D {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput(format!("non-positive box dims {:?}", self.dims)));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(Error::InvalidInput(format!("yaw {} outside [-pi, pi)", self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!("confidence {} outside [0,1]", self.confidence)));
        }
        if !self.center.is_finite() {
            return Err(Error::InvalidInput("non-finite box center".into()));
        }
        Ok(())
    }

    /// The eight box corners, bottom face first.
    pub fn corners(&self) -> [WorldPoint; 8] {
        let [w, l, h] = self.dims;
        let (s, c) = self.yaw.sin_cos();
        let mut out = [WorldPoint::default(); 8];
        let mut idx = 0;
        for dz in [-0.5, 0.5] {
            for (dl, dw) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
                let (lx, ly) = (dl * l, dw * w);
                out[idx] = WorldPoint::new(
                    self.center.x + c * lx - s * ly,
                    self.center.y + s * lx + c * ly,
                    self.center.z + dz * h,
                );
                idx += 1;
            }
        }
        out
    }

    /// Center of the box footprint on the ground.
    pub fn bottom_center(&self) -> WorldPoint {
        WorldPoint::new(self.center.x, self.center.y, self.center.z - 0.5 * self.dims[2])
    }
}

/// Thresholds for filtering, NMS and 2D–3D association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub score_threshold: f64,
    /// Circle NMS radius in meters.
    pub nms_radius: f64,
    /// Matches costing more than this are discarded after assignment.
    pub assoc_cost_limit: f64,
    pub iou_gate: f64,
    /// Penalty factor applied when the 2D box bottom lies below the projected 3D bottom.
    pub alpha: f64,
    pub default_dims: [f64; 3],
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.4,
            nms_radius: 0.2,
            assoc_cost_limit: 150.0,
            iou_gate: 0.1,
            alpha: 2.0,
            default_dims: DEFAULT_DIMS,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad("score_threshold must lie in [0,1]");
        }
        if !(self.nms_radius >= 0.0) {
            return bad("nms_radius must be >= 0");
        }
        if !(self.alpha > 1.0) {
            return bad("alpha must be > 1");
        }
        if !(self.iou_gate > 0.0 && self.iou_gate <= 1.0) {
            return bad("iou_gate must lie in (0,1]");
        }
        if !(self.assoc_cost_limit >= 0.0) {
            return bad("assoc_cost_limit must be >= 0");
        }
        if self.default_dims.iter().any(|d| !(*d > 0.0)) {
            return bad("default_dims must be positive");
        }
        Ok(())
    }
}

/// Indices of detections with `confidence >= threshold`, in input order.
pub fn filter_by_score_indices(dets: &[Detection3D], threshold: f64) -> Vec<usize> {
    dets.iter()
        .enumerate()
        .filter(|(_, d)| d.confidence >= threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn filter_by_score(dets: &[Detection3D], threshold: f64) -> Vec<Detection3D> {
    filter_by_score_indices(dets, threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Greedy circle NMS; returns kept indices in input order.
///
/// Detections are visited by descending confidence (lower index first on
/// ties). One is suppressed when its ground-plane distance to an already
/// kept detection of the same frame is below `radius`.
pub fn circle_nms_indices(dets: &[Detection3D], radius: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].frame == dets[i].frame
                && dets[k].center.ground_distance(&dets[i].center) < radius
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn circle_nms(dets: &[Detection3D], radius: f64) -> Vec<Detection3D> {
    circle_nms_indices(dets, radius)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(frame: u32, x: f64, y: f64, conf: f64) -> Detection3D {
        Detection3D {
            frame,
            center: WorldPoint::new(x, y, 0.85),
            dims: DEFAULT_DIMS,
            yaw: 0.0,
            confidence: conf,
        }
    }

    // O(n^2) reference: a detection survives iff no strictly better-ranked
    // survivor lies within the radius.
    fn reference_nms(dets: &[Detection3D], radius: f64) -> Vec<usize> {
        let better = |a: usize, b: usize| {
            dets[a].confidence > dets[b].confidence
                || (dets[a].confidence == dets[b].confidence && a < b)
        };
        let n = dets.len();
        let mut rank: Vec<usize> = (0..n).collect();
        // insertion by "better" without using sort_by on confidence
        for i in 1..n {
            let mut j = i;
            while j > 0 && better(rank[j], rank[j - 1]) {
                rank.swap(j, j - 1);
                j -= 1;
            }
        }
        let mut alive = vec![false; n];
        for &i in &rank {
            alive[i] = (0..n).all(|k| {
                !(alive[k]
                    && better(k, i)
                    && dets[k].frame == dets[i].frame
                    && ((dets[k].center.x - dets[i].center.x).powi(2)
                        + (dets[k].center.y - dets[i].center.y).powi(2))
                    .sqrt()
                        < radius)
            });
        }
        (0..n).filter(|&i| alive[i]).collect()
    }

    #[test]
    fn threshold_zero_keeps_everything() {
        let dets = vec![det(0, 0.0, 0.0, 0.0), det(0, 1.0, 0.0, 0.3)];
        assert_eq!(filter_by_score(&dets, 0.0), dets);
    }

    #[test]
    fn threshold_one_drops_everything_below_one() {
        let dets = vec![det(0, 0.0, 0.0, 0.99), det(0, 1.0, 0.0, 0.3)];
        assert!(filter_by_score(&dets, 1.0).is_empty());
    }

    #[test]
    fn mixed_filter_matches_scan() {
        let confs = [0.1, 0.5, 0.49, 0.9, 0.5, 0.0, 1.0];
        let dets: Vec<_> = confs.iter().enumerate().map(|(i, &c)| det(0, i as f64, 0.0, c)).collect();
        let mut expected = Vec::new();
        for d in &dets {
            if d.confidence >= 0.5 {
                expected.push(*d);
            }
        }
        assert_eq!(filter_by_score(&dets, 0.5), expected);
    }

    #[test]
    fn close_pair_keeps_higher_confidence() {
        let dets = vec![det(0, 0.0, 0.0, 0.6), det(0, 0.1, 0.0, 0.8)];
        assert_eq!(circle_nms_indices(&dets, 0.2), vec![1]);
    }

    #[test]
    fn far_pair_survives() {
        let dets = vec![det(0, 0.0, 0.0, 0.6), det(0, 0.5, 0.0, 0.8)];
        assert_eq!(circle_nms_indices(&dets, 0.2), vec![0, 1]);
    }

    #[test]
    fn different_frames_never_suppress() {
        let dets = vec![det(0, 0.0, 0.0, 0.6), det(1, 0.0, 0.0, 0.8)];
        assert_eq!(circle_nms_indices(&dets, 0.2).len(), 2);
    }

    #[test]
    fn equal_confidence_prefers_lower_index() {
        let dets = vec![det(0, 0.0, 0.0, 0.7), det(0, 0.05, 0.0, 0.7)];
        assert_eq!(circle_nms_indices(&dets, 0.2), vec![0]);
    }

    #[test]
    fn z_is_ignored() {
        let mut b = det(0, 0.1, 0.0, 0.5);
        b.center.z = 5.0;
        let dets = vec![det(0, 0.0, 0.0, 0.9), b];
        assert_eq!(circle_nms_indices(&dets, 0.2), vec![0]);
    }

    #[test]
    fn validation_catches_bad_boxes() {
        let mut d = det(0, 0.0, 0.0, 0.5);
        assert!(d.validate().is_ok());
        d.dims[1] = 0.0;
        assert!(d.validate().is_err());
        let mut d = det(0, 0.0, 0.0, 0.5);
        d.yaw = PI;
        assert!(d.validate().is_err());
        let mut d = det(0, 0.0, 0.0, 0.5);
        d.confidence = 1.5;
        assert!(d.validate().is_err());
        let cfg = DetectionConfig {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(DetectionConfig::default().validate().is_ok());
    }

    #[test]
    fn corners_have_box_extent() {
        let d = Detection3D {
            yaw: 0.3,
            ..det(0, 1.0, 2.0, 0.5)
        };
        let cs = d.corners();
        let zmin = cs.iter().map(|c| c.z).fold(f64::INFINITY, f64::min);
        let zmax = cs.iter().map(|c| c.z).fold(f64::NEG_INFINITY, f64::max);
        assert!((zmax - zmin - 1.7).abs() < 1e-12);
        let diag = cs[0].ground_distance(&cs[2]);
        assert!((diag - (0.6f64 * 0.6 * 2.0).sqrt()).abs() < 1e-12);
        assert!((d.bottom_center().z - 0.0).abs() < 1e-12);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection3D>> {
        prop::collection::vec(
            (0u32..2, 0.0..2.0f64, 0.0..2.0f64, 0.0..1.0f64),
            0..20,
        )
        .prop_map(|v| v.into_iter().map(|(f, x, y, c)| det(f, x, y, (c * 10.0).round() / 10.0)).collect())
    }

    proptest! {
        #[test]
        fn nms_matches_reference(dets in arb_dets(), radius in 0.0..1.0f64) {
            prop_assert_eq!(circle_nms_indices(&dets, radius), reference_nms(&dets, radius));
        }

        #[test]
        fn nms_is_idempotent_and_separated(dets in arb_dets(), radius in 0.0..1.0f64) {
            let once = circle_nms(&dets, radius);
            let twice = circle_nms(&once, radius);
            prop_assert_eq!(&once, &twice);
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    if a.frame == b.frame {
                        prop_assert!(a.center.ground_distance(&b.center) >= radius);
                    }
                }
            }
        }

        #[test]
        fn filter_then_nms_is_unmodified_subset(dets in arb_dets(), t in 0.0..1.0f64) {
            let out = circle_nms(&filter_by_score(&dets, t), 0.2);
            for d in &out {
                prop_assert!(dets.contains(d));
            }
        }
    }
}
