//! Tracking evaluation on 3D ground-plane locations.
//!
//! HOTA and its DetA/AssA/LocA components use a distance-to-similarity
//! conversion with a zero-distance parameter. CLEAR (MOTA, MOTP, MT, ML)
//! and IDF1 match within a fixed distance threshold.

mod clear;
mod hota;

pub use clear::{clear_identity, ClearMetrics};
pub use hota::{hota, HotaMetrics};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;
use crate::tracks::TrackSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Distance in meters at which similarity reaches zero.
    pub zero_distance: f64,
    /// CLEAR / IDF1 matching threshold in meters.
    pub clear_threshold: f64,
    pub hota_alpha_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            zero_distance: 1.0,
            clear_threshold: 1.0,
            hota_alpha_grid: (1..20).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zero_distance > 0.0) || !(self.clear_threshold > 0.0) {
            return Err(Error::InvalidInput("evaluation distances must be positive".into()));
        }
        let grid = &self.hota_alpha_grid;
        if grid.is_empty()
            || grid.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            || grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidInput(
                "alpha grid must be strictly increasing inside (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// `max(0, 1 - d / zero_distance)` on the full 3D distance.
pub fn similarity(gt: &WorldPoint, pred: &WorldPoint, zero_distance: f64) -> f64 {
    (1.0 - gt.distance(pred) / zero_distance).max(0.0)
}

/// One frame's points, identities as dense indices.
pub(crate) struct FrameView {
    pub gt: Vec<(usize, WorldPoint)>,
    pub pred: Vec<(usize, WorldPoint)>,
}

/// Frame-aligned dense view of two track sets.
pub(crate) struct Aligned {
    pub num_gt_ids: usize,
    pub num_pred_ids: usize,
    pub frames: Vec<FrameView>,
}

pub(crate) fn align(gt: &TrackSet, pred: &TrackSet) -> Result<Aligned> {
    let gt_frames = gt.by_frame();
    let pred_frames = pred.by_frame();
    if !gt_frames.is_empty()
        && !pred_frames.is_empty()
        && gt_frames.keys().all(|f| !pred_frames.contains_key(f))
    {
        return Err(Error::MisalignedFrames);
    }
    let dense = |set: &TrackSet| -> BTreeMap<u64, usize> {
        set.ids().enumerate().map(|(i, id)| (id, i)).collect()
    };
    let (gmap, pmap) = (dense(gt), dense(pred));
    let all: BTreeSet<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let frames = all
        .into_iter()
        .map(|f| FrameView {
            gt: gt_frames
                .get(&f)
                .map(|v| v.iter().map(|(id, p)| (gmap[id], *p)).collect())
                .unwrap_or_default(),
            pred: pred_frames
                .get(&f)
                .map(|v| v.iter().map(|(id, p)| (pmap[id], *p)).collect())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Aligned {
        num_gt_ids: gmap.len(),
        num_pred_ids: pmap.len(),
        frames,
    })
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub hota: HotaMetrics,
    #[serde(flatten)]
    pub clear: ClearMetrics,
}

pub fn evaluate(gt: &TrackSet, pred: &TrackSet, config: &EvalConfig) -> Result<MetricsReport> {
    config.validate()?;
    Ok(MetricsReport {
        hota: hota(gt, pred, config)?,
        clear: clear_identity(gt, pred, config)?,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, HOTA family first.
    pub fn to_table(&self, label: &str) -> String {
        let cols = [
            ("HOTA", self.hota.hota),
            ("DetA", self.hota.deta),
            ("AssA", self.hota.assa),
            ("LocA", self.hota.loca),
            ("IDF1", self.clear.idf1),
            ("MOTA", self.clear.mota),
            ("MOTP", self.clear.motp),
            ("MT", self.clear.mt),
            ("ML", self.clear.ml),
        ];
        let width = label.len().max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Method");
        for (name, _) in &cols {
            let _ = write!(out, " {name:>7}");
        }
        out.push('\n');
        let _ = write!(out, "{label:<width$}");
        for (_, v) in &cols {
            let _ = write!(out, " {v:>7.2}");
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let o = WorldPoint::new(0.0, 0.0, 0.0);
        assert_eq!(similarity(&o, &o, 1.0), 1.0);
        assert_eq!(similarity(&o, &WorldPoint::new(1.0, 0.0, 0.0), 1.0), 0.0);
        assert_eq!(similarity(&o, &WorldPoint::new(3.0, 0.0, 0.0), 1.0), 0.0);
        assert!((similarity(&o, &WorldPoint::new(0.0, 0.25, 0.0), 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        assert_eq!(EvalConfig::default().hota_alpha_grid.len(), 19);
        let bad = EvalConfig {
            hota_alpha_grid: vec![0.5, 0.5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EvalConfig {
            zero_distance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
