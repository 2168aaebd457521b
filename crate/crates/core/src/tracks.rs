//! Identity-consistent 3D trajectories.

use std::collections::{BTreeMap, HashSet};

use crate::geometry::WorldPoint;
use crate::reid::Embedding;
use crate::{Error, Result};

/// A verified 3D detection as seen by the trackers: ground position plus
/// multi-view mean appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: u32,
    pub position: WorldPoint,
    pub appearance: Embedding,
}

/// Fails unless observations are in non-decreasing frame order.
pub fn check_frame_order(observations: &[Observation]) -> Result<()> {
    match observations.windows(2).position(|w| w[0].frame > w[1].frame) {
        Some(i) => Err(Error::InvalidInput(format!(
            "observation {} is out of frame order",
            i + 1
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u32,
    pub position: WorldPoint,
    /// Index of the source observation, when the point came from one.
    pub observation: Option<usize>,
}

/// Identity → frame-ordered points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    tracks: BTreeMap<u64, Vec<TrackPoint>>,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a point, keeping the identity's points sorted by frame.
    pub fn push(&mut self, id: u64, point: TrackPoint) {
        let points = self.tracks.entry(id).or_default();
        match points.last() {
            Some(last) if last.frame >= point.frame => {
                let pos = points.partition_point(|p| p.frame < point.frame);
                points.insert(pos, point);
            }
            _ => points.push(point),
        }
    }

    pub fn insert_track(&mut self, id: u64, points: impl IntoIterator<Item = TrackPoint>) {
        for p in points {
            self.push(id, p);
        }
    }

    pub fn get(&self, id: u64) -> Option<&[TrackPoint]> {
        self.tracks.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[TrackPoint])> {
        self.tracks.iter().map(|(&id, pts)| (id, pts.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.tracks.keys().copied()
    }

    pub fn num_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn num_points(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_points() == 0
    }

    /// Points grouped by frame, identities ascending within each frame.
    pub fn by_frame(&self) -> BTreeMap<u32, Vec<(u64, WorldPoint)>> {
        let mut out: BTreeMap<u32, Vec<(u64, WorldPoint)>> = BTreeMap::new();
        for (&id, pts) in &self.tracks {
            for p in pts {
                out.entry(p.frame).or_default().push((id, p.position));
            }
        }
        out
    }

    /// Checks per-track strictly increasing frames and that no observation
    /// index appears twice.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (&id, pts) in &self.tracks {
            if pts.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return Err(Error::InvalidInput(format!(
                    "track {id} has non-increasing frames"
                )));
            }
            for p in pts {
                if let Some(o) = p.observation {
                    if !seen.insert(o) {
                        return Err(Error::InvalidInput(format!(
                            "observation {o} belongs to more than one track point"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps only points with `frame < end`.
    pub fn prefix(&self, end: u32) -> TrackSet {
        let mut out = TrackSet::new();
        for (&id, pts) in &self.tracks {
            let kept: Vec<_> = pts.iter().copied().filter(|p| p.frame < end).collect();
            if !kept.is_empty() {
                out.tracks.insert(id, kept);
            }
        }
        out
    }

    /// Renames identities through `f`; `f` must be injective.
    pub fn relabeled(&self, mut f: impl FnMut(u64) -> u64) -> TrackSet {
        TrackSet {
            tracks: self.tracks.iter().map(|(&id, pts)| (f(id), pts.clone())).collect(),
        }
    }

    /// Renumbers identities `0..n` in order of first appearance (frame, then old id).
    pub fn canonicalized(&self) -> TrackSet {
        let mut order: Vec<(u32, u64)> = self
            .tracks
            .iter()
            .filter_map(|(&id, pts)| pts.first().map(|p| (p.frame, id)))
            .collect();
        order.sort_unstable();
        TrackSet {
            tracks: order
                .into_iter()
                .enumerate()
                .map(|(new, (_, old))| (new as u64, self.tracks[&old].clone()))
                .collect(),
        }
    }

    pub fn map_points(&self, mut f: impl FnMut(&TrackPoint) -> TrackPoint) -> TrackSet {
        TrackSet {
            tracks: self
                .tracks
                .iter()
                .map(|(&id, pts)| (id, pts.iter().map(&mut f).collect()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(frame: u32, obs: Option<usize>) -> TrackPoint {
        TrackPoint {
            frame,
            position: WorldPoint::new(frame as f64, 0.0, 0.0),
            observation: obs,
        }
    }

    #[test]
    fn push_keeps_frames_sorted() {
        let mut t = TrackSet::new();
        t.push(1, pt(5, None));
        t.push(1, pt(2, None));
        t.push(1, pt(9, None));
        let frames: Vec<_> = t.get(1).unwrap().iter().map(|p| p.frame).collect();
        assert_eq!(frames, vec![2, 5, 9]);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn validation_rejects_duplicates() {
        let mut t = TrackSet::new();
        t.push(1, pt(1, Some(0)));
        t.push(1, pt(1, Some(1)));
        assert!(t.validate().is_err());
        let mut t = TrackSet::new();
        t.push(1, pt(1, Some(0)));
        t.push(2, pt(2, Some(0)));
        assert!(t.validate().is_err());
    }

    #[test]
    fn canonical_ids_follow_first_frame() {
        let mut t = TrackSet::new();
        t.push(9, pt(4, None));
        t.push(3, pt(7, None));
        t.push(5, pt(1, None));
        let c = t.canonicalized();
        assert_eq!(c.get(0).unwrap()[0].frame, 1);
        assert_eq!(c.get(1).unwrap()[0].frame, 4);
        assert_eq!(c.get(2).unwrap()[0].frame, 7);
        assert_eq!(t.prefix(5).num_points(), 2);
    }
}
