//! Deterministic synthetic multi-camera scenes.
//!
//! Objects walk between random waypoints on a rectangular floor plan and
//! disappear for whole occlusion gaps. Cameras sit around the perimeter and
//! look at the center. Each frame's detections and embeddings are drawn from
//! an RNG stream keyed by `(seed, frame)`, so frames can be generated in any
//! order and long scenes can be streamed without holding them in memory.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::association::TruePair;
use crate::detections::{Detection2D, Detection3D, DEFAULT_DIMS};
use crate::geometry::{project, project_box3d, CameraCalibration, Rect, WorldPoint};
use crate::reid::{normalize_f64, Embedding, EMBEDDING_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-axis 3D center noise, meters.
    pub pos_sigma: f64,
    /// Per-coordinate 2D box jitter, pixels.
    pub box_jitter: f64,
    /// Drop probability for 2D boxes and for raw 3D miss events. 3D misses
    /// are only emitted when isolated from other misses and occlusions.
    pub miss_rate: f64,
    /// Expected false-positive 3D detections per frame.
    pub fp_rate: f64,
    /// Per-component embedding noise before renormalization.
    pub embedding_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pos_sigma: 0.05,
            box_jitter: 2.0,
            miss_rate: 0.02,
            fp_rate: 0.2,
            embedding_sigma: 0.1,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            pos_sigma: 0.0,
            box_jitter: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            embedding_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub height: f64,
    /// Distance of the camera ring outside the floor plan, meters.
    pub margin: f64,
    pub focal: f64,
    pub image_size: (u32, u32),
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            height: 6.0,
            margin: 2.0,
            focal: 900.0,
            image_size: (1920, 1080),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// `(x_min, x_max, y_min, y_max)` in meters.
    pub extent: (f64, f64, f64, f64),
    pub num_objects: usize,
    pub num_cameras: usize,
    pub num_frames: u32,
    /// Walking speed range, meters per frame.
    pub speed_range: (f64, f64),
    pub gaps_per_object: u32,
    pub min_gap: u32,
    pub max_gap: u32,
    pub dims: [f64; 3],
    pub noise: NoiseSpec,
    pub cameras: CameraRig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: (0.0, 20.0, 0.0, 15.0),
            num_objects: 10,
            num_cameras: 7,
            num_frames: 300,
            speed_range: (0.02, 0.06),
            gaps_per_object: 0,
            min_gap: 10,
            max_gap: 60,
            dims: DEFAULT_DIMS,
            noise: NoiseSpec::default(),
            cameras: CameraRig::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("scene spec: {m}")));
        let (x0, x1, y0, y1) = self.extent;
        if !(x0 < x1 && y0 < y1) {
            return bad("degenerate extent");
        }
        if self.num_cameras == 0 {
            return bad("at least one camera is required");
        }
        let (s0, s1) = self.speed_range;
        if !(0.0 <= s0 && s0 <= s1) {
            return bad("invalid speed range");
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.miss_rate) || !(0.0..=1.0).contains(&n.fp_rate) {
            return bad("rates must lie in [0,1]");
        }
        if !(n.pos_sigma >= 0.0 && n.box_jitter >= 0.0 && n.embedding_sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self.gaps_per_object > 0 && !(1 <= self.min_gap && self.min_gap <= self.max_gap && self.max_gap < self.num_frames) {
            return bad("gap lengths must satisfy 1 <= min_gap <= max_gap < num_frames");
        }
        if self.dims.iter().any(|d| !(*d > 0.0)) {
            return bad("dims must be positive");
        }
        if !(self.cameras.focal > 0.0 && self.cameras.height > 0.0) {
            return bad("camera focal length and height must be positive");
        }
        Ok(())
    }

    fn area(&self) -> f64 {
        let (x0, x1, y0, y1) = self.extent;
        (x1 - x0) * (y1 - y0)
    }
}

/// One simulated identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub identity: u64,
    pub dims: [f64; 3],
    /// Box center for every frame, including occluded ones.
    pub positions: Vec<WorldPoint>,
    pub headings: Vec<f64>,
    /// Half-open occluded frame ranges, sorted.
    pub gaps: Vec<(u32, u32)>,
    pub base_embedding: Embedding,
}

impl ObjectTruth {
    pub fn is_occluded(&self, frame: u32) -> bool {
        self.gaps.iter().any(|&(a, b)| (a..b).contains(&frame))
    }

    pub fn box_at(&self, frame: u32) -> Detection3D {
        Detection3D {
            frame,
            center: self.positions[frame as usize],
            dims: self.dims,
            yaw: self.headings[frame as usize],
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub num_frames: u32,
    pub objects: Vec<ObjectTruth>,
}

impl GroundTruth {
    /// True when the object is present and its box projects into the camera
    /// with the footprint center inside the image.
    pub fn is_visible(&self, object: usize, frame: u32, cal: &CameraCalibration) -> bool {
        let obj = &self.objects[object];
        if obj.is_occluded(frame) {
            return false;
        }
        let b = obj.box_at(frame);
        if project_box3d(&b, cal).is_err() {
            return false;
        }
        matches!(project(&b.bottom_center(), cal), Ok((px, _)) if cal.image_rect().contains(&px))
    }

    /// Visible ground-truth tracks as a track set (identity → box centers).
    pub fn track_set(&self) -> crate::tracks::TrackSet {
        let mut out = crate::tracks::TrackSet::new();
        for obj in &self.objects {
            out.insert_track(
                obj.identity,
                (0..self.num_frames)
                    .filter(|&f| !obj.is_occluded(f))
                    .map(|f| crate::tracks::TrackPoint {
                        frame: f,
                        position: obj.positions[f as usize],
                        observation: None,
                    }),
            );
        }
        out
    }
}

/// Builds ground truth and perimeter cameras for `spec`.
pub fn generate(spec: &SceneSpec) -> Result<(GroundTruth, Vec<CameraCalibration>)> {
    spec.validate()?;
    if spec.num_objects as f64 > spec.area() {
        return Err(Error::InfeasibleSpec(format!(
            "{} objects do not fit in {:.1} m^2",
            spec.num_objects,
            spec.area()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cameras = place_cameras(spec)?;
    let (x0, x1, y0, y1) = spec.extent;
    let margin = 0.5f64.min(0.25 * (x1 - x0)).min(0.25 * (y1 - y0));
    let sample_point = |rng: &mut ChaCha8Rng| {
        (
            rng.random_range(x0 + margin..=x1 - margin),
            rng.random_range(y0 + margin..=y1 - margin),
        )
    };

    let mut starts: Vec<(f64, f64)> = Vec::with_capacity(spec.num_objects);
    for _ in 0..spec.num_objects {
        let mut p = sample_point(&mut rng);
        for _ in 0..100 {
            if starts.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= 1.0) {
                break;
            }
            p = sample_point(&mut rng);
        }
        starts.push(p);
    }

    let n = spec.num_frames as usize;
    let z = 0.5 * spec.dims[2];
    let mut objects = Vec::with_capacity(spec.num_objects);
    for (idx, start) in starts.into_iter().enumerate() {
        let speed = rng.random_range(spec.speed_range.0..=spec.speed_range.1);
        let mut pos = start;
        let mut goal = sample_point(&mut rng);
        let mut heading = 0.0;
        let mut positions = Vec::with_capacity(n);
        let mut headings = Vec::with_capacity(n);
        for _ in 0..n {
            positions.push(WorldPoint::new(pos.0, pos.1, z));
            let (dx, dy) = (goal.0 - pos.0, goal.1 - pos.1);
            let d = dx.hypot(dy);
            if d > 1e-9 {
                heading = wrap_angle(dy.atan2(dx));
            }
            headings.push(heading);
            if d <= speed {
                pos = goal;
                goal = sample_point(&mut rng);
            } else {
                pos = (pos.0 + dx / d * speed, pos.1 + dy / d * speed);
            }
        }
        let gaps = sample_gaps(spec, &mut rng);
        let base: Vec<f64> = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        objects.push(ObjectTruth {
            identity: idx as u64,
            dims: spec.dims,
            positions,
            headings,
            gaps,
            base_embedding: normalize_f64(base)?,
        });
    }
    Ok((
        GroundTruth {
            num_frames: spec.num_frames,
            objects,
        },
        cameras,
    ))
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

fn place_cameras(spec: &SceneSpec) -> Result<Vec<CameraCalibration>> {
    let (x0, x1, y0, y1) = spec.extent;
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let rig = &spec.cameras;
    let (ax, ay) = (0.5 * (x1 - x0) + rig.margin, 0.5 * (y1 - y0) + rig.margin);
    let (w, h) = rig.image_size;
    let k = Matrix3::new(
        rig.focal, 0.0, w as f64 / 2.0, //
        0.0, rig.focal, h as f64 / 2.0, //
        0.0, 0.0, 1.0,
    );
    (0..spec.num_cameras)
        .map(|i| {
            let theta = 2.0 * PI * (i as f64 + 0.125) / spec.num_cameras as f64;
            let position = WorldPoint::new(cx + ax * theta.cos(), cy + ay * theta.sin(), rig.height);
            let target = WorldPoint::new(cx, cy, 0.0);
            CameraCalibration::look_at(i as u32, k, position, target, rig.image_size)
        })
        .collect()
}

/// Non-overlapping occlusion gaps separated by at least two visible frames.
fn sample_gaps(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut gaps: Vec<(u32, u32)> = Vec::new();
    for _ in 0..spec.gaps_per_object {
        for _attempt in 0..50 {
            let len = rng.random_range(spec.min_gap..=spec.max_gap);
            if len + 2 > spec.num_frames {
                break;
            }
            let start = rng.random_range(1..=spec.num_frames - len - 1);
            let end = start + len;
            if gaps.iter().all(|&(a, b)| end + 2 <= a || b + 2 <= start) {
                gaps.push((start, end));
                break;
            }
        }
    }
    gaps.sort_unstable();
    gaps
}

/// Everything the sensors report for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame: u32,
    pub dets3d: Vec<Detection3D>,
    /// Identity behind each 3D detection; `None` for false positives.
    pub det3d_identity: Vec<Option<u64>>,
    pub dets2d: BTreeMap<u32, Vec<Detection2D>>,
    /// Embedding of each 2D box, same layout as `dets2d`.
    pub embeddings: BTreeMap<u32, Vec<Embedding>>,
    pub truth: Vec<TruthRecord>,
}

/// True origin of one 2D box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: u32,
    pub camera_id: u32,
    pub det2d_index: usize,
    pub det3d_index: Option<usize>,
    pub identity: u64,
}

impl FrameObservation {
    pub fn true_pairs(&self) -> Vec<TruePair> {
        self.truth
            .iter()
            .map(|t| TruePair {
                camera_id: t.camera_id,
                det2d: t.det2d_index,
                det3d: t.det3d_index,
            })
            .collect()
    }
}

fn frame_rng(seed: u64, frame: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Sensor output for a single frame.
pub fn observe_frame(
    truth: &GroundTruth,
    cameras: &[CameraCalibration],
    spec: &SceneSpec,
    frame: u32,
) -> FrameObservation {
    let noise = &spec.noise;
    let mut rng = frame_rng(spec.seed, frame);
    let pos_noise = Normal::new(0.0, noise.pos_sigma).expect("finite sigma");
    let jitter = Normal::new(0.0, noise.box_jitter).expect("finite sigma");
    let emb_noise = Normal::new(0.0, noise.embedding_sigma).expect("finite sigma");

    let mut dets3d = Vec::new();
    let mut det3d_identity = Vec::new();
    let mut det3d_of_object = vec![None; truth.objects.len()];
    for (k, obj) in truth.objects.iter().enumerate() {
        if obj.is_occluded(frame) {
            continue;
        }
        let confidence = rng.random_range(0.6..=1.0);
        let offset = [pos_noise.sample(&mut rng), pos_noise.sample(&mut rng), pos_noise.sample(&mut rng)];
        if dropped_3d(obj, k, spec, frame) {
            continue;
        }
        let mut b = obj.box_at(frame);
        b.center = WorldPoint::new(b.center.x + offset[0], b.center.y + offset[1], b.center.z + offset[2]);
        b.confidence = confidence;
        det3d_of_object[k] = Some(dets3d.len());
        dets3d.push(b);
        det3d_identity.push(Some(obj.identity));
    }

    let num_fp = if noise.fp_rate > 0.0 {
        Poisson::new(noise.fp_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let (x0, x1, y0, y1) = spec.extent;
    for _ in 0..num_fp {
        dets3d.push(Detection3D {
            frame,
            center: WorldPoint::new(rng.random_range(x0..x1), rng.random_range(y0..y1), 0.5 * spec.dims[2]),
            dims: spec.dims,
            yaw: rng.random_range(-PI..PI),
            confidence: rng.random_range(0.05..0.5),
        });
        det3d_identity.push(None);
    }

    let mut dets2d = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    let mut records = Vec::new();
    for cal in cameras {
        let mut boxes = Vec::new();
        let mut embs = Vec::new();
        for (k, obj) in truth.objects.iter().enumerate() {
            if !truth.is_visible(k, frame, cal) {
                continue;
            }
            let dropped = rng.random_bool(noise.miss_rate);
            let d: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
            let raw: Vec<f64> = obj
                .base_embedding
                .as_slice()
                .iter()
                .map(|&v| v as f64 + emb_noise.sample(&mut rng))
                .collect();
            let confidence = rng.random_range(0.5..=1.0);
            if dropped {
                continue;
            }
            let Ok((rect, _)) = project_box3d(&obj.box_at(frame), cal) else {
                continue;
            };
            let jittered = Rect::new(
                rect.u_min + d[0],
                rect.v_min + d[1],
                rect.u_max + d[2],
                rect.v_max + d[3],
            )
            .intersection(&cal.image_rect());
            if !jittered.is_valid() {
                continue;
            }
            let Ok(embedding) = normalize_f64(raw) else {
                continue;
            };
            records.push(TruthRecord {
                frame,
                camera_id: cal.camera_id,
                det2d_index: boxes.len(),
                det3d_index: det3d_of_object[k],
                identity: obj.identity,
            });
            boxes.push(Detection2D {
                camera_id: cal.camera_id,
                frame,
                rect: jittered,
                confidence,
            });
            embs.push(embedding);
        }
        dets2d.insert(cal.camera_id, boxes);
        embeddings.insert(cal.camera_id, embs);
    }

    FrameObservation {
        frame,
        dets3d,
        det3d_identity,
        dets2d,
        embeddings,
        truth: records,
    }
}

/// Raw per-(object, frame) miss event, independent of generation order.
fn miss_event(seed: u64, object: usize, frame: u32, rate: f64) -> bool {
    let mut z = seed
        ^ (object as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (frame as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ((z >> 11) as f64 / (1u64 << 53) as f64) < rate
}

/// A 3D miss is emitted only when it is isolated: both neighbouring frames
/// are present and the previous frame had no miss event. Emitted gaps
/// therefore never exceed the occlusion gaps.
fn dropped_3d(obj: &ObjectTruth, object: usize, spec: &SceneSpec, frame: u32) -> bool {
    let rate = spec.noise.miss_rate;
    if rate >= 1.0 {
        return true;
    }
    if frame == 0 || frame + 1 >= spec.num_frames || obj.is_occluded(frame - 1) || obj.is_occluded(frame + 1) {
        return false;
    }
    miss_event(spec.seed, object, frame, rate) && !miss_event(spec.seed, object, frame - 1, rate)
}

/// Sensor output for every frame.
pub fn observe(truth: &GroundTruth, cameras: &[CameraCalibration], spec: &SceneSpec) -> Vec<FrameObservation> {
    (0..truth.num_frames)
        .map(|f| observe_frame(truth, cameras, spec, f))
        .collect()
}

/// `per_id` noisy views of each of `ids` random identities, labeled by
/// identity, with the observation noise model.
pub fn embedding_gallery(seed: u64, ids: usize, per_id: usize, sigma: f64) -> Result<Vec<(u64, Embedding)>> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("embedding sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ids * per_id);
    for id in 0..ids {
        let base: Vec<f64> = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let base = normalize_f64(base)?;
        for _ in 0..per_id {
            let v = base.as_slice().iter().map(|&x| x as f64 + noise.sample(&mut rng)).collect();
            out.push((id as u64, normalize_f64(v)?));
        }
    }
    Ok(out)
}
