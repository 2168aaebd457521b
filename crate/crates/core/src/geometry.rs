//! World, camera and pixel coordinate systems.
//!
//! World frame: origin on the ground plane near the scene center, `x`/`y`
//! spanning the floor, `z` pointing up. Camera frame: `x` right, `y` down,
//! `z` forward. A world point maps to pixels through `P = K [R | t]`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::detections::Detection3D;
use crate::{Error, Result};

/// Points with homogeneous depth at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Euclidean distance on the ground plane, ignoring `z`.
    pub fn ground_distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self::new(self.x + offset.x, self.y + offset.y, self.z + offset.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Axis-aligned pixel rectangle `(u_min, v_min, u_max, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Rect {
    pub const fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn width(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.v_max - self.v_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.u_min < self.u_max && self.v_min < self.v_max
    }

    /// Midpoint of the bottom edge (largest `v`).
    pub fn bottom_center(&self) -> PixelPoint {
        PixelPoint::new(0.5 * (self.u_min + self.u_max), self.v_max)
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= self.u_min && p.u <= self.u_max && p.v >= self.v_min && p.v <= self.v_max
    }

    pub fn intersection(&self, other: &Rect) -> Rect {
        Rect::new(
            self.u_min.max(other.u_min),
            self.v_min.max(other.v_min),
            self.u_max.min(other.u_max),
            self.v_max.min(other.v_max),
        )
    }
}

/// Intrinsics, extrinsics and image size of one static camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: u32,
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub image_size: (u32, u32),
}

impl CameraCalibration {
    /// Validates the rotation and intrinsic invariants.
    pub fn new(
        camera_id: u32,
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidCalibration {
            camera_id,
            reason: reason.to_string(),
        };
        if k.iter().chain(r.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entry"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(invalid("K is not upper-triangular"));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 || k[(2, 2)] <= 0.0 {
            return Err(invalid("K diagonal must be positive"));
        }
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.abs().max() > ROTATION_TOL || (r.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(invalid("R is not a proper rotation"));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(invalid("empty image"));
        }
        Ok(Self {
            camera_id,
            k,
            r,
            t,
            image_size,
        })
    }

    /// Builds a camera at `position` whose optical axis points at `target`.
    pub fn look_at(
        camera_id: u32,
        k: Matrix3<f64>,
        position: WorldPoint,
        target: WorldPoint,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let forward = (target.to_vector() - position.to_vector()).normalize();
        let world_up = Vector3::new(0.0, 0.0, 1.0);
        let right = forward.cross(&world_up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCalibration {
                camera_id,
                reason: "viewing direction is vertical".into(),
            });
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * position.to_vector());
        Self::new(camera_id, k, r, t, image_size)
    }

    /// Composed 3×4 projection `K [R | t]`.
    pub fn projection(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        self.k * rt
    }

    pub fn image_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.image_size.0 as f64, self.image_size.1 as f64)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> WorldPoint {
        WorldPoint::from_vector(&(-(self.r.transpose() * self.t)))
    }
}

/// Projects a world point, returning the pixel and the homogeneous depth `s`.
pub fn project(point: &WorldPoint, cal: &CameraCalibration) -> Result<(PixelPoint, f64)> {
    project_with(&cal.projection(), point)
}

fn project_with(p: &Matrix3x4<f64>, point: &WorldPoint) -> Result<(PixelPoint, f64)> {
    let h = p * Vector4::new(point.x, point.y, point.z, 1.0);
    let depth = h.z;
    if depth <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth });
    }
    Ok((PixelPoint::new(h.x / depth, h.y / depth), depth))
}

/// Projects the eight corners of a 3D box and returns the image-clipped
/// bounding rectangle of the corners in front of the camera, plus the
/// number of such corners.
pub fn project_box3d(det: &Detection3D, cal: &CameraCalibration) -> Result<(Rect, usize)> {
    let p = cal.projection();
    let mut visible = 0;
    let mut bounds = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in det.corners() {
        if let Ok((px, _)) = project_with(&p, &corner) {
            visible += 1;
            bounds.u_min = bounds.u_min.min(px.u);
            bounds.v_min = bounds.v_min.min(px.v);
            bounds.u_max = bounds.u_max.max(px.u);
            bounds.v_max = bounds.v_max.max(px.v);
        }
    }
    let not_visible = Error::NotVisible {
        camera_id: cal.camera_id,
    };
    if visible == 0 {
        return Err(not_visible);
    }
    let clipped = bounds.intersection(&cal.image_rect());
    if !clipped.is_valid() {
        return Err(not_visible);
    }
    Ok((clipped, visible))
}

/// Re-centered scene coordinates: world data is shifted by `-origin_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub origin_offset: [f64; 3],
    /// `(x_min, x_max, y_min, y_max)` of the floor plan.
    pub extent: (f64, f64, f64, f64),
}

impl SceneFrame {
    pub fn new(origin_offset: [f64; 3], extent: (f64, f64, f64, f64)) -> Result<Self> {
        let (x0, x1, y0, y1) = extent;
        if !(x0 < x1 && y0 < y1) || origin_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("degenerate scene extent".into()));
        }
        Ok(Self {
            origin_offset,
            extent,
        })
    }

    /// Frame whose origin is the center of the floor plan.
    pub fn centered_on_floor_plan(extent: (f64, f64, f64, f64)) -> Result<Self> {
        let (x0, x1, y0, y1) = extent;
        Self::new([0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.0], extent)
    }

    fn offset(&self) -> Vector3<f64> {
        Vector3::from(self.origin_offset)
    }

    pub fn recenter_point(&self, p: &WorldPoint) -> WorldPoint {
        p.translated(&-self.offset())
    }

    /// `R (x' + o) + t = R x' + (R o + t)`, so only `t` changes.
    pub fn recenter_calibration(&self, cal: &CameraCalibration) -> CameraCalibration {
        CameraCalibration {
            t: cal.t + cal.r * self.offset(),
            ..cal.clone()
        }
    }

    pub fn recenter(
        &self,
        points: &[WorldPoint],
        calibrations: &[CameraCalibration],
    ) -> (Vec<WorldPoint>, Vec<CameraCalibration>) {
        (
            points.iter().map(|p| self.recenter_point(p)).collect(),
            calibrations
                .iter()
                .map(|c| self.recenter_calibration(c))
                .collect(),
        )
    }

    pub fn recentered_extent(&self) -> (f64, f64, f64, f64) {
        let (x0, x1, y0, y1) = self.extent;
        let [ox, oy, _] = self.origin_offset;
        (x0 - ox, x1 - ox, y0 - oy, y1 - oy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_k() -> Matrix3<f64> {
        Matrix3::new(1000.0, 0.0, 960.0, 0.0, 1000.0, 540.0, 0.0, 0.0, 1.0)
    }

    fn identity_cal() -> CameraCalibration {
        CameraCalibration::new(0, simple_k(), Matrix3::identity(), Vector3::zeros(), (1920, 1080))
            .unwrap()
    }

    fn random_cal(rng: &mut ChaCha8Rng) -> CameraCalibration {
        let f = rng.random_range(400.0..2000.0);
        let k = Matrix3::new(
            f,
            rng.random_range(-2.0..2.0),
            rng.random_range(300.0..900.0),
            0.0,
            f * rng.random_range(0.9..1.1),
            rng.random_range(200.0..600.0),
            0.0,
            0.0,
            1.0,
        );
        let r = Rotation3::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let t = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        CameraCalibration::new(1, k, *r.matrix(), t, (1280, 720)).unwrap()
    }

    // Explicit homogeneous multiply, written without nalgebra products.
    fn brute_project(cal: &CameraCalibration, p: &WorldPoint) -> Option<(f64, f64, f64)> {
        let mut rt = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = cal.r[(i, j)];
            }
            rt[i][3] = cal.t[i];
        }
        let x = [p.x, p.y, p.z, 1.0];
        let mut cam = [0.0; 3];
        for i in 0..3 {
            for j in 0..4 {
                cam[i] += rt[i][j] * x[j];
            }
        }
        let mut h = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                h[i] += cal.k[(i, j)] * cam[j];
            }
        }
        (h[2] > MIN_DEPTH).then(|| (h[0] / h[2], h[1] / h[2], h[2]))
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let (px, depth) = project(&WorldPoint::new(0.0, 0.0, 5.0), &identity_cal()).unwrap();
        assert!((px.u - 960.0).abs() < 1e-12 && (px.v - 540.0).abs() < 1e-12);
        assert!((depth - 5.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project(&WorldPoint::new(0.0, 0.0, -1.0), &identity_cal()).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
        assert!(project(&WorldPoint::new(0.0, 0.0, 0.0), &identity_cal()).is_err());
    }

    #[test]
    fn random_projection_matches_homogeneous_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..2000 {
            let cal = random_cal(&mut rng);
            let p = WorldPoint::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            match (project(&p, &cal), brute_project(&cal, &p)) {
                (Ok((px, s)), Some((u, v, d))) => {
                    assert!((px.u - u).abs() <= 1e-9 * (1.0 + u.abs()));
                    assert!((px.v - v).abs() <= 1e-9 * (1.0 + v.abs()));
                    assert!((s - d).abs() <= 1e-9 * (1.0 + d.abs()));
                    checked += 1;
                }
                (Err(_), None) => {}
                (a, b) => panic!("disagreement: {a:?} vs {b:?}"),
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn projection_is_invariant_to_scaling_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cal = random_cal(&mut rng);
            let scale = rng.random_range(0.01..100.0);
            let p = cal.projection();
            let ps = p * scale;
            let x = WorldPoint::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0);
            if let (Ok((a, _)), Ok((b, _))) = (project_with(&p, &x), project_with(&ps, &x)) {
                assert!((a.u - b.u).abs() <= 1e-9 * (1.0 + a.u.abs()));
                assert!((a.v - b.v).abs() <= 1e-9 * (1.0 + a.v.abs()));
            }
        }
    }

    #[test]
    fn invalid_calibrations_are_rejected() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0; // reflection, det = -1
        assert!(CameraCalibration::new(0, simple_k(), r, Vector3::zeros(), (10, 10)).is_err());
        let mut k = simple_k();
        k[(1, 0)] = 1.0;
        assert!(CameraCalibration::new(0, k, Matrix3::identity(), Vector3::zeros(), (10, 10)).is_err());
        let mut k = simple_k();
        k[(0, 0)] = -5.0;
        assert!(CameraCalibration::new(0, k, Matrix3::identity(), Vector3::zeros(), (10, 10)).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let cal = CameraCalibration::look_at(
            3,
            simple_k(),
            WorldPoint::new(-10.0, -5.0, 4.0),
            WorldPoint::new(2.0, 1.0, 0.5),
            (1920, 1080),
        )
        .unwrap();
        let (px, _) = project(&WorldPoint::new(2.0, 1.0, 0.5), &cal).unwrap();
        assert!((px.u - 960.0).abs() < 1e-9 && (px.v - 540.0).abs() < 1e-9);
        let c = cal.center();
        assert!(c.distance(&WorldPoint::new(-10.0, -5.0, 4.0)) < 1e-9);
        // world up projects upward in the image
        let (above, _) = project(&WorldPoint::new(2.0, 1.0, 1.5), &cal).unwrap();
        assert!(above.v < px.v);
    }

    fn cube(center: WorldPoint, size: f64) -> Detection3D {
        Detection3D {
            frame: 0,
            center,
            dims: [size, size, size],
            yaw: 0.0,
            confidence: 1.0,
        }
    }

    #[test]
    fn centered_cube_projects_symmetrically() {
        let (rect, visible) =
            project_box3d(&cube(WorldPoint::new(0.0, 0.0, 10.0), 1.0), &identity_cal()).unwrap();
        assert_eq!(visible, 8);
        assert!((rect.u_min + rect.u_max - 1920.0).abs() < 1e-9);
        assert!((rect.v_min + rect.v_max - 1080.0).abs() < 1e-9);
    }

    #[test]
    fn box_behind_camera_is_not_visible() {
        let err = project_box3d(&cube(WorldPoint::new(0.0, 0.0, -10.0), 1.0), &identity_cal());
        assert!(matches!(err, Err(Error::NotVisible { .. })));
        // in front but entirely outside the image
        let err = project_box3d(&cube(WorldPoint::new(100.0, 0.0, 1.0), 1.0), &identity_cal());
        assert!(matches!(err, Err(Error::NotVisible { .. })));
    }

    #[test]
    fn box_rectangle_matches_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cal = identity_cal();
        for _ in 0..500 {
            let det = Detection3D {
                frame: 0,
                center: WorldPoint::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..12.0),
                ),
                dims: [
                    rng.random_range(0.2..2.0),
                    rng.random_range(0.2..2.0),
                    rng.random_range(0.2..2.0),
                ],
                yaw: rng.random_range(-3.1..3.1),
                confidence: 0.5,
            };
            let projected: Vec<_> = det
                .corners()
                .iter()
                .filter_map(|c| brute_project(&cal, c))
                .collect();
            let result = project_box3d(&det, &cal);
            if projected.is_empty() {
                assert!(result.is_err());
                continue;
            }
            let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64, f64)) -> f64| {
                projected.iter().map(pick).fold(init, f)
            };
            let expected = Rect::new(
                fold(f64::min, f64::INFINITY, |p| p.0).max(0.0),
                fold(f64::min, f64::INFINITY, |p| p.1).max(0.0),
                fold(f64::max, f64::NEG_INFINITY, |p| p.0).min(1920.0),
                fold(f64::max, f64::NEG_INFINITY, |p| p.1).min(1080.0),
            );
            match result {
                Ok((rect, visible)) => {
                    assert_eq!(visible, projected.len());
                    for (a, b) in [
                        (rect.u_min, expected.u_min),
                        (rect.v_min, expected.v_min),
                        (rect.u_max, expected.u_max),
                        (rect.v_max, expected.v_max),
                    ] {
                        assert!((a - b).abs() < 1e-6, "{rect:?} vs {expected:?}");
                    }
                    if let Some((u, v, _)) = brute_project(&cal, &det.center) {
                        let c = PixelPoint::new(u, v);
                        if cal.image_rect().contains(&c) {
                            assert!(rect.contains(&c));
                        }
                    }
                }
                Err(_) => assert!(!expected.is_valid()),
            }
        }
    }

    #[test]
    fn zero_offset_is_identity() {
        let frame = SceneFrame::new([0.0; 3], (-5.0, 5.0, -5.0, 5.0)).unwrap();
        let p = WorldPoint::new(1.5, -2.0, 0.3);
        assert_eq!(frame.recenter_point(&p), p);
        assert_eq!(frame.recenter_calibration(&identity_cal()), identity_cal());
    }

    #[test]
    fn recentering_preserves_projection() {
        let frame = SceneFrame::new([10.0, 5.0, 0.0], (0.0, 20.0, 0.0, 10.0)).unwrap();
        let cal = CameraCalibration::look_at(
            0,
            simple_k(),
            WorldPoint::new(0.0, 0.0, 4.0),
            WorldPoint::new(10.0, 5.0, 0.0),
            (1920, 1080),
        )
        .unwrap();
        let p = WorldPoint::new(10.0, 5.0, 0.0);
        let q = frame.recenter_point(&p);
        assert_eq!(q, WorldPoint::new(0.0, 0.0, 0.0));
        let (a, _) = project(&p, &cal).unwrap();
        let (b, _) = project(&q, &frame.recenter_calibration(&cal)).unwrap();
        assert!(a.distance(&b) < 1e-9);
        assert_eq!(frame.recentered_extent(), (-10.0, 10.0, -5.0, 5.0));
    }

    #[test]
    fn degenerate_extent_is_rejected() {
        assert!(SceneFrame::new([0.0; 3], (1.0, 1.0, 0.0, 2.0)).is_err());
        let f = SceneFrame::centered_on_floor_plan((0.0, 30.0, 0.0, 20.0)).unwrap();
        assert_eq!(f.origin_offset, [15.0, 10.0, 0.0]);
    }
}
