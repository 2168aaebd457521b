//! Constant-velocity Kalman-filter tracker on the ground plane.
//!
//! Online baseline: predict, gate, match by a mix of distance and
//! appearance, update. Identities are lost whenever an object stays unseen
//! longer than `max_age` frames.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::association::{hungarian, CostMatrix};
use crate::geometry::WorldPoint;
use crate::reid::{self, Embedding, EMBEDDING_DIM};
use crate::tracks::{check_frame_order, Observation, TrackPoint, TrackSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KfParams {
    /// Gate in meters per frame since the last update.
    pub gate_radius: f64,
    pub max_age: u32,
    pub min_hits: u32,
    /// Weight of ground distance against appearance distance.
    pub distance_weight: f64,
    /// Acceleration noise variance, (m/frame²)².
    pub process_noise: f64,
    /// Position measurement variance, m².
    pub measurement_noise: f64,
    pub initial_velocity_var: f64,
}

impl Default for KfParams {
    fn default() -> Self {
        Self {
            gate_radius: 1.0,
            max_age: 30,
            min_hits: 2,
            distance_weight: 0.5,
            process_noise: 1e-4,
            measurement_noise: 0.01,
            initial_velocity_var: 0.01,
        }
    }
}

impl KfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_radius > 0.0)
            || !(0.0..=1.0).contains(&self.distance_weight)
            || !(self.process_noise >= 0.0)
            || !(self.measurement_noise >= 0.0)
            || !(self.initial_velocity_var > 0.0)
        {
            return Err(Error::InvalidInput("invalid Kalman filter parameters".into()));
        }
        Ok(())
    }

    fn transition() -> Matrix4<f64> {
        Matrix4::new(
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    /// Discrete white-noise acceleration model.
    fn process_covariance(&self) -> Matrix4<f64> {
        let q = self.process_noise;
        Matrix4::new(
            0.25, 0.0, 0.5, 0.0, //
            0.0, 0.25, 0.0, 0.5, //
            0.5, 0.0, 1.0, 0.0, //
            0.0, 0.5, 0.0, 1.0,
        ) * q
    }
}

const H: Matrix2x4<f64> = Matrix2x4::new(
    1.0, 0.0, 0.0, 0.0, //
    0.0, 1.0, 0.0, 0.0,
);

#[derive(Debug, Clone)]
pub struct KfTrack {
    /// `(x, y, vx, vy)`, velocities in meters per frame.
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub identity: Option<u64>,
    pub age: u32,
    pub hits: u32,
    pub misses: u32,
    appearance_sum: Vec<f64>,
    z: f64,
    points: Vec<TrackPoint>,
}

impl KfTrack {
    pub fn new(position: &WorldPoint, params: &KfParams) -> Self {
        let pv = params.measurement_noise.max(1e-6);
        let vv = params.initial_velocity_var;
        Self {
            state: Vector4::new(position.x, position.y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
            identity: None,
            age: 0,
            hits: 0,
            misses: 0,
            appearance_sum: vec![0.0; EMBEDDING_DIM],
            z: position.z,
            points: Vec::new(),
        }
    }

    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.state[0], self.state[1], self.z)
    }

    /// Normalized running mean of matched appearances.
    pub fn appearance(&self) -> Option<Embedding> {
        reid::normalize_f64(self.appearance_sum.clone()).ok()
    }

    fn add_appearance(&mut self, e: &Embedding) {
        for (s, &v) in self.appearance_sum.iter_mut().zip(e.as_slice()) {
            *s += v as f64;
        }
    }
}

pub fn kf_predict(track: &mut KfTrack, params: &KfParams) {
    let f = KfParams::transition();
    track.state = f * track.state;
    let p = f * track.covariance * f.transpose() + params.process_covariance();
    track.covariance = symmetrize(p);
    track.age += 1;
}

/// Corrects `(x, y)` with a position measurement and returns the innovation.
pub fn kf_update(track: &mut KfTrack, observation: &WorldPoint, params: &KfParams) -> Result<Vector2<f64>> {
    let z = Vector2::new(observation.x, observation.y);
    let innovation = z - H * track.state;
    let p = track.covariance;
    let s = H * p * H.transpose() + Matrix2::identity() * params.measurement_noise;
    let s_inv = s
        .cholesky()
        .filter(|c| c.l().diagonal().iter().all(|d| *d > 1e-150))
        .ok_or(Error::SingularInnovation)?
        .inverse();
    let k = p * H.transpose() * s_inv;
    track.state += k * innovation;
    // Joseph form keeps the covariance symmetric PD.
    let ikh = Matrix4::identity() - k * H;
    let r = Matrix2::identity() * params.measurement_noise;
    track.covariance = symmetrize(ikh * p * ikh.transpose() + k * r * k.transpose());
    track.z = observation.z;
    Ok(innovation)
}

fn symmetrize(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Runs the online tracker over a frame-ordered observation stream. Only
/// confirmed tracks (at least `min_hits` matches) are reported; each
/// reported point carries its source observation index.
pub fn kf_track_sequence(observations: &[Observation], params: &KfParams) -> Result<TrackSet> {
    params.validate()?;
    check_frame_order(observations)?;
    let mut out = TrackSet::new();
    let (Some(first), Some(last)) = (observations.first(), observations.last()) else {
        return Ok(out);
    };
    let w = params.distance_weight;
    let mut tracks: Vec<KfTrack> = Vec::new();
    let mut next_id = 0u64;
    let mut cursor = 0usize;

    for frame in first.frame..=last.frame {
        let start = cursor;
        while cursor < observations.len() && observations[cursor].frame == frame {
            cursor += 1;
        }
        let batch = start..cursor;

        for t in &mut tracks {
            kf_predict(t, params);
        }

        let appearances: Vec<Option<Embedding>> = tracks.iter().map(KfTrack::appearance).collect();
        let costs = CostMatrix::from_fn(tracks.len(), batch.len(), |ti, oi| {
            let t = &tracks[ti];
            let o = &observations[start + oi];
            let d = t.position().ground_distance(&o.position);
            if d > params.gate_radius * (t.misses + 1) as f64 {
                return f64::INFINITY;
            }
            let app = appearances[ti]
                .as_ref()
                .map_or(0.0, |a| reid::cosine_distance(a, &o.appearance));
            w * d + (1.0 - w) * app
        });
        let mut matched_obs = vec![false; batch.len()];
        let mut matched_track = vec![false; tracks.len()];
        for (ti, oi) in hungarian(&costs) {
            let idx = start + oi;
            let o = &observations[idx];
            let t = &mut tracks[ti];
            kf_update(t, &o.position, params)?;
            t.add_appearance(&o.appearance);
            t.hits += 1;
            t.misses = 0;
            t.points.push(TrackPoint {
                frame,
                position: t.position(),
                observation: Some(idx),
            });
            matched_obs[oi] = true;
            matched_track[ti] = true;
        }

        let mut kept = Vec::with_capacity(tracks.len());
        for (mut t, hit) in tracks.into_iter().zip(matched_track) {
            if !hit {
                t.misses += 1;
            }
            if hit && t.identity.is_none() && t.hits >= params.min_hits {
                t.identity = Some(next_id);
                next_id += 1;
            }
            let alive = if t.identity.is_some() {
                t.misses <= params.max_age
            } else {
                t.misses == 0
            };
            if alive {
                kept.push(t);
            } else if let Some(id) = t.identity {
                out.insert_track(id, t.points);
            }
        }
        tracks = kept;

        for (oi, _) in matched_obs.iter().enumerate().filter(|(_, m)| !**m) {
            let idx = start + oi;
            let o = &observations[idx];
            let mut t = KfTrack::new(&o.position, params);
            t.add_appearance(&o.appearance);
            t.hits = 1;
            t.points.push(TrackPoint {
                frame,
                position: o.position,
                observation: Some(idx),
            });
            if params.min_hits <= 1 {
                t.identity = Some(next_id);
                next_id += 1;
            }
            tracks.push(t);
        }
    }
    for t in tracks {
        if let Some(id) = t.identity {
            out.insert_track(id, t.points);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reid::tests::random_unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type M4 = [[f64; 4]; 4];

    fn mul(a: &M4, b: &M4) -> M4 {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn transpose(a: &M4) -> M4 {
        let mut t = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                t[i][j] = a[j][i];
            }
        }
        t
    }

    /// Plain-array Kalman recursion used as an oracle.
    struct Oracle {
        x: [f64; 4],
        p: M4,
        q: M4,
        r: f64,
    }

    impl Oracle {
        fn predict(&mut self) {
            let f = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
            let x = self.x;
            self.x = [x[0] + x[2], x[1] + x[3], x[2], x[3]];
            let fp = mul(&f, &self.p);
            let mut p = mul(&fp, &transpose(&f));
            for i in 0..4 {
                for j in 0..4 {
                    p[i][j] += self.q[i][j];
                }
            }
            self.p = p;
        }

        fn update(&mut self, zx: f64, zy: f64) {
            let p = self.p;
            let s = [[p[0][0] + self.r, p[0][1]], [p[1][0], p[1][1] + self.r]];
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            let si = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
            let mut k = [[0.0; 2]; 4];
            for i in 0..4 {
                for j in 0..2 {
                    k[i][j] = p[i][0] * si[0][j] + p[i][1] * si[1][j];
                }
            }
            let y = [zx - self.x[0], zy - self.x[1]];
            for i in 0..4 {
                self.x[i] += k[i][0] * y[0] + k[i][1] * y[1];
            }
            // simple form (I - KH) P
            let mut np = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    np[i][j] = p[i][j] - k[i][0] * p[0][j] - k[i][1] * p[1][j];
                }
            }
            self.p = np;
        }
    }

    fn oracle_for(track: &KfTrack, params: &KfParams) -> Oracle {
        let mut p = [[0.0; 4]; 4];
        let mut q = [[0.0; 4]; 4];
        let qm = params.process_covariance();
        for i in 0..4 {
            for j in 0..4 {
                p[i][j] = track.covariance[(i, j)];
                q[i][j] = qm[(i, j)];
            }
        }
        Oracle {
            x: [track.state[0], track.state[1], track.state[2], track.state[3]],
            p,
            q,
            r: params.measurement_noise,
        }
    }

    fn assert_close(track: &KfTrack, o: &Oracle, tol: f64) {
        for i in 0..4 {
            assert!((track.state[i] - o.x[i]).abs() < tol);
            for j in 0..4 {
                assert!((track.covariance[(i, j)] - o.p[i][j]).abs() < tol);
            }
        }
    }

    fn assert_pd(track: &KfTrack) {
        let p = track.covariance;
        assert_eq!(p, p.transpose());
        assert!(p.cholesky().is_some(), "covariance lost positive definiteness");
    }

    #[test]
    fn zero_velocity_prediction_grows_covariance() {
        let params = KfParams::default();
        let mut t = KfTrack::new(&WorldPoint::new(2.0, 3.0, 0.0), &params);
        let before = t.covariance;
        kf_predict(&mut t, &params);
        assert_eq!(t.position(), WorldPoint::new(2.0, 3.0, 0.0));
        assert!(t.covariance[(0, 0)] > before[(0, 0)]);
    }

    #[test]
    fn constant_velocity_prediction() {
        let params = KfParams::default();
        let mut t = KfTrack::new(&WorldPoint::new(0.0, 0.0, 0.0), &params);
        t.state[2] = 1.0;
        kf_predict(&mut t, &params);
        assert_eq!((t.state[0], t.state[1]), (1.0, 0.0));
    }

    #[test]
    fn prediction_matches_oracle_recursion() {
        let params = KfParams::default();
        let mut t = KfTrack::new(&WorldPoint::new(0.5, -1.0, 0.0), &params);
        t.state[2] = 0.03;
        t.state[3] = -0.02;
        let mut o = oracle_for(&t, &params);
        for _ in 0..10 {
            kf_predict(&mut t, &params);
            o.predict();
            assert_pd(&t);
        }
        assert_close(&t, &o, 1e-10);
    }

    #[test]
    fn randomized_updates_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let params = KfParams {
                process_noise: rng.random_range(1e-5..1e-2),
                measurement_noise: rng.random_range(1e-3..0.5),
                ..Default::default()
            };
            let mut t = KfTrack::new(&WorldPoint::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0), &params);
            let mut o = oracle_for(&t, &params);
            for _ in 0..20 {
                kf_predict(&mut t, &params);
                o.predict();
                if rng.random_bool(0.8) {
                    let z = WorldPoint::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
                    kf_update(&mut t, &z, &params).unwrap();
                    o.update(z.x, z.y);
                }
                assert_pd(&t);
            }
            assert_close(&t, &o, 1e-10);
        }
    }

    #[test]
    fn update_at_prediction_keeps_state_and_shrinks_covariance() {
        let params = KfParams::default();
        let mut t = KfTrack::new(&WorldPoint::new(1.0, 1.0, 0.0), &params);
        kf_predict(&mut t, &params);
        let before = (t.state, t.covariance);
        let innov = kf_update(&mut t, &WorldPoint::new(1.0, 1.0, 0.0), &params).unwrap();
        assert_eq!(innov, Vector2::zeros());
        assert_eq!(t.state, before.0);
        assert!(t.covariance[(0, 0)] < before.1[(0, 0)]);
    }

    #[test]
    fn vanishing_measurement_noise_snaps_to_observation() {
        let params = KfParams { measurement_noise: 1e-14, ..Default::default() };
        let mut t = KfTrack::new(&WorldPoint::new(0.0, 0.0, 0.0), &params);
        kf_predict(&mut t, &params);
        kf_update(&mut t, &WorldPoint::new(0.7, -0.3, 0.0), &params).unwrap();
        assert!((t.state[0] - 0.7).abs() < 1e-9 && (t.state[1] + 0.3).abs() < 1e-9);
    }

    fn observations(tracks: &[(WorldPoint, (f64, f64), Embedding)], frames: std::ops::Range<u32>, skip: impl Fn(usize, u32) -> bool) -> Vec<Observation> {
        let mut out = Vec::new();
        for f in frames {
            for (k, (p0, v, e)) in tracks.iter().enumerate() {
                if skip(k, f) {
                    continue;
                }
                out.push(Observation {
                    frame: f,
                    position: WorldPoint::new(p0.x + v.0 * f as f64, p0.y + v.1 * f as f64, 0.0),
                    appearance: e.clone(),
                });
            }
        }
        out
    }

    #[test]
    fn single_object_single_track() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = observations(&[(WorldPoint::new(0.0, 0.0, 0.0), (0.05, 0.02), random_unit(&mut rng))], 0..100, |_, _| false);
        let tracks = kf_track_sequence(&obs, &KfParams::default()).unwrap();
        assert_eq!(tracks.num_tracks(), 1);
        assert_eq!(tracks.num_points(), 100);
        tracks.validate().unwrap();
    }

    #[test]
    fn noiseless_constant_velocity_tracked_exactly() {
        let params = KfParams { process_noise: 0.0, measurement_noise: 1e-12, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = observations(&[(WorldPoint::new(1.0, 2.0, 0.0), (0.04, -0.03), random_unit(&mut rng))], 0..50, |_, _| false);
        let tracks = kf_track_sequence(&obs, &params).unwrap();
        let (_, pts) = tracks.iter().next().unwrap();
        for p in pts {
            let o = &obs[p.observation.unwrap()];
            assert!(p.position.ground_distance(&o.position) < 1e-9);
        }
    }

    #[test]
    fn long_occlusion_loses_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_unit(&mut rng);
        let params = KfParams::default();
        let obs = observations(&[(WorldPoint::new(0.0, 0.0, 0.0), (0.0, 0.0), e.clone())], 0..100, |_, f| (20..20 + params.max_age + 5).contains(&f));
        let tracks = kf_track_sequence(&obs, &params).unwrap();
        assert_eq!(tracks.num_tracks(), 2);
        let short = observations(&[(WorldPoint::new(0.0, 0.0, 0.0), (0.0, 0.0), e)], 0..100, |_, f| (20..30).contains(&f));
        assert_eq!(kf_track_sequence(&short, &params).unwrap().num_tracks(), 1);
    }

    #[test]
    fn crossing_objects_keep_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let objs = [
            (WorldPoint::new(0.0, 0.0, 0.0), (0.05, 0.0), random_unit(&mut rng)),
            (WorldPoint::new(5.0, 0.3, 0.0), (-0.05, 0.0), random_unit(&mut rng)),
            (WorldPoint::new(2.0, 4.0, 0.0), (0.0, -0.04), random_unit(&mut rng)),
        ];
        let obs = observations(&objs, 0..120, |k, f| (f + k as u32) % 7 == 0);
        let tracks = kf_track_sequence(&obs, &KfParams::default()).unwrap();
        tracks.validate().unwrap();
        assert_eq!(tracks.num_tracks(), 3);
    }
}
