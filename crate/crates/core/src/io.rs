//! File formats: calibration JSON, comma-separated record files with a
//! header row, and the versioned weights file.
//!
//! Floats are written in shortest round-trip form, so a write followed by
//! a read reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::association::{AssociationResult, Match};
use crate::detections::{Detection2D, Detection3D};
use crate::geometry::{CameraCalibration, Rect, WorldPoint};
use crate::graph::{GnnWeights, HierarchyWeights};
use crate::reid::{Embedding, ViewRef, EMBEDDING_DIM};
use crate::sim::TruthRecord;
use crate::tracks::{check_frame_order, Observation, TrackPoint, TrackSet};
use crate::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = match e.position() {
        Some(p) => format!("{}:{}", path.display(), p.line()),
        None => path.display().to_string(),
    };
    Error::parse(location, e.to_string())
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_records_from(open(path)?, path)
}

fn read_records_from<T: DeserializeOwned>(reader: impl Read, path: &Path) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn write_records<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationRecord {
    camera_id: u32,
    k: [f64; 9],
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

pub fn write_calibrations(path: &Path, cameras: &[CameraCalibration]) -> Result<()> {
    let records: Vec<CalibrationRecord> = cameras
        .iter()
        .map(|c| CalibrationRecord {
            camera_id: c.camera_id,
            k: std::array::from_fn(|i| c.k[(i / 3, i % 3)]),
            r: std::array::from_fn(|i| c.r[(i / 3, i % 3)]),
            t: [c.t.x, c.t.y, c.t.z],
            width: c.image_size.0,
            height: c.image_size.1,
        })
        .collect();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &records)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads and validates a calibration file; camera ids must be unique.
pub fn read_calibrations(path: &Path) -> Result<Vec<CameraCalibration>> {
    let records: Vec<CalibrationRecord> = serde_json::from_reader(open(path)?)
        .map_err(|e| Error::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
    let mut seen = std::collections::BTreeSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.camera_id) {
                return Err(Error::parse(path.display().to_string(), format!("duplicate camera {}", r.camera_id)));
            }
            CameraCalibration::new(
                r.camera_id,
                Matrix3::from_row_slice(&r.k),
                Matrix3::from_row_slice(&r.r),
                Vector3::from_row_slice(&r.t),
                (r.width, r.height),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Det2DRecord {
    frame: u32,
    camera_id: u32,
    u_min: f64,
    v_min: f64,
    u_max: f64,
    v_max: f64,
    confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Det3DRecord {
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    w: f64,
    l: f64,
    h: f64,
    yaw: f64,
    confidence: f64,
}

/// 2D detections keyed by frame, then camera, in file order.
pub type Detections2DByFrame = BTreeMap<u32, BTreeMap<u32, Vec<Detection2D>>>;

pub fn write_detections_2d(path: &Path, dets: &Detections2DByFrame) -> Result<()> {
    write_records(
        path,
        dets.values().flat_map(|cams| cams.values().flatten()).map(|d| Det2DRecord {
            frame: d.frame,
            camera_id: d.camera_id,
            u_min: d.rect.u_min,
            v_min: d.rect.v_min,
            u_max: d.rect.u_max,
            v_max: d.rect.v_max,
            confidence: d.confidence,
        }),
    )
}

/// Within a camera and frame, boxes keep their file order, which defines
/// their `det2d_index`.
pub fn read_detections_2d(path: &Path) -> Result<Detections2DByFrame> {
    let mut out = Detections2DByFrame::new();
    for r in read_records::<Det2DRecord>(path)? {
        let d = Detection2D {
            camera_id: r.camera_id,
            frame: r.frame,
            rect: Rect::new(r.u_min, r.v_min, r.u_max, r.v_max),
            confidence: r.confidence,
        };
        d.validate()?;
        out.entry(r.frame).or_default().entry(r.camera_id).or_default().push(d);
    }
    Ok(out)
}

/// 3D detections keyed by frame, in file order.
pub type Detections3DByFrame = BTreeMap<u32, Vec<Detection3D>>;

pub fn write_detections_3d(path: &Path, dets: &Detections3DByFrame) -> Result<()> {
    write_records(
        path,
        dets.values().flatten().map(|d| Det3DRecord {
            frame: d.frame,
            x: d.center.x,
            y: d.center.y,
            z: d.center.z,
            w: d.dims[0],
            l: d.dims[1],
            h: d.dims[2],
            yaw: d.yaw,
            confidence: d.confidence,
        }),
    )
}

pub fn read_detections_3d(path: &Path) -> Result<Detections3DByFrame> {
    let mut out = Detections3DByFrame::new();
    for r in read_records::<Det3DRecord>(path)? {
        let d = Detection3D {
            frame: r.frame,
            center: WorldPoint::new(r.x, r.y, r.z),
            dims: [r.w, r.l, r.h],
            yaw: r.yaw,
            confidence: r.confidence,
        };
        d.validate()?;
        out.entry(r.frame).or_default().push(d);
    }
    Ok(out)
}

/// Embeddings keyed by their source view.
pub type EmbeddingsByView = BTreeMap<ViewRef, Embedding>;

pub fn write_embeddings(path: &Path, embeddings: &EmbeddingsByView) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(embedding_header(&["frame", "camera_id", "det2d_index"])).map_err(|e| csv_error(path, e))?;
    for (v, e) in embeddings {
        let mut row = vec![v.frame.to_string(), v.camera_id.to_string(), v.det2d_index.to_string()];
        row.extend(e.as_slice().iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Vectors are renormalized on load when their norm has drifted.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingsByView> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out = EmbeddingsByView::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let at = || format!("{}:{}", path.display(), row + 2);
        let embedding = parse_embedding(&rec, 3, &at)?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|e| Error::parse(at(), format!("field {i}: {e}")));
        let view = ViewRef {
            frame: int(0)? as u32,
            camera_id: int(1)? as u32,
            det2d_index: int(2)? as usize,
        };
        if out.insert(view, embedding).is_some() {
            return Err(Error::parse(at(), format!("duplicate embedding for {view:?}")));
        }
    }
    Ok(out)
}

fn embedding_header(lead: &[&str]) -> Vec<String> {
    let mut header: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    header.extend((0..EMBEDDING_DIM).map(|i| format!("e{i}")));
    header
}

fn parse_embedding(rec: &csv::StringRecord, lead: usize, at: &dyn Fn() -> String) -> Result<Embedding> {
    if rec.len() != lead + EMBEDDING_DIM {
        return Err(Error::parse(at(), format!("{} fields, expected {}", rec.len(), lead + EMBEDDING_DIM)));
    }
    let values = (lead..rec.len())
        .map(|i| rec[i].parse::<f32>().map_err(|e| Error::parse(at(), format!("field {i}: {e}"))))
        .collect::<Result<Vec<f32>>>()?;
    Embedding::from_raw(values)
}

/// Tracker input: one row per observation with its mean embedding.
pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(embedding_header(&["frame", "x", "y", "z"])).map_err(|e| csv_error(path, e))?;
    for o in observations {
        let mut row = vec![o.frame.to_string(), o.position.x.to_string(), o.position.y.to_string(), o.position.z.to_string()];
        row.extend(o.appearance.as_slice().iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows must be in non-decreasing frame order.
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let at = || format!("{}:{}", path.display(), row + 2);
        let appearance = parse_embedding(&rec, 4, &at)?;
        let frame = rec[0].parse::<u32>().map_err(|e| Error::parse(at(), format!("field 0: {e}")))?;
        let coord = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::parse(at(), format!("field {i}: {e}")));
        out.push(Observation {
            frame,
            position: WorldPoint::new(coord(1)?, coord(2)?, coord(3)?),
            appearance,
        });
    }
    check_frame_order(&out).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssociationRecord {
    frame: u32,
    camera_id: u32,
    det3d_index: usize,
    det2d_index: usize,
    cost: f64,
}

/// Matches per frame; 3D indices refer to the frame's detection list.
pub fn write_associations(path: &Path, results: &BTreeMap<u32, AssociationResult>) -> Result<()> {
    write_records(
        path,
        results.iter().flat_map(|(&frame, r)| {
            r.per_camera.iter().flat_map(move |(&camera_id, ms)| {
                ms.iter().map(move |m| AssociationRecord {
                    frame,
                    camera_id,
                    det3d_index: m.det3d,
                    det2d_index: m.det2d,
                    cost: m.cost,
                })
            })
        }),
    )
}

/// Rebuilds per-frame results. Only matches are stored, so `removed` stays
/// empty; `verified` is recomputed from the matches.
pub fn read_associations(path: &Path) -> Result<BTreeMap<u32, AssociationResult>> {
    let mut out: BTreeMap<u32, AssociationResult> = BTreeMap::new();
    for r in read_records::<AssociationRecord>(path)? {
        let res = out.entry(r.frame).or_default();
        res.per_camera.entry(r.camera_id).or_default().push(Match {
            det3d: r.det3d_index,
            det2d: r.det2d_index,
            cost: r.cost,
        });
        res.verified.insert(r.det3d_index);
    }
    for res in out.values_mut() {
        for ms in res.per_camera.values_mut() {
            ms.sort_by_key(|m| m.det3d);
        }
    }
    Ok(out)
}

pub fn write_truth(path: &Path, records: &[TruthRecord]) -> Result<()> {
    write_records(path, records)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    read_records(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackRecord {
    frame: u32,
    track_id: u64,
    x: f64,
    y: f64,
    z: f64,
}

/// Rows sorted by frame, then track id.
pub fn write_tracks(path: &Path, tracks: &TrackSet) -> Result<()> {
    let mut rows: Vec<TrackRecord> = tracks
        .iter()
        .flat_map(|(id, pts)| {
            pts.iter().map(move |p| TrackRecord {
                frame: p.frame,
                track_id: id,
                x: p.position.x,
                y: p.position.y,
                z: p.position.z,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track_id));
    write_records(path, rows)
}

pub fn read_tracks(path: &Path) -> Result<TrackSet> {
    let mut out = TrackSet::new();
    for r in read_records::<TrackRecord>(path)? {
        out.push(
            r.track_id,
            TrackPoint {
                frame: r.frame,
                position: WorldPoint::new(r.x, r.y, r.z),
                observation: None,
            },
        );
    }
    out.validate()?;
    Ok(out)
}

pub const WEIGHTS_FORMAT: &str = "bevtrack-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsHeader {
    format: String,
    version: u32,
    levels: usize,
    /// Per level: dims, aggregation, parameter count and checksum.
    level_info: Vec<LevelInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LevelInfo {
    node: usize,
    edge: usize,
    hidden: usize,
    steps: usize,
    params: usize,
    checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsFile {
    header: WeightsHeader,
    tensors: Vec<GnnWeights>,
}

pub fn write_weights(path: &Path, weights: &HierarchyWeights) -> Result<()> {
    let tensors: Vec<GnnWeights> = weights.levels.iter().map(|w| GnnWeights::clone(w)).collect();
    let file = WeightsFile {
        header: WeightsHeader {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            levels: tensors.len(),
            level_info: tensors
                .iter()
                .map(|w| LevelInfo {
                    node: w.dims.node,
                    edge: w.dims.edge,
                    hidden: w.dims.hidden,
                    steps: w.dims.steps,
                    params: w.num_params(),
                    checksum: w.checksum(),
                })
                .collect(),
        },
        tensors,
    };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a weights file, checking the header against every tensor.
pub fn read_weights(path: &Path) -> Result<HierarchyWeights> {
    let at = || path.display().to_string();
    let file: WeightsFile = serde_json::from_reader(open(path)?)
        .map_err(|e| Error::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
    let h = &file.header;
    if h.format != WEIGHTS_FORMAT {
        return Err(Error::parse(at(), format!("unknown format {:?}", h.format)));
    }
    if h.version != WEIGHTS_VERSION {
        return Err(Error::parse(at(), format!("unsupported version {}", h.version)));
    }
    if h.levels != file.tensors.len() || h.level_info.len() != file.tensors.len() {
        return Err(Error::parse(at(), "header level count does not match the tensors"));
    }
    for (k, (info, w)) in h.level_info.iter().zip(&file.tensors).enumerate() {
        w.validate()?;
        let dims = (w.dims.node, w.dims.edge, w.dims.hidden, w.dims.steps);
        if dims != (info.node, info.edge, info.hidden, info.steps) || info.params != w.num_params() {
            return Err(Error::parse(at(), format!("level {k}: dimensions disagree with the header")));
        }
        if info.checksum != w.checksum() {
            return Err(Error::parse(at(), format!("level {k}: checksum mismatch")));
        }
    }
    Ok(HierarchyWeights::new(file.tensors))
}
