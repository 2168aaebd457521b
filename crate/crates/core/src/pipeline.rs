//! Frame processing and end-to-end runs.
//!
//! A frame goes through score filtering, circle NMS, 2D–3D association and
//! multi-view appearance aggregation, producing tracker observations.
//! [`run_pipeline`] chains the stages over files, writing each stage's
//! output to the run directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{assoc_accuracy_counts, associate_frame, AccuracyCounts, AssociationResult, Match, TruePair};
use crate::detections::{circle_nms_indices, filter_by_score_indices, Detection2D, Detection3D, DetectionConfig};
use crate::geometry::CameraCalibration;
use crate::graph::{track_sequence_global, track_sequence_heuristic, Curriculum, HierarchyConfig, HierarchyWeights};
use crate::io::{self, Detections2DByFrame, Detections3DByFrame, EmbeddingsByView};
use crate::kf::{kf_track_sequence, KfParams};
use crate::metrics::{evaluate, EvalConfig, MetricsReport};
use crate::reid::{mean_embedding, Embedding, ViewRef};
use crate::sim::{generate, observe_frame, GroundTruth, SceneSpec, TruthRecord};
use crate::tracks::{Observation, TrackSet};
use crate::{Error, Result};

/// One processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedFrame {
    /// Input 3D indices surviving the score filter and NMS, ascending.
    pub kept: Vec<usize>,
    /// Association over the kept detections (3D indices refer to `kept`).
    pub association: AssociationResult,
    pub observations: Vec<Observation>,
    /// Input 3D index behind each observation.
    pub sources: Vec<usize>,
}

/// Input indices of the detections passing the score filter and NMS.
pub fn filter_nms_indices(dets3d: &[Detection3D], config: &DetectionConfig) -> Vec<usize> {
    let passing = filter_by_score_indices(dets3d, config.score_threshold);
    let candidates: Vec<Detection3D> = passing.iter().map(|&i| dets3d[i]).collect();
    circle_nms_indices(&candidates, config.nms_radius)
        .into_iter()
        .map(|k| passing[k])
        .collect()
}

/// One observation per verified 3D detection, carrying the mean embedding
/// of its matched views. Returned with the 3D index behind each.
pub fn aggregate_frame<'a>(
    frame: u32,
    dets3d: &[Detection3D],
    association: &AssociationResult,
    embedding: impl Fn(u32, usize) -> Option<&'a Embedding>,
) -> Result<(Vec<Observation>, Vec<usize>)> {
    let mut observations = Vec::new();
    let mut sources = Vec::new();
    for &k in &association.verified {
        let views = association.views_of(k);
        let mut vectors = Vec::with_capacity(views.len());
        for (cam, j) in views {
            vectors.push(embedding(cam, j).ok_or_else(|| {
                Error::InsufficientData(format!("frame {frame}: no embedding for camera {cam} box {j}"))
            })?);
        }
        observations.push(Observation {
            frame,
            position: dets3d[k].center,
            appearance: mean_embedding(vectors)?,
        });
        sources.push(k);
    }
    Ok((observations, sources))
}

/// Filter, NMS, associate and aggregate one frame. Every matched 2D box
/// needs an embedding.
pub fn process_frame<'a>(
    frame: u32,
    dets3d: &[Detection3D],
    dets2d: &BTreeMap<u32, Vec<Detection2D>>,
    embedding: impl Fn(u32, usize) -> Option<&'a Embedding>,
    cameras: &[CameraCalibration],
    config: &DetectionConfig,
) -> Result<ProcessedFrame> {
    let kept = filter_nms_indices(dets3d, config);
    let kept_dets: Vec<Detection3D> = kept.iter().map(|&i| dets3d[i]).collect();
    let association = associate_frame(&kept_dets, dets2d, cameras, config);
    let (observations, local) = aggregate_frame(frame, &kept_dets, &association, embedding)?;
    let sources = local.into_iter().map(|k| kept[k]).collect();
    Ok(ProcessedFrame {
        kept,
        association,
        observations,
        sources,
    })
}

/// Tracker input from a simulated scene, with the true identity behind
/// each observation (`None` for false positives).
#[derive(Debug, Clone, Default)]
pub struct SimulatedStream {
    pub observations: Vec<Observation>,
    pub identities: Vec<Option<u64>>,
}

impl SimulatedStream {
    /// Observations of frames before `end`.
    pub fn prefix(&self, end: u32) -> SimulatedStream {
        let n = self.observations.partition_point(|o| o.frame < end);
        SimulatedStream {
            observations: self.observations[..n].to_vec(),
            identities: self.identities[..n].to_vec(),
        }
    }
}

/// Simulates every frame and runs it through [`process_frame`] without
/// keeping the raw sensor output around.
pub fn simulate_stream(
    truth: &GroundTruth,
    cameras: &[CameraCalibration],
    spec: &SceneSpec,
    config: &DetectionConfig,
) -> Result<SimulatedStream> {
    let frames: Vec<(Vec<Observation>, Vec<Option<u64>>)> = (0..truth.num_frames)
        .into_par_iter()
        .map(|f| {
            let fo = observe_frame(truth, cameras, spec, f);
            let lookup = |c: u32, j: usize| fo.embeddings.get(&c).and_then(|v| v.get(j));
            let p = process_frame(f, &fo.dets3d, &fo.dets2d, lookup, cameras, config)?;
            let ids = p.sources.iter().map(|&i| fo.det3d_identity[i]).collect();
            Ok((p.observations, ids))
        })
        .collect::<Result<_>>()?;
    let mut out = SimulatedStream::default();
    for (obs, ids) in frames {
        out.observations.extend(obs);
        out.identities.extend(ids);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackerKind {
    #[default]
    GnnGlobal,
    GnnHeuristic,
    Kf,
}

impl TrackerKind {
    pub fn needs_weights(self) -> bool {
        self != TrackerKind::Kf
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackerKind::GnnGlobal => "gnn-global",
            TrackerKind::GnnHeuristic => "gnn-heuristic",
            TrackerKind::Kf => "kf",
        })
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnn-global" => Ok(TrackerKind::GnnGlobal),
            "gnn-heuristic" => Ok(TrackerKind::GnnHeuristic),
            "kf" => Ok(TrackerKind::Kf),
            _ => Err(Error::InvalidInput(format!("unknown tracker {s:?}"))),
        }
    }
}

/// Input and output locations. Unset inputs are simulated from the scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub calibrations: Option<PathBuf>,
    pub detections_3d: Option<PathBuf>,
    pub detections_2d: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// 2D box provenance, used for association accuracy.
    pub truth: Option<PathBuf>,
    /// Ground-truth tracks, used for evaluation.
    pub ground_truth: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output: PathBuf,
}

impl RunPaths {
    fn inputs(&self) -> [(&'static str, &Option<PathBuf>); 4] {
        [
            ("calibrations", &self.calibrations),
            ("detections_3d", &self.detections_3d),
            ("detections_2d", &self.detections_2d),
            ("embeddings", &self.embeddings),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Drives the simulated scene and training; required by both.
    pub seed: Option<u64>,
    pub tracker: TrackerKind,
    pub paths: RunPaths,
    pub detection: DetectionConfig,
    pub hierarchy: HierarchyConfig,
    pub kf: KfParams,
    pub eval: EvalConfig,
    pub scene: SceneSpec,
    pub training: Curriculum,
}

impl RunConfig {
    /// Parses TOML, then applies `key.path=value` overrides. Values are
    /// read as TOML and fall back to plain strings. Nothing is validated;
    /// [`run_pipeline`] calls [`RunConfig::validate`].
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table =
            toml::from_str(text).map_err(|e| Error::parse(toml_location(&e), e.message().to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut root, key.trim(), parse_value(value.trim()))?;
        }
        let config: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse("config", e.message().to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks module configs and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.hierarchy.validate()?;
        self.kf.validate()?;
        self.eval.validate()?;
        let p = &self.paths;
        let named = p
            .inputs()
            .into_iter()
            .chain([("truth", &p.truth), ("ground_truth", &p.ground_truth), ("weights", &p.weights)]);
        for (name, path) in named {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::InvalidInput(format!("{name} path {} does not exist", path.display())));
                }
            }
        }
        let set = p.inputs().iter().filter(|(_, v)| v.is_some()).count();
        if set != 0 && set != 4 {
            return Err(Error::InvalidInput(
                "calibrations, detections_3d, detections_2d and embeddings must be given together".into(),
            ));
        }
        if set == 0 {
            if self.seed.is_none() {
                return Err(Error::InvalidInput("a seed is required to simulate the input scene".into()));
            }
            self.scene.validate()?;
        }
        if self.tracker.needs_weights() && p.weights.is_none() {
            return Err(Error::InvalidInput(format!("tracker {} needs a weights file", self.tracker)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    /// The scene with the run seed applied.
    pub fn seeded_scene(&self) -> Result<SceneSpec> {
        let seed = self
            .seed
            .ok_or_else(|| Error::InvalidInput("a seed is required to simulate".into()))?;
        Ok(SceneSpec { seed, ..self.scene.clone() })
    }
}

fn toml_location(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!("config byte {}", span.start),
        None => "config".into(),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::InvalidInput(format!("empty key in {key:?}")))?;
    let mut table = root;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidInput(format!("{key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Files written by [`simulate_to_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFiles {
    pub calibrations: PathBuf,
    pub detections_3d: PathBuf,
    pub detections_2d: PathBuf,
    pub embeddings: PathBuf,
    pub truth: PathBuf,
    pub ground_truth: PathBuf,
}

/// Simulates `spec` and writes every sensor stream plus both truth files.
pub fn simulate_to_dir(spec: &SceneSpec, dir: &Path) -> Result<SimulatedFiles> {
    let (truth, cameras) = generate(spec)?;
    let frames: Vec<_> = (0..truth.num_frames)
        .into_par_iter()
        .map(|f| observe_frame(&truth, &cameras, spec, f))
        .collect();
    let mut d3 = Detections3DByFrame::new();
    let mut d2 = Detections2DByFrame::new();
    let mut emb = EmbeddingsByView::new();
    let mut records: Vec<TruthRecord> = Vec::new();
    for fo in frames {
        if !fo.dets3d.is_empty() {
            d3.insert(fo.frame, fo.dets3d);
        }
        for (cam, vs) in fo.embeddings {
            for (j, e) in vs.into_iter().enumerate() {
                emb.insert(ViewRef { frame: fo.frame, camera_id: cam, det2d_index: j }, e);
            }
        }
        d2.insert(fo.frame, fo.dets2d);
        records.extend(fo.truth);
    }
    let files = SimulatedFiles {
        calibrations: dir.join("calibrations.json"),
        detections_3d: dir.join("detections_3d.csv"),
        detections_2d: dir.join("detections_2d.csv"),
        embeddings: dir.join("embeddings.csv"),
        truth: dir.join("truth.csv"),
        ground_truth: dir.join("ground_truth.csv"),
    };
    io::write_calibrations(&files.calibrations, &cameras)?;
    io::write_detections_3d(&files.detections_3d, &d3)?;
    io::write_detections_2d(&files.detections_2d, &d2)?;
    io::write_embeddings(&files.embeddings, &emb)?;
    io::write_truth(&files.truth, &records)?;
    io::write_tracks(&files.ground_truth, &truth.track_set())?;
    Ok(files)
}

/// Score filter and NMS over every frame; also returns the surviving input
/// indices per frame.
pub fn filter_nms_frames(
    dets: &Detections3DByFrame,
    config: &DetectionConfig,
) -> (Detections3DByFrame, BTreeMap<u32, Vec<usize>>) {
    let mut kept_dets = Detections3DByFrame::new();
    let mut kept_idx = BTreeMap::new();
    for (&f, ds) in dets {
        let kept = filter_nms_indices(ds, config);
        kept_dets.insert(f, kept.iter().map(|&i| ds[i]).collect());
        kept_idx.insert(f, kept);
    }
    (kept_dets, kept_idx)
}

/// Associates every frame with 3D detections; frames are independent.
pub fn associate_frames(
    dets3d: &Detections3DByFrame,
    dets2d: &Detections2DByFrame,
    cameras: &[CameraCalibration],
    config: &DetectionConfig,
) -> BTreeMap<u32, AssociationResult> {
    let empty = BTreeMap::new();
    dets3d
        .par_iter()
        .map(|(&f, ds)| (f, associate_frame(ds, dets2d.get(&f).unwrap_or(&empty), cameras, config)))
        .collect()
}

/// Tracker observations of every frame, in frame order.
pub fn aggregate_frames(
    dets3d: &Detections3DByFrame,
    associations: &BTreeMap<u32, AssociationResult>,
    embeddings: &EmbeddingsByView,
) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for (&f, ds) in dets3d {
        let Some(assoc) = associations.get(&f) else { continue };
        let lookup = |camera_id: u32, det2d_index: usize| {
            embeddings.get(&ViewRef { frame: f, camera_id, det2d_index })
        };
        out.extend(aggregate_frame(f, ds, assoc, lookup)?.0);
    }
    Ok(out)
}

/// Association accuracy against the provenance file. `kept` maps filtered
/// indices back to the input indices the truth refers to.
pub fn association_accuracy(
    associations: &BTreeMap<u32, AssociationResult>,
    kept: &BTreeMap<u32, Vec<usize>>,
    truth: &[TruthRecord],
) -> AccuracyCounts {
    let mut by_frame: BTreeMap<u32, Vec<TruePair>> = BTreeMap::new();
    for t in truth {
        by_frame.entry(t.frame).or_default().push(TruePair {
            camera_id: t.camera_id,
            det2d: t.det2d_index,
            det3d: t.det3d_index,
        });
    }
    let mut counts = AccuracyCounts::default();
    for (f, pairs) in &by_frame {
        let mut remapped = AssociationResult::default();
        if let (Some(a), Some(k)) = (associations.get(f), kept.get(f)) {
            for (&cam, ms) in &a.per_camera {
                let ms = ms.iter().map(|m| Match { det3d: k[m.det3d], ..*m }).collect();
                remapped.per_camera.insert(cam, ms);
            }
        }
        counts.add(assoc_accuracy_counts(&remapped, pairs));
    }
    counts
}

pub fn run_tracker(
    kind: TrackerKind,
    observations: &[Observation],
    weights: Option<&HierarchyWeights>,
    hierarchy: &HierarchyConfig,
    kf: &KfParams,
) -> Result<TrackSet> {
    let need = || weights.ok_or_else(|| Error::InvalidInput(format!("tracker {kind} needs weights")));
    match kind {
        TrackerKind::GnnGlobal => track_sequence_global(observations, need()?, hierarchy),
        TrackerKind::GnnHeuristic => track_sequence_heuristic(observations, need()?, hierarchy),
        TrackerKind::Kf => kf_track_sequence(observations, kf),
    }
}

pub const MANIFEST_FORMAT: &str = "bevtrack-manifest";

/// Record of one run; its config reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub crate_version: String,
    pub seed: Option<u64>,
    pub tracker: TrackerKind,
    pub config_hash: String,
    /// Per-level checksums of the weights used, if any.
    pub weights_checksums: Vec<String>,
    /// SHA-256 of every file written, by file name.
    pub outputs: BTreeMap<String, String>,
    pub association_accuracy: Option<f64>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::parse(path.display().to_string(), format!("unknown format {:?}", m.format)));
        }
        Ok(m)
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub tracks: TrackSet,
    pub report: Option<MetricsReport>,
    pub manifest: Manifest,
}

/// Runs simulate (when no inputs are given), filter and NMS, association,
/// aggregation, tracking and evaluation. Errors name the failing stage.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let dir = config.paths.output.clone();
    std::fs::create_dir_all(&dir)?;
    let mut paths = config.paths.clone();
    if paths.calibrations.is_none() {
        let spec = config.seeded_scene().map_err(|e| e.in_stage("simulate"))?;
        let files = simulate_to_dir(&spec, &dir.join("input")).map_err(|e| e.in_stage("simulate"))?;
        paths.calibrations = Some(files.calibrations);
        paths.detections_3d = Some(files.detections_3d);
        paths.detections_2d = Some(files.detections_2d);
        paths.embeddings = Some(files.embeddings);
        paths.truth = paths.truth.or(Some(files.truth));
        paths.ground_truth = paths.ground_truth.or(Some(files.ground_truth));
    }
    let input = |p: &Option<PathBuf>| p.clone().expect("inputs set above");

    let load = |e: Error| e.in_stage("load");
    let cameras = io::read_calibrations(&input(&paths.calibrations)).map_err(load)?;
    let dets3d = io::read_detections_3d(&input(&paths.detections_3d)).map_err(load)?;
    let dets2d = io::read_detections_2d(&input(&paths.detections_2d)).map_err(load)?;
    let embeddings = io::read_embeddings(&input(&paths.embeddings)).map_err(load)?;
    let weights = match &paths.weights {
        Some(p) if config.tracker.needs_weights() => Some(io::read_weights(p).map_err(load)?),
        _ => None,
    };

    let mut written = Vec::new();
    let (filtered, kept) = filter_nms_frames(&dets3d, &config.detection);
    let out = dir.join("filtered_3d.csv");
    io::write_detections_3d(&out, &filtered).map_err(|e| e.in_stage("filter-nms"))?;
    written.push(out);

    let associations = associate_frames(&filtered, &dets2d, &cameras, &config.detection);
    let out = dir.join("associations.csv");
    io::write_associations(&out, &associations).map_err(|e| e.in_stage("associate"))?;
    written.push(out);
    let association_accuracy = match &paths.truth {
        Some(p) => {
            let truth = io::read_truth(p).map_err(|e| e.in_stage("associate"))?;
            association_accuracy(&associations, &kept, &truth).fraction().ok()
        }
        None => None,
    };

    let observations = aggregate_frames(&filtered, &associations, &embeddings).map_err(|e| e.in_stage("reid"))?;
    let out = dir.join("observations.csv");
    io::write_observations(&out, &observations).map_err(|e| e.in_stage("reid"))?;
    written.push(out);

    let tracks = run_tracker(config.tracker, &observations, weights.as_ref(), &config.hierarchy, &config.kf)
        .map_err(|e| e.in_stage("track"))?;
    let out = dir.join("tracks.csv");
    io::write_tracks(&out, &tracks).map_err(|e| e.in_stage("track"))?;
    written.push(out);

    let report = match &paths.ground_truth {
        Some(p) => {
            let eval = |e: Error| e.in_stage("eval");
            let gt = io::read_tracks(p).map_err(eval)?;
            let report = evaluate(&gt, &tracks, &config.eval).map_err(eval)?;
            let json = dir.join("metrics.json");
            std::fs::write(&json, report.to_json() + "\n").map_err(|e| eval(e.into()))?;
            let table = dir.join("metrics.txt");
            std::fs::write(&table, report.to_table(&config.tracker.to_string())).map_err(|e| eval(e.into()))?;
            written.extend([json, table]);
            Some(report)
        }
        None => None,
    };

    let mut outputs = BTreeMap::new();
    for p in &written {
        let name = p.file_name().expect("file path").to_string_lossy().into_owned();
        outputs.insert(name, file_sha256(p)?);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        tracker: config.tracker,
        config_hash: config.hash(),
        weights_checksums: weights.iter().flat_map(|w| w.levels.iter().map(|l| l.checksum())).collect(),
        outputs,
        association_accuracy,
        config: config.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutput {
        dir,
        tracks,
        report,
        manifest,
    })
}

/// Heuristic-stitching top windows compared against the global block.
pub const ABLATION_WINDOWS: [u32; 4] = [480, 960, 1920, 3840];

/// One row per heuristic window, then the global block with `global`'s
/// hierarchy. Weights must cover the largest window.
pub fn reproduce_ablation(
    observations: &[Observation],
    gt: &TrackSet,
    weights: &HierarchyWeights,
    global: &HierarchyConfig,
    eval: &EvalConfig,
) -> Result<Vec<(String, MetricsReport)>> {
    let mut rows = Vec::new();
    for top in ABLATION_WINDOWS {
        let config = HierarchyConfig {
            prune: global.prune.clone(),
            mp_steps: global.mp_steps,
            rounding: global.rounding,
            ..HierarchyConfig::with_top_window(top)
        };
        let tracks = track_sequence_heuristic(observations, weights, &config)?;
        rows.push((format!("heuristic {top}"), evaluate(gt, &tracks, eval)?));
    }
    let tracks = track_sequence_global(observations, weights, global)?;
    rows.push(("global".to_string(), evaluate(gt, &tracks, eval)?));
    Ok(rows)
}

/// Aligned table of ablation rows.
pub fn ablation_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{:<14} {:>7} {:>7} {:>7} {:>7}\n", "Method", "HOTA", "DetA", "AssA", "IDF1");
    for (name, r) in rows {
        out += &format!(
            "{name:<14} {:>7.2} {:>7.2} {:>7.2} {:>7.2}\n",
            r.hota.hota, r.hota.deta, r.hota.assa, r.clear.idf1
        );
    }
    out
}
