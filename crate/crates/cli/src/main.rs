//! `bevtrack` command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bevtrack::graph::train_hierarchy;
use bevtrack::io;
use bevtrack::pipeline::{
    ablation_table, aggregate_frames, association_accuracy, associate_frames, filter_nms_frames, reproduce_ablation,
    run_pipeline, run_tracker, simulate_stream, simulate_to_dir, Manifest, RunConfig, TrackerKind,
};
use bevtrack::reid::{retrieval_eval, Embedding, ViewRef};
use bevtrack::sim::generate;
use bevtrack::tracks::Observation;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bevtrack", version, about = "Multi-camera 3D tracking in bird's-eye view")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set scene.num_frames=600`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::load(p, &self.set)?,
            None => RunConfig::from_toml("", &self.set)?,
        })
    }
}

#[derive(Args, Clone, Default)]
struct DetectionArgs {
    #[arg(long)]
    score_threshold: Option<f64>,
    /// Circle NMS radius, meters.
    #[arg(long)]
    nms_radius: Option<f64>,
    /// Penalty for 2D boxes extending below the projected 3D bottom.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iou_gate: Option<f64>,
    /// Matches above this cost are dropped.
    #[arg(long)]
    cost_limit: Option<f64>,
}

impl DetectionArgs {
    fn apply(&self, c: &mut RunConfig) {
        let d = &mut c.detection;
        set(&mut d.score_threshold, self.score_threshold);
        set(&mut d.nms_radius, self.nms_radius);
        set(&mut d.alpha, self.alpha);
        set(&mut d.iou_gate, self.iou_gate);
        set(&mut d.assoc_cost_limit, self.cost_limit);
    }
}

#[derive(Args, Clone, Default)]
struct HierarchyArgs {
    /// Window sizes per level, e.g. `30,60,120,240,480`.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Frames per near-online step; must equal the top window.
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    prune_k: Option<usize>,
    #[arg(long)]
    mp_steps: Option<usize>,
    /// Merge windows with the global block (default).
    #[arg(long, conflicts_with = "heuristic_stitch")]
    global_block: bool,
    /// Stitch overlapping windows heuristically instead.
    #[arg(long)]
    heuristic_stitch: bool,
}

impl HierarchyArgs {
    fn apply(&self, c: &mut RunConfig) {
        let h = &mut c.hierarchy;
        if let Some(levels) = &self.levels {
            h.levels = levels.clone();
            h.stride = h.top_window();
        }
        set(&mut h.stride, self.stride);
        if self.prune_k.is_some() {
            h.prune.prune_k = self.prune_k;
        }
        set(&mut h.mp_steps, self.mp_steps);
        if self.global_block {
            c.tracker = TrackerKind::GnnGlobal;
        }
        if self.heuristic_stitch {
            c.tracker = TrackerKind::GnnHeuristic;
        }
    }
}

/// Tracker input: an observation file, or the three files it is built from.
#[derive(Args, Clone, Default)]
struct ObservationArgs {
    #[arg(long, conflicts_with_all = ["detections_3d", "associations", "embeddings"])]
    observations: Option<PathBuf>,
    #[arg(long, requires_all = ["associations", "embeddings"])]
    detections_3d: Option<PathBuf>,
    #[arg(long)]
    associations: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl ObservationArgs {
    fn load(&self) -> Result<Vec<Observation>> {
        if let Some(p) = &self.observations {
            return Ok(io::read_observations(p)?);
        }
        let (Some(d), Some(a), Some(e)) = (&self.detections_3d, &self.associations, &self.embeddings) else {
            bail!("give --observations, or --detections-3d with --associations and --embeddings");
        };
        let dets = io::read_detections_3d(d)?;
        let assoc = io::read_associations(a)?;
        let emb = io::read_embeddings(e)?;
        Ok(aggregate_frames(&dets, &assoc, &emb)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write all sensor and truth files.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        cameras: Option<usize>,
    },
    /// Score-filter and circle-NMS a 3D detection file.
    FilterNms {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        det: DetectionArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Match 2D boxes to projected 3D detections.
    Associate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        det: DetectionArgs,
        #[arg(long)]
        calibrations: PathBuf,
        #[arg(long)]
        detections_3d: PathBuf,
        #[arg(long)]
        detections_2d: PathBuf,
        /// Provenance file whose 3D indices refer to `--detections-3d`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Track with the hierarchical graph network.
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        hier: HierarchyArgs,
        #[command(flatten)]
        input: ObservationArgs,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Track with the Kalman-filter baseline.
    TrackKf {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        input: ObservationArgs,
        #[arg(long)]
        max_age: Option<u32>,
        #[arg(long)]
        gate_radius: Option<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute HOTA and CLEAR metrics.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        zero_distance: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        det: DetectionArgs,
        #[command(flatten)]
        hier: HierarchyArgs,
        /// Re-run the configuration recorded in a manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tracker: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare heuristic stitching windows with the global block.
    ReproduceAblation {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Leave-one-out retrieval metrics of ReID embeddings.
    ReidEval {
        /// Embedding file; identities come from `--truth`.
        #[arg(long, requires = "truth", conflicts_with = "seed")]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Simulate a gallery instead.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        ids: usize,
        #[arg(long, default_value_t = 20)]
        per_id: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
    },
    /// Train the hierarchy on simulated scenes.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg, seed, output, frames, objects, cameras } => {
            let mut c = cfg.load()?;
            c.seed = Some(seed);
            set(&mut c.scene.num_frames, frames);
            set(&mut c.scene.num_objects, objects);
            set(&mut c.scene.num_cameras, cameras);
            let spec = c.seeded_scene()?;
            let files = simulate_to_dir(&spec, &output)?;
            std::fs::write(output.join("scene.toml"), toml::to_string(&spec)?)?;
            println!("wrote scene to {}", output.display());
            println!("  ground truth {}", files.ground_truth.display());
        }
        Command::FilterNms { cfg, det, input, output } => {
            let mut c = cfg.load()?;
            det.apply(&mut c);
            c.detection.validate()?;
            let dets = io::read_detections_3d(&input)?;
            let (kept, _) = filter_nms_frames(&dets, &c.detection);
            io::write_detections_3d(&output, &kept)?;
            let count = |m: &io::Detections3DByFrame| m.values().map(Vec::len).sum::<usize>();
            println!("kept {} of {} detections", count(&kept), count(&dets));
        }
        Command::Associate { cfg, det, calibrations, detections_3d, detections_2d, truth, output } => {
            let mut c = cfg.load()?;
            det.apply(&mut c);
            c.detection.validate()?;
            let cams = io::read_calibrations(&calibrations)?;
            let d3 = io::read_detections_3d(&detections_3d)?;
            let d2 = io::read_detections_2d(&detections_2d)?;
            let assoc = associate_frames(&d3, &d2, &cams, &c.detection);
            io::write_associations(&output, &assoc)?;
            let matches: usize = assoc.values().flat_map(|a| a.per_camera.values()).map(Vec::len).sum();
            println!("{matches} matches over {} frames", assoc.len());
            if let Some(t) = truth {
                let identity: BTreeMap<u32, Vec<usize>> =
                    d3.iter().map(|(&f, ds)| (f, (0..ds.len()).collect())).collect();
                let acc = association_accuracy(&assoc, &identity, &io::read_truth(&t)?).fraction()?;
                println!("association accuracy {acc:.4}");
            }
        }
        Command::Track { cfg, hier, input, weights, output } => {
            let mut c = cfg.load()?;
            hier.apply(&mut c);
            if c.tracker == TrackerKind::Kf {
                c.tracker = TrackerKind::GnnGlobal;
            }
            c.hierarchy.validate()?;
            let obs = input.load()?;
            let w = io::read_weights(&weights)?;
            let t = Instant::now();
            let tracks = run_tracker(c.tracker, &obs, Some(&w), &c.hierarchy, &c.kf)?;
            io::write_tracks(&output, &tracks)?;
            println!("{} tracks from {} observations ({:.1?})", tracks.num_tracks(), obs.len(), t.elapsed());
        }
        Command::TrackKf { cfg, input, max_age, gate_radius, output } => {
            let mut c = cfg.load()?;
            set(&mut c.kf.max_age, max_age);
            set(&mut c.kf.gate_radius, gate_radius);
            let obs = input.load()?;
            let tracks = run_tracker(TrackerKind::Kf, &obs, None, &c.hierarchy, &c.kf)?;
            io::write_tracks(&output, &tracks)?;
            println!("{} tracks from {} observations", tracks.num_tracks(), obs.len());
        }
        Command::Eval { cfg, gt, tracks, zero_distance, json } => {
            let mut c = cfg.load()?;
            set(&mut c.eval.zero_distance, zero_distance);
            let gt = io::read_tracks(&gt)?;
            let pred = io::read_tracks(&tracks)?;
            let report = bevtrack::metrics::evaluate(&gt, &pred, &c.eval)?;
            print!("{}", report.to_table("tracks"));
            if let Some(p) = json {
                std::fs::write(p, report.to_json() + "\n")?;
            }
        }
        Command::Pipeline { cfg, det, hier, manifest, seed, tracker, weights, output } => {
            let mut c = match &manifest {
                Some(m) => Manifest::load(m)?.config,
                None => cfg.load()?,
            };
            det.apply(&mut c);
            hier.apply(&mut c);
            if seed.is_some() {
                c.seed = seed;
            }
            if let Some(t) = tracker {
                c.tracker = t.parse()?;
            }
            if weights.is_some() {
                c.paths.weights = weights;
            }
            set(&mut c.paths.output, output);
            if c.paths.output.as_os_str().is_empty() {
                bail!("an output directory is required (--output or paths.output)");
            }
            let out = run_pipeline(&c)?;
            println!("run written to {}", out.dir.display());
            if let Some(acc) = out.manifest.association_accuracy {
                println!("association accuracy {acc:.4}");
            }
            if let Some(r) = &out.report {
                print!("{}", r.to_table(&c.tracker.to_string()));
            }
        }
        Command::ReproduceAblation { cfg, seed, weights, frames, objects, output } => {
            let mut c = cfg.load()?;
            if seed.is_some() {
                c.seed = seed;
            }
            set(&mut c.scene.num_frames, frames);
            set(&mut c.scene.num_objects, objects);
            let spec = c.seeded_scene().context("reproduce-ablation simulates its scene")?;
            let w = io::read_weights(&weights)?;
            let (truth, cams) = generate(&spec)?;
            let stream = simulate_stream(&truth, &cams, &spec, &c.detection)?;
            let rows = reproduce_ablation(&stream.observations, &truth.track_set(), &w, &c.hierarchy, &c.eval)?;
            let table = ablation_table(&rows);
            print!("{table}");
            if let Some(p) = output {
                std::fs::write(p, table)?;
            }
        }
        Command::ReidEval { embeddings, truth, seed, ids, per_id, sigma } => {
            let gallery = match (embeddings, truth, seed) {
                (Some(e), Some(t), _) => file_gallery(&e, &t)?,
                (None, _, Some(seed)) => bevtrack::sim::embedding_gallery(seed, ids, per_id, sigma)?,
                _ => bail!("give --embeddings with --truth, or --seed"),
            };
            let m = retrieval_eval(&gallery)?;
            println!("gallery {} items", gallery.len());
            println!("rank-1 {:.2}  rank-5 {:.2}  rank-10 {:.2}  mAP {:.2}", m.rank1, m.rank5, m.rank10, m.map);
        }
        Command::Train { cfg, seed, output } => {
            let mut c = cfg.load()?;
            c.seed = Some(seed);
            c.training.seed = seed;
            let t = Instant::now();
            let w = train_hierarchy(&c.training, &c.detection)?;
            io::write_weights(&output, &w)?;
            println!("trained {} levels in {:.1?}", w.levels.len(), t.elapsed());
            for (k, l) in w.levels.iter().enumerate() {
                println!("  level {k} window {:>5} checksum {}", c.training.levels[k], l.checksum());
            }
        }
    }
    Ok(())
}

/// Embeddings labeled by the identity of their 2D box.
fn file_gallery(embeddings: &Path, truth: &Path) -> Result<Vec<(u64, Embedding)>> {
    let emb = io::read_embeddings(embeddings)?;
    let ids: BTreeMap<ViewRef, u64> = io::read_truth(truth)?
        .into_iter()
        .map(|t| (ViewRef { frame: t.frame, camera_id: t.camera_id, det2d_index: t.det2d_index }, t.identity))
        .collect();
    Ok(emb.into_iter().filter_map(|(v, e)| ids.get(&v).map(|&id| (id, e))).collect())
}

