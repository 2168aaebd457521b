use bevtrack::graph::{Aggregation, GnnDims, GnnWeights, HierarchyWeights};
use bevtrack::io;
use bevtrack::pipeline::{run_pipeline, simulate_to_dir, Manifest, RunConfig, TrackerKind};
use bevtrack::sim::SceneSpec;
use bevtrack::Error;

fn small_config(dir: &std::path::Path, seed: u64) -> RunConfig {
    let mut c = RunConfig::from_toml("", &[]).unwrap();
    c.seed = Some(seed);
    c.tracker = TrackerKind::Kf;
    c.scene.num_frames = 120;
    c.scene.num_objects = 5;
    c.paths.output = dir.to_path_buf();
    c
}

#[test]
fn overrides_reach_nested_fields() {
    let toml = "seed = 3\ntracker = \"gnn-heuristic\"\n[detection]\nalpha = 3.0\n";
    let c = RunConfig::from_toml(
        toml,
        &[
            "scene.num_frames=77".into(),
            "hierarchy.prune.prune_k=9".into(),
            "tracker=kf".into(),
            "paths.output=/tmp/x".into(),
        ],
    )
    .unwrap();
    assert_eq!(c.seed, Some(3));
    assert_eq!(c.detection.alpha, 3.0);
    assert_eq!(c.scene.num_frames, 77);
    assert_eq!(c.hierarchy.prune.prune_k, Some(9));
    assert_eq!(c.tracker, TrackerKind::Kf);
    assert_eq!(c.paths.output, std::path::PathBuf::from("/tmp/x"));
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = RunConfig::default();
    c.seed = Some(5);
    c.scene.num_objects = 3;
    let back = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    c.scene.num_objects = 4;
    assert_ne!(back.hash(), c.hash());
}

#[test]
fn bad_configs_are_rejected() {
    assert!(matches!(RunConfig::from_toml("seed = [", &[]), Err(Error::Parse { .. })));
    assert!(RunConfig::from_toml("", &["no_equals".into()]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path(), 1);
    c.seed = None;
    assert!(c.validate().is_err(), "simulated input needs a seed");
    let mut c = small_config(dir.path(), 1);
    c.tracker = TrackerKind::GnnGlobal;
    assert!(c.validate().is_err(), "graph tracker needs weights");
    let mut c = small_config(dir.path(), 1);
    c.paths.calibrations = Some(dir.path().join("missing.json"));
    assert!(c.validate().is_err());
}

#[test]
fn errors_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let files = simulate_to_dir(&SceneSpec { seed: 2, num_frames: 20, num_objects: 2, ..SceneSpec::default() }, dir.path()).unwrap();
    std::fs::write(&files.detections_3d, "frame,x,y,z,w,l,h,yaw,confidence\n0,1,1,0.85,0.6,0.6,1.7,0,2.0\n").unwrap();
    let mut c = small_config(&dir.path().join("run"), 2);
    c.paths.calibrations = Some(files.calibrations);
    c.paths.detections_3d = Some(files.detections_3d);
    c.paths.detections_2d = Some(files.detections_2d);
    c.paths.embeddings = Some(files.embeddings);
    match run_pipeline(&c) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn kf_pipeline_is_deterministic_and_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&small_config(&dir.path().join("a"), 4)).unwrap();
    let b = run_pipeline(&small_config(&dir.path().join("b"), 4)).unwrap();
    for f in ["tracks.csv", "metrics.json", "metrics.txt"] {
        assert_eq!(std::fs::read(a.dir.join(f)).unwrap(), std::fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
    assert_eq!(a.manifest.outputs, b.manifest.outputs);
    assert!(a.manifest.association_accuracy.unwrap() > 0.95);
    assert!(a.report.as_ref().unwrap().hota.hota > 50.0);

    let m = Manifest::load(&a.dir.join("manifest.json")).unwrap();
    let mut again = m.config.clone();
    again.paths.output = dir.path().join("c");
    let c = run_pipeline(&again).unwrap();
    assert_eq!(c.manifest.outputs["tracks.csv"], a.manifest.outputs["tracks.csv"]);
    assert_eq!(io::read_tracks(&c.dir.join("tracks.csv")).unwrap(), a.tracks.map_points(|p| bevtrack::tracks::TrackPoint { observation: None, ..*p }));
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&small_config(&dir.path().join("a"), 1)).unwrap();
    let b = run_pipeline(&small_config(&dir.path().join("b"), 2)).unwrap();
    assert_ne!(a.manifest.outputs["tracks.csv"], b.manifest.outputs["tracks.csv"]);
}

#[test]
fn simulated_files_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec { seed: 6, num_frames: 30, num_objects: 3, ..SceneSpec::default() };
    let files = simulate_to_dir(&spec, dir.path()).unwrap();
    let cams = io::read_calibrations(&files.calibrations).unwrap();
    assert_eq!(cams.len(), spec.num_cameras);
    let d3 = io::read_detections_3d(&files.detections_3d).unwrap();
    let d2 = io::read_detections_2d(&files.detections_2d).unwrap();
    let emb = io::read_embeddings(&files.embeddings).unwrap();
    let n2: usize = d2.values().flat_map(|c| c.values()).map(Vec::len).sum();
    assert_eq!(emb.len(), n2);
    assert!(d3.values().map(Vec::len).sum::<usize>() > 0);
    let truth = io::read_truth(&files.truth).unwrap();
    assert_eq!(truth.len(), n2);
    assert_eq!(io::read_tracks(&files.ground_truth).unwrap().num_tracks(), 3);

    // rewriting reproduces the files byte for byte
    let again = dir.path().join("again.csv");
    io::write_detections_3d(&again, &d3).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&files.detections_3d).unwrap());
    io::write_embeddings(&again, &emb).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&files.embeddings).unwrap());
}

#[test]
fn graph_tracker_runs_from_a_weights_file() {
    let dir = tempfile::tempdir().unwrap();
    let levels = (0..5).map(|k| GnnWeights::random(GnnDims::default(), Aggregation::Max, k)).collect();
    let wpath = dir.path().join("w.json");
    io::write_weights(&wpath, &HierarchyWeights::new(levels)).unwrap();
    let mut c = small_config(&dir.path().join("run"), 8);
    c.tracker = TrackerKind::GnnGlobal;
    c.paths.weights = Some(wpath);
    let out = run_pipeline(&c).unwrap();
    assert_eq!(out.manifest.weights_checksums.len(), 5);
    assert!(out.tracks.validate().is_ok());

    c.hierarchy = bevtrack::graph::HierarchyConfig::with_top_window(960);
    assert!(matches!(run_pipeline(&c), Err(Error::Stage { stage: "track", .. })), "too few levels for 960");
}
