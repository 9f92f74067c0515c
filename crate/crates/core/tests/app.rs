//! Scene configs, output files and the simulate command.

use diffcloth::app::{read_trajectory, run_simulate, scenes, write_trajectory, AppError, SceneConfig};
use proptest::prelude::*;

fn wind() -> SceneConfig {
    scenes::bundled("wind").unwrap().unwrap()
}

#[test]
fn bundled_scenes_round_trip_through_toml() {
    for name in scenes::names() {
        let cfg = scenes::bundled(name).unwrap().unwrap();
        assert_eq!(SceneConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{name}");
        cfg.to_spec().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

fn config_error(text: &str) -> String {
    match SceneConfig::parse(text) {
        Err(AppError::Config { path, message }) => format!("{path}: {message}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn validation_errors_name_the_offending_field() {
    let text = wind().to_toml();
    let bad_uv = text.replacen("grid_uv = [0.0, 1.0]", "grid_uv = [0.0, 1.5]", 1);
    assert_ne!(bad_uv, text);
    assert!(config_error(&bad_uv).starts_with("attachments[0].grid_uv"), "{}", config_error(&bad_uv));

    let bad_step = text.replacen("time_step_s = 0.001", "time_step_s = -0.001", 1);
    assert!(config_error(&bad_step).starts_with("time_step_s"));

    let unknown = format!("{text}\n[surprise]\nvalue = 1\n");
    assert!(config_error(&unknown).contains("surprise"), "{}", config_error(&unknown));
}

#[test]
fn unknown_scene_name_lists_bundled_scenes() {
    let msg = scenes::resolve("no_such_scene").unwrap_err().to_string();
    assert!(msg.contains("napkin_bowl"), "{msg}");
}

#[test]
fn slope_at_tilts_plane_with_ribbon() {
    let spec = scenes::slope_at(20.0).to_spec().unwrap();
    let n = spec.obstacles[0].shape.clone();
    let plane_distance = |p: diffcloth::geom::Vec3<f64>| match n {
        diffcloth::contact::Shape::HalfSpace { point, normal } => (p - point).dot(normal),
        _ => unreachable!(),
    };
    for v in &spec.mesh.vertices {
        assert!(plane_distance(*v).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn trajectory_file_round_trips(m in 0usize..20, frames in 0usize..6, seed in any::<u64>()) {
        let data: Vec<Vec<f64>> = (0..frames).map(|f| (0..m).map(|i| ((seed ^ (f * 31 + i) as u64) as f64).sin()).collect()).collect();
        let mut bytes = Vec::new();
        write_trajectory(&mut bytes, &data).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 8 * m * frames);
        prop_assert_eq!(read_trajectory(&bytes[..]).unwrap(), data);
    }
}

#[test]
fn truncated_trajectory_is_rejected() {
    let mut bytes = Vec::new();
    write_trajectory(&mut bytes, &[vec![1.0, 2.0, 3.0]]).unwrap();
    bytes.pop();
    assert!(read_trajectory(&bytes[..]).is_err());
    assert!(read_trajectory(&b"NOPE"[..]).is_err());
}

#[test]
fn simulate_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = wind();
    cfg.steps = 20;
    cfg.output.frame_every = 10;
    let report = run_simulate(&cfg, Some(dir.path())).unwrap();
    assert_eq!(report.rows.len(), 21);
    assert_eq!(report.unconverged_steps, 0);

    let frames = read_trajectory(std::fs::File::open(dir.path().join("trajectory.bin")).unwrap()).unwrap();
    assert_eq!(frames.len(), 21);
    assert_eq!(frames.last().unwrap(), &report.states.last().unwrap().x);

    let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for expected in ["frames/frame_00000.obj", "frames/frame_00010.obj", "frames/frame_00020.obj", "trajectory.bin", "diagnostics.csv"] {
        assert!(files.contains(&expected), "{expected} missing from {files:?}");
    }
    let reparsed = SceneConfig::parse(manifest["config"].as_str().unwrap()).unwrap();
    assert_eq!(reparsed, cfg);
}

#[test]
fn cloth_at_rest_without_forces_stays_at_rest() {
    let mut cfg = wind();
    cfg.steps = 10;
    cfg.force.gravity_m_per_s2 = [0.0; 3];
    cfg.force.wind.amplitude_n = [0.0; 3];
    let r = run_simulate(&cfg, None).unwrap();
    for row in &r.rows {
        assert!((row.area_ratio - 1.0).abs() < 1e-12);
        assert!(row.kinetic_energy_j < 1e-20);
        assert_eq!(row.contacts(), 0);
    }
    assert!(r.max_displacement() < 1e-12, "{:e}", r.max_displacement());
}
