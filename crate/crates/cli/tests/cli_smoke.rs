//! End-to-end smoke over the binary: simulate → map → optimize-map →
//! relocalize → evaluate, all under a minute on one core.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn plslam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plslam"))
}

fn write_small_config(path: &Path) {
    // Desk-scale run: one lap, short sequence, PGO trigger low enough to
    // exercise the full offline chain.
    let text = r#"
seed = 11

[trajectory]
laps = 2
camera_hz = 1.8

[observation]
pixel_sigma = 0.8
descriptor_sigma = 0.04
query_night_level = 5
query_count = 6

[map_optimization]
pgo_point_trigger = 1000
"#;
    std::fs::write(path, text).unwrap();
}

#[test]
fn full_pipeline_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("config.toml");
    write_small_config(&config);
    let seq = root.join("seq");

    let status = plslam()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&seq)
        .status()
        .unwrap();
    assert!(status.success(), "simulate failed");
    assert!(seq.join("left_00000.plf").exists());
    assert!(seq.join("right_00000.plf").exists());
    assert!(seq.join("imu.txt").exists());
    assert!(seq.join("groundtruth.tum").exists());
    assert!(seq.join("queries/q000.plf").exists());

    let map_path = root.join("initial.plm");
    let traj_path = root.join("trajectory.tum");
    let status = plslam()
        .args(["map", "--config"])
        .arg(&config)
        .arg("--seq")
        .arg(&seq)
        .arg("--map")
        .arg(&map_path)
        .arg("--trajectory")
        .arg(&traj_path)
        .status()
        .unwrap();
    assert!(status.success(), "map failed");
    assert!(map_path.exists());

    let optimized = root.join("optimized.plm");
    let status = plslam()
        .args(["optimize-map", "--config"])
        .arg(&config)
        .arg("--in")
        .arg(&map_path)
        .arg("--out")
        .arg(&optimized)
        .status()
        .unwrap();
    assert!(status.success(), "optimize-map failed");

    let report = root.join("reloc.txt");
    let status = plslam()
        .args(["relocalize", "--config"])
        .arg(&config)
        .arg("--map")
        .arg(&optimized)
        .arg("--queries")
        .arg(seq.join("queries"))
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success(), "relocalize failed");
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(report_text.lines().count(), 6);

    // ATE of the estimated trajectory against ground truth.
    let output = plslam()
        .args(["evaluate", "ate", "--est"])
        .arg(&traj_path)
        .arg("--truth")
        .arg(seq.join("groundtruth.tum"))
        .output()
        .unwrap();
    assert!(output.status.success(), "evaluate ate failed");
    let text = String::from_utf8(output.stdout).unwrap();
    let rmse: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("ate-rmse: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rmse < 1.0, "smoke ATE {rmse}");

    // Recall against the query ground truth.
    let output = plslam()
        .args(["evaluate", "recall", "--report"])
        .arg(&report)
        .arg("--truth")
        .arg(seq.join("queries/groundtruth.txt"))
        .output()
        .unwrap();
    assert!(output.status.success(), "evaluate recall failed");
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.starts_with("recall:"), "unexpected output: {text}");

    // Inspect prints stats.
    let output = plslam().arg("inspect").arg("--map").arg(&optimized).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("keyframes:"));
    assert!(text.contains("junction-vocabulary:"));

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "smoke took {elapsed:.1} s");
    println!("full pipeline smoke in {elapsed:.1} s");
}

#[test]
fn sap_subcommand_on_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    // Two small PLF files: detections equal truth.
    let mut lines = Vec::new();
    for k in 0..4 {
        let mut seg = pl_features::LineSegment2D::from_endpoints(
            nalgebra::Vector2::new(10.0 + 30.0 * k as f64, 20.0),
            nalgebra::Vector2::new(10.0 + 30.0 * k as f64, 420.0),
        )
        .unwrap();
        seg.score = 0.9;
        lines.push(seg);
    }
    let output = pl_features::FrontendOutput {
        image_id: 0,
        keypoints: Vec::new(),
        lines,
        junctions: Vec::new(),
    };
    let det = dir.path().join("det.plf");
    let truth = dir.path().join("truth.plf");
    for path in [&det, &truth] {
        let file = std::fs::File::create(path).unwrap();
        pl_features::write_frontend_output(std::io::BufWriter::new(file), &output).unwrap();
    }
    let out = plslam()
        .args(["evaluate", "sap", "--detections"])
        .arg(&det)
        .arg("--truth")
        .arg(&truth)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sap-5: 1.0000"), "{text}");
}

#[test]
fn malformed_inputs_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    // Bad config.
    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "not_a_field = true\n").unwrap();
    let status = plslam()
        .args(["simulate", "--config"])
        .arg(&bad_config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Mismatched trajectories (no overlap).
    let a = dir.path().join("a.tum");
    let b = dir.path().join("b.tum");
    std::fs::write(&a, "0.0 0 0 0 0 0 0 1\n1.0 1 0 0 0 0 0 1\n2.0 2 0 0 0 0 0 1\n").unwrap();
    std::fs::write(&b, "100.0 0 0 0 0 0 0 1\n101.0 1 0 0 0 0 0 1\n").unwrap();
    let status = plslam()
        .args(["evaluate", "ate", "--est"])
        .arg(&a)
        .arg("--truth")
        .arg(&b)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Missing map path.
    let status = plslam()
        .args(["inspect", "--map"])
        .arg(dir.path().join("missing.plm"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
