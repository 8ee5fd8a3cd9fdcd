use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dirfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirfuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SCENARIO: &str = r#"{
  "scene": {
    "shape": {"width": 24, "height": 20, "class_names": ["water", "forest", "crop"]},
    "n_blobs": 9,
    "class_mix": [0.4, 0.3, 0.3],
    "seed": 11
  },
  "investigators": [
    {"id": "ann", "noise_rate": 0.05, "confusion_kernel": [[0.6,0.2,0.2],[0.2,0.6,0.2],[0.2,0.2,0.6]], "softness": 4.0, "seed": 1},
    {"id": "bo", "noise_rate": 0.2, "confusion_kernel": [[0.6,0.2,0.2],[0.2,0.6,0.2],[0.2,0.2,0.6]], "softness": 2.0, "seed": 2},
    {"id": "cy", "noise_rate": 0.3, "confusion_kernel": [[0.6,0.2,0.2],[0.2,0.6,0.2],[0.2,0.2,0.6]], "softness": 1.0, "seed": 3},
    {"id": "di", "noise_rate": 0.1, "confusion_kernel": [[0.6,0.2,0.2],[0.2,0.6,0.2],[0.2,0.2,0.6]], "softness": 6.0, "seed": 4}
  ]
}"#;

fn simulated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scenario.json"), SCENARIO).unwrap();
    let o = dirfuse(&["simulate", "scenario.json", "-o", "sim"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("sim/truth.json").exists());
    assert!(dir.path().join("sim/maps/ann.bin").exists());
    dir
}

#[test]
fn pipeline_runs_from_config() {
    let dir = simulated();
    fs::write(
        dir.path().join("run.json"),
        r#"{"input_dir": "sim/maps", "reference": "sim/truth", "output_dir": "out",
            "k_values": [2], "mc_iterations": 5, "per_class_samples": 10, "seed": 3,
            "weight_subsample": 200}"#,
    )
    .unwrap();
    let o = dirfuse(&["pipeline", "run.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("variant,n,oa,"));
    assert!(summary.contains("\nplurality-baseline,4,"));
    assert!(summary.contains("\nkmedoids_k2g2,"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = simulated();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"input_dir": "sim/maps", "reference": "sim/truth", "output_dir": "out", "k_values": [1]}"#,
    )
    .unwrap();
    let o = dirfuse(&["pipeline", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k = 1"));
    assert!(!dir.path().join("out").exists());

    assert_eq!(dirfuse(&["fuse", "-i", "sim/maps"], dir.path()).status.code(), Some(2));
    let o = dirfuse(&["fuse", "-i", "sim/maps", "-o", "f", "--cluster", "kmeans", "-k", "2", "--group", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dirfuse(&["iji", "nothing"], dir.path()).status.code(), Some(1));
    assert_eq!(dirfuse(&["pipeline", "nothing.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn fuse_entropy_assess_iji() {
    let dir = simulated();
    let p = dir.path();
    let o = dirfuse(&["fuse", "-i", "sim/maps", "-o", "plain"], p);
    assert!(o.status.success());
    for f in ["fused_prob.json", "alpha_post.json", "fused_label.json", "fused_label.bin"] {
        assert!(p.join("plain").join(f).exists(), "{f}");
    }

    let o = dirfuse(&["fuse", "-i", "sim/maps", "-o", "auto", "--weights", "auto", "--subsample", "200"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let weights = fs::read_to_string(p.join("auto/weights.csv")).unwrap();
    assert_eq!(weights.lines().count(), 5);
    let o = dirfuse(&["fuse", "-i", "sim/maps", "-o", "file", "--weights", "auto/weights.csv"], p);
    assert!(o.status.success());
    assert_eq!(
        fs::read(p.join("auto/fused_label.bin")).unwrap(),
        fs::read(p.join("file/fused_label.bin")).unwrap()
    );

    let o = dirfuse(&["fuse", "-i", "sim/maps", "-o", "grp", "--cluster", "kmedoids", "-k", "2", "--group", "1"], p);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("group 1: ann"));

    let o = dirfuse(&["entropy", "-i", "plain/fused_prob", "-o", "ent"], p);
    assert!(o.status.success());
    assert!(fs::read_to_string(p.join("ent.json")).unwrap().contains("entropy"));

    let o = dirfuse(&["assess", "--pred", "plain/fused_label", "--ref", "sim/truth"], p);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("oa\t"));
    let o = dirfuse(
        &["assess", "--pred", "sim/maps/bo", "--ref", "sim/truth", "--mc", "4", "--per-class", "10", "-o", "mc.csv"],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(p.join("mc.csv")).unwrap().lines().count(), 5);

    let o = dirfuse(&["iji", "sim/truth"], p);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("map_id,m,E,iji\ntruth,3,"), "{out}");
}
