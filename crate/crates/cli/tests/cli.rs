use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynafill::config::Config;
use dynafill::dataset::toy::ToySceneConfig;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynafill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small configuration: 32x32 toy sequences, one per split.
fn small_config(dir: &Path, frames: usize) -> PathBuf {
    let mut cfg = Config::overfit_preset();
    cfg.toy = ToySceneConfig {
        width: 32,
        height: 32,
        frames,
        ..ToySceneConfig::default()
    };
    cfg.eval.frechet = false;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml_string()).unwrap();
    path
}

fn generate(config: &Path, out: &Path) -> Output {
    run(&["generate", "--config", p(config), "--out", p(out)])
}

fn checksum_line(o: &Output) -> String {
    stdout(o).lines().find(|l| l.starts_with("checksum: ")).unwrap().to_string()
}

#[test]
fn generate_is_deterministic_and_guards_its_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), 3);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = generate(&config, &a);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = generate(&config, &b);
    assert_eq!(checksum_line(&first), checksum_line(&second));
    assert!(a.join("train").is_dir() && a.join("val").is_dir() && a.join("test").is_dir());
    assert!(a.join("run.json").is_file() && a.join("config.toml").is_file());

    let again = generate(&config, &a);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    let forced = run(&["generate", "--config", p(&config), "--out", p(&a), "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(checksum_line(&forced), checksum_line(&first));

    let reseeded = run(&["generate", "--config", p(&config), "--out", p(&tmp.path().join("c")), "--seed", "5"]);
    assert_ne!(checksum_line(&reseeded), checksum_line(&first));
}

#[test]
fn zero_frames_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), 0);
    let o = generate(&config, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error:"));
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), 3);
    let data = tmp.path().join("data");
    assert!(generate(&config, &data).status.success());
    let out = tmp.path().join("eval");
    let o = run(&["eval", "--config", p(&config), "--data", p(&data), "--predictions", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let row = &json[0];
    assert_eq!(row["label"], "test");
    for scope in ["mask", "full"] {
        assert_eq!(row[scope]["l1"].as_f64(), Some(0.0));
        assert_eq!(row[scope]["ssim"].as_f64(), Some(1.0));
        assert_eq!(row[scope]["depth_rmse_m"].as_f64(), Some(0.0));
    }
    assert!(out.join("metrics.csv").is_file());
}

#[test]
fn train_then_ablate_and_pointcloud() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), 3);
    let data = tmp.path().join("data");
    assert!(generate(&config, &data).status.success());

    let missing = run(&["train", "--config", p(&config), "--data", p(&data), "--stage", "joint", "--out", p(&tmp.path().join("fresh"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("coarse"), "{}", stderr(&missing));

    let run_dir = tmp.path().join("run");
    let o = run(&["train", "--config", p(&config), "--data", p(&data), "--stage", "all", "--max-steps", "1", "--out", p(&run_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for stage in ["depth", "coarse", "refine", "joint"] {
        assert!(stdout(&o).contains(&format!("{stage}: 1 steps")), "{}", stdout(&o));
        assert!(run_dir.join(stage).join("last").is_dir());
    }

    let sweep = tmp.path().join("sweep");
    let ckpt = run_dir.join("joint").join("last");
    let o = run(&[
        "ablate", "--config", p(&config), "--data", p(&data), "--checkpoint", p(&ckpt), "--kind", "odometry", "--grid", "0,0.5,1",
        "--out", p(&sweep),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = fs::read_to_string(sweep.join("sweep.csv")).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 4, "{rows:?}");
    for (row, label) in rows[1..].iter().zip(["odometry@0", "odometry@0.5", "odometry@1"]) {
        assert!(row.starts_with(label), "{row}");
    }
    assert!(fs::read_to_string(sweep.join("sweep.svg")).unwrap().starts_with("<svg"));

    let seq = fs::read_dir(data.join("test")).unwrap().next().unwrap().unwrap().path();
    let cloud = tmp.path().join("cloud");
    let o = run(&["pointcloud", "--config", p(&config), "--sequence", p(&seq), "--stride", "2", "--out", p(&cloud)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ply = fs::read_to_string(cloud.join("pointcloud.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
    let count: usize = ply.lines().find_map(|l| l.strip_prefix("element vertex ")).unwrap().parse().unwrap();
    let body = ply.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), count);
    assert!(count > 0);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--stage", "warmup", "--data", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"));
    let o = run(&["eval", "--data", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}
