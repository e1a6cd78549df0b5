use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn shapetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapetrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a spec for a textured object drifting right and returns its path.
fn write_spec(dir: &Path, frames: usize, step_x: f64) -> PathBuf {
    let spec = format!(
        r#"{{
            "textured": {{"width": 160, "height": 120, "object": {{"x": 20, "y": 40, "w": 40, "h": 40}}, "seed": 5}},
            "motion": {{"frames": {frames}, "x": {step_x}, "y": 0.25}}
        }}"#
    );
    let path = dir.join("spec.json");
    std::fs::write(&path, spec).unwrap();
    path
}

const ROI: &str = "16,36,49,49";

fn synth(dir: &Path, frames: usize, step_x: f64) -> PathBuf {
    let spec = write_spec(dir, frames, step_x);
    let out = dir.join("seq");
    let o = shapetrack(&["synth", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().skip(1).filter(|l| !l.is_empty()).collect()
}

#[test]
fn synth_writes_frames_and_ground_truth() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 30, 0.6);
    let pngs = std::fs::read_dir(&seq)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 30);
    let gt = std::fs::read_to_string(seq.join("gt_poses.csv")).unwrap();
    assert_eq!(gt.lines().next(), Some("frame,x,y,theta,sigma"));
    assert_eq!(data_rows(&gt).len(), 30);
    assert_eq!(data_rows(&gt)[2], "2,1.2,0.5,0.0,1.0");
    let boxes = std::fs::read_to_string(seq.join("groundtruth_rect.txt")).unwrap();
    assert_eq!(boxes.lines().count(), 30);
}

#[test]
fn synth_is_byte_identical_when_repeated() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), 5, 1.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&shapetrack(&["synth", s(&spec), "--out", s(&a)])), 0);
    assert_eq!(code(&shapetrack(&["synth", s(&spec), "--out", s(&b)])), 0);
    for name in ["frame_00000.png", "frame_00004.png", "gt_poses.csv", "groundtruth_rect.txt"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synth_rejects_out_of_frame_trajectory() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), 40, 4.0);
    let o = shapetrack(&["synth", s(&spec), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("frame 25"), "{}", stderr(&o));
}

#[test]
fn synth_rejects_bad_spec() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{"textured": {"width": 50, "height": 50, "object": {"x": 5, "y": 5, "w": 20, "h": 20}}, "motoin": {}}"#).unwrap();
    assert_eq!(code(&shapetrack(&["synth", s(&spec)])), 2);
    assert_eq!(code(&shapetrack(&["synth", s(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn track_writes_one_row_per_frame() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 10, 0.6);
    let out = dir.path().join("run");
    let o = shapetrack(&["track", s(&seq), "--roi", ROI, "--out", s(&out), "--overlay"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fps"));
    let poses = std::fs::read_to_string(out.join("poses.csv")).unwrap();
    assert_eq!(poses.lines().next(), Some("frame,status,x,y,theta,sigma,score,points,us_total"));
    let rows = data_rows(&poses);
    assert_eq!(rows.len(), 10);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 9);
        assert_eq!(f[0], i.to_string());
        assert!(["tracked", "lost"].contains(&f[1]));
        assert_eq!(f[4].split('.').nth(1).map(str::len), Some(6), "{row}");
    }
    assert!(out.join("overlay_00009.png").exists());
}

#[test]
fn track_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 8, 0.7);
    let mut outputs = Vec::new();
    for (name, threads) in [("one", "1"), ("three", "3"), ("again", "1")] {
        let out = dir.path().join(name);
        let o = shapetrack(&["track", s(&seq), "--roi", ROI, "--out", s(&out), "--no-timings", "--threads", threads]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(std::fs::read(out.join("poses.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn track_exit_codes() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 3, 0.5);
    // flat background only
    let o = shapetrack(&["track", s(&seq), "--roi", "100,2,30,30", "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = shapetrack(&["track", s(&dir.path().join("nowhere")), "--roi", ROI, "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&o), 2);
    let o = shapetrack(&["track", s(&seq), "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn track_accepts_a_frame_list() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 4, 0.5);
    let list = seq.join("frames.txt");
    std::fs::write(&list, "frame_00000.png\nframe_00001.png\nframe_00002.png\n").unwrap();
    let out = dir.path().join("run");
    let o = shapetrack(&["track", s(&list), "--roi", ROI, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_rows(&std::fs::read_to_string(out.join("poses.csv")).unwrap()).len(), 3);
}

#[test]
fn saved_model_resumes_tracking() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 6, 0.5);
    let model = dir.path().join("model.json");
    let o = shapetrack(&["track", s(&seq), "--roi", ROI, "--out", s(&dir.path().join("a")), "--save-model", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = shapetrack(&["track", s(&seq), "--load-model", s(&model), "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let poses = std::fs::read_to_string(dir.path().join("b/poses.csv")).unwrap();
    assert!(data_rows(&poses).iter().all(|r| r.contains(",tracked,")), "{poses}");
    let o = shapetrack(&["track", s(&seq), "--load-model", s(&model), "--roi", ROI]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_verdicts() {
    let dir = TempDir::new().unwrap();
    let seq = synth(dir.path(), 20, 2.0);
    let run = dir.path().join("run");
    let model = dir.path().join("model.json");
    let o = shapetrack(&["track", s(&seq), "--roi", ROI, "--out", s(&run), "--save-model", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let gt = seq.join("groundtruth_rect.txt");
    let poses = run.join("poses.csv");

    let o = shapetrack(&["eval", s(&poses), "--gt", s(&gt), "--model", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert!(summary["mean_iou"].as_f64().unwrap() >= 0.9, "{summary}");
    assert_eq!(summary["robust"], true);
    assert_eq!(summary["frames_lost"], 0);
    assert!(summary["fps"].as_f64().unwrap() > 0.0);
    assert_eq!(data_rows(&std::fs::read_to_string(run.join("report.csv")).unwrap()).len(), 20);

    // every row frozen at the first pose while the object moves 38 px away
    let text = std::fs::read_to_string(&poses).unwrap();
    let first = data_rows(&text)[0].split_once(',').unwrap().1.to_string();
    let mut frozen = String::from("frame,status,x,y,theta,sigma,score,points,us_total\n");
    for i in 0..20 {
        frozen.push_str(&format!("{i},{first}\n"));
    }
    let frozen_path = dir.path().join("frozen.csv");
    std::fs::write(&frozen_path, frozen).unwrap();
    let o = shapetrack(&["eval", s(&frozen_path), "--gt", s(&gt), "--model", s(&model), "--out", s(&dir.path().join("f"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let gt_text = std::fs::read_to_string(&gt).unwrap();
    let mut lines: Vec<&str> = gt_text.lines().collect();
    lines[19] = "140,41,40";
    let broken = dir.path().join("broken.txt");
    std::fs::write(&broken, lines.join("\n")).unwrap();
    let o = shapetrack(&["eval", s(&poses), "--gt", s(&broken), "--model", s(&model), "--out", s(&dir.path().join("g"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 20"), "{}", stderr(&o));
}

#[test]
fn config_layers_and_dump() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"s_min": 0.5, "update.lambda": 0.2, "search.theta_range": "deg:30"}"#).unwrap();
    let o = shapetrack(&["--config", s(&cfg), "--smin", "0.7", "--dump-config"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["s_min"], 0.7);
    assert_eq!(v["update.lambda"], 0.2);
    assert!((v["search.theta_range"].as_f64().unwrap() - 30f64.to_radians()).abs() < 1e-15);

    let o = shapetrack(&["--dump-config"]);
    let defaults: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(defaults["s_min"], 0.6);
    assert_eq!(defaults["update.lambda"], 0.1);

    std::fs::write(&cfg, r#"{"update.lamda": 0.2}"#).unwrap();
    let o = shapetrack(&["--config", s(&cfg), "--dump-config"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("update.lamda"));
    assert_eq!(code(&shapetrack(&["--set", "s_min=deg:3", "--dump-config"])), 2);
}
