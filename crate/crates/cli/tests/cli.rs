use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn warpcell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpcell"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gradcheck_reports_json_and_exit_status() {
    let ok = warpcell(&["gradcheck", "--seed", "5"]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let rep: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["seed"], 5);

    let bad = warpcell(&["gradcheck", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    let rep: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(rep["passed"], false);
}

#[test]
fn generate_train_evaluate_visualize() {
    let dir = tempfile::tempdir().unwrap();
    let synth = r#"{"height": 20, "width": 20, "length": 5, "box_size": 6, "distractors": 1,
                    "speed": [1.0, 1.5], "occlusion": {"start": 2, "length": 1}}"#;
    let data_cfg = dir.path().join("data.json");
    fs::write(&data_cfg, format!(r#"{{"synth": {synth}, "count": 2}}"#)).unwrap();
    let train_cfg = dir.path().join("train.json");
    fs::write(
        &train_cfg,
        format!(r#"{{"kind": "warplstm", "iterations": 2, "batch_size": 1, "synth": {synth}}}"#),
    )
    .unwrap();
    let (data, ckpt) = (dir.path().join("data"), dir.path().join("ckpt"));
    let report = dir.path().join("report.json");
    let grid = dir.path().join("grid.csv");

    let out = warpcell(&[
        "synth-gen",
        "--config",
        path(&data_cfg),
        "--out",
        path(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(data.join("seq001/t04.ten").exists());

    let out = warpcell(&[
        "train",
        "--config",
        path(&train_cfg),
        "--out",
        path(&ckpt),
        "--log-every",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let losses: Vec<f64> =
        serde_json::from_str(&fs::read_to_string(ckpt.join("losses.json")).unwrap()).unwrap();
    assert_eq!(losses.len(), 2);

    let out = warpcell(&[
        "eval",
        "--ckpt",
        path(&ckpt),
        "--data",
        path(&data),
        "--report",
        path(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["overall"]["frames"], 10);
    assert_eq!(rep["occlusion"]["frames"], 2);
    let miou = rep["overall"]["mean_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    let out = warpcell(&[
        "warp-viz",
        "--ckpt",
        path(&ckpt),
        "--data",
        path(&data),
        "--out",
        path(&grid),
        "--lines",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(&grid).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,line,orientation,index,x,y"));
    // 5 steps × (3 rows × 20 + 3 columns × 20) vertices.
    assert_eq!(lines.count(), 5 * 120);
}

const ANNOTATIONS: &str = "\
v1,0,0.1,0.1,0.4,0.5,1,0
v1,0,0.1,0.1,0.4,0.5,2,0
v1,1,0.1,0.1,0.4,0.5,1,0
v1,1,0.1,0.1,0.4,0.5,2,0
v1,3,0.5,0.5,0.9,0.9,1,1
v1,4,0.5,0.5,0.9,0.9,1,1
v1,0,0.5,0.5,0.9,0.9,1,2
v2,2,0.2,0.2,0.6,0.6,1,0
v2,3,0.2,0.2,0.6,0.6,1,0
v2,5,0.2,0.2,0.6,0.6,1,3
";

#[test]
fn tubelet_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    fs::write(p("ann.csv"), ANNOTATIONS).unwrap();

    let out = warpcell(&[
        "tubelet",
        "link",
        "--in",
        path(&p("ann.csv")),
        "--out",
        path(&p("tubelets.json")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let tubelets: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("tubelets.json")).unwrap()).unwrap();
    let tubelets = tubelets.as_array().unwrap();
    assert_eq!(tubelets.len(), 5);
    assert_eq!(tubelets[0]["label"], "1+2");

    let out = warpcell(&[
        "tubelet",
        "split",
        "--in",
        path(&p("tubelets.json")),
        "--out",
        path(&p("split.json")),
        "--val",
        "0",
        "--test",
        "0",
        "--seed",
        "9",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("split.json")).unwrap()).unwrap();
    assert_eq!(split["seed"], 9);
    assert_eq!(split["train_labels"], serde_json::json!(["1"]));
    assert_eq!(split["dropped_labels"], serde_json::json!(["1+2"]));

    let out = warpcell(&[
        "tubelet",
        "pairs",
        "--in",
        path(&p("split.json")),
        "--out",
        path(&p("pairs.json")),
        "--pad",
        "1",
        "--annotations",
        path(&p("ann.csv")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pairs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("pairs.json")).unwrap()).unwrap();
    assert_eq!(pairs.as_array().unwrap().len(), 4);

    fs::write(
        p("dets.csv"),
        "v1,0,0.1,0.1,0.5,0.4,0.9,1+2\nv1,0,0.6,0.6,0.7,0.7,0.95,1+2\n",
    )
    .unwrap();
    let out = warpcell(&[
        "tubelet",
        "map",
        "--in",
        path(&p("dets.csv")),
        "--gt",
        path(&p("ann.csv")),
        "--out",
        path(&p("map.json")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("map.json")).unwrap()).unwrap();
    // Label 1+2 has two GT boxes; one hit ranked second gives AP 0.25.
    assert!((rep["per_label_ap"]["1+2"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!(rep["mAP"].is_number());
}

#[test]
fn malformed_annotations_fail_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("bad.csv");
    fs::write(&ann, "v1,0,0.1,0.1,0.4,0.5,1,0\nv1,1,0.6,0.1,0.4,0.5,1,0\n").unwrap();
    let out = warpcell(&[
        "tubelet",
        "link",
        "--in",
        path(&ann),
        "--out",
        path(&dir.path().join("t.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
