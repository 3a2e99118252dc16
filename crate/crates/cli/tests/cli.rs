use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hetgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetgnn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_synth(dir: &Path) {
    let o = hetgnn(&[
        "synth",
        "--classes",
        "3",
        "--target-nodes",
        "80",
        "--intermediates",
        "60,30",
        "--q",
        "0.8",
        "--k",
        "4",
        "--seed",
        "2",
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&hetgnn(&[])), 1);
    assert_eq!(code(&hetgnn(&["frobnicate"])), 1);
    assert_eq!(code(&hetgnn(&["gradcheck", "--fuse", "max"])), 1);
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let m = dir.path().join("manifest.json");
    assert_eq!(code(&hetgnn(&["metrics", "--graph", p(&m), "--level", "sideways"])), 1);
    assert_eq!(code(&hetgnn(&["synth", "--q", "1.5", "--out", p(dir.path())])), 1);
    assert_eq!(code(&hetgnn(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&hetgnn(&["metrics", "--graph", p(&missing)])), 2);
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        code(&hetgnn(&["metrics", "--graph", p(&dir.path().join("bad.json"))])),
        2
    );
    small_synth(dir.path());
    let m = dir.path().join("manifest.json");
    assert_eq!(
        code(&hetgnn(&[
            "eval",
            "--graph",
            p(&m),
            "--run",
            p(&dir.path().join("no_run"))
        ])),
        2
    );
}

#[test]
fn metrics_and_induce_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let m = dir.path().join("manifest.json");
    let out = dir.path().join("metrics");
    let o = hetgnn(&[
        "metrics",
        "--graph",
        p(&m),
        "--target",
        "target",
        "--level",
        "node",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);

    let o = hetgnn(&[
        "induce",
        "--graph",
        p(&m),
        "--metapath",
        "to_i0,rev_to_i0",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    let tsv = fs::read_to_string(out.join("induced.tsv")).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("induced.json")).unwrap()).unwrap();
    assert_eq!(tsv.lines().count() as u64, summary["edges"].as_u64().unwrap());
    assert_eq!(
        code(&hetgnn(&["induce", "--graph", p(&m), "--metapath", "to_i0,to_i1"])),
        1
    );
}

#[test]
fn train_is_reproducible_and_evaluable() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let m = dir.path().join("manifest.json");
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"hidden_dim": 8}, "epochs": 15}"#).unwrap();
    let runs = [dir.path().join("run_a"), dir.path().join("run_b")];
    for run in &runs {
        let o = hetgnn(&[
            "train",
            "--graph",
            p(&m),
            "--config",
            p(&cfg),
            "--seed",
            "1",
            "--out",
            p(run),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["curves.csv", "params.bin", "metrics.json", "config.json", "buckets.csv"] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let curves = fs::read_to_string(runs[0].join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 16);

    let o = hetgnn(&["eval", "--graph", p(&m), "--run", p(&runs[0]), "--out", p(&runs[0])]);
    assert_eq!(code(&o), 0);
    let scores: serde_json::Value = serde_json::from_slice(&fs::read(runs[0].join("eval.json")).unwrap()).unwrap();
    for split in ["train", "val", "test"] {
        let f1 = scores[split]["micro_f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }

    let o = hetgnn(&[
        "buckets",
        "--graph",
        p(&m),
        "--run",
        p(&runs[0]),
        "--metric",
        "mde",
        "--quantiles",
        "3",
        "--out",
        p(&runs[0]),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(runs[0].join("buckets.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);

    fs::write(&cfg, r#"{"epochs": 3, "learning_rate": 0.1}"#).unwrap();
    let o = hetgnn(&[
        "train",
        "--graph",
        p(&m),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("run_c")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    for fuse in ["mean", "sum"] {
        let mut args = vec!["gradcheck", "--fuse", fuse, "--seed", "4", "--out", p(dir.path())];
        if fuse == "sum" {
            args.push("--contrastive-completion");
        }
        let o = hetgnn(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        let report: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
        assert_eq!(report["passed"], serde_json::Value::Bool(true));
    }
}
