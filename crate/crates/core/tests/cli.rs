use std::path::Path;
use std::process::Command;

use allg::model::load_checkpoint;

fn allg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_allg"))
}

const FAST: [&str; 6] = ["--dataset", "blobs", "--pretrain-epochs", "30", "--train-epochs", "30"];

fn run_ok(args: &[&str]) {
    let out = allg().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn select_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = FAST.to_vec();
        args.extend(["--m", "10", "--out", out.to_str().unwrap()]);
        run_ok(&[&["select"], args.as_slice()].concat());
    }
    for f in ["ranking.csv", "losses.csv", "selection.json", "checkpoint.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let ranking: Vec<usize> = read(&a.join("ranking.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ranking.len(), 150);
    let sel: serde_json::Value = serde_json::from_str(&read(&a.join("selection.json"))).unwrap();
    let picked: Vec<usize> = sel["selected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert_eq!(picked, ranking[..10]);

    let ckpt = load_checkpoint(a.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.params.q.dim(), (150, 150));
    assert_eq!(ckpt.config.train_epochs, 30);
    assert_eq!(read(&a.join("losses.csv")).lines().count(), 31);
}

#[test]
fn evaluate_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    run_ok(&[
        "evaluate",
        "--dataset",
        "blobs",
        "--selector",
        "random,kmeans,dcs",
        "--budgets",
        "10:30:10",
        "--runs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3 * 2);
    let report = read(&out.join("report.csv"));
    assert_eq!(report.lines().count(), 1 + 3 * 2 * 3 * 2);
    assert_eq!(read(&out.join("plot.csv")).lines().count(), 1 + 3 * 2 * 3);

    let table = read(&out.join("table.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "selector,classifier,10,20,30,Average");
    for l in lines {
        let v: Vec<f64> = l.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        let mean = v[..3].iter().sum::<f64>() / 3.0;
        assert!((mean - v[3]).abs() < 1e-12);
    }
    assert!(read(&out.join("config.toml")).contains("schema_version = 1"));
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nseed = 5\n[dataset]\nname = \"blobs\"\n[dataset.blobs]\nn_per_class = 12\n\
         [protocol]\nbudgets = [4, 8]\nruns = 1\n[[selectors]]\nkind = \"random\"\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    run_ok(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = read(&out.join("report.csv"));
    assert!(report.lines().skip(1).all(|l| l.split(',').nth(3) == Some("9")), "{report}");
    assert!(read(&out.join("config.toml")).contains("seed = 9"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nunknown_key = 3\n").unwrap();
    let code = |args: &[&str]| allg().args(args).output().unwrap().status.code();
    assert_eq!(code(&["evaluate", "--config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["evaluate", "--dataset", "no/such/file.csv"]), Some(3));
    assert_eq!(code(&["gradcheck"]), Some(0));
    assert_eq!(code(&["gradcheck", "--corrupt", "matmul"]), Some(1));
}

#[test]
fn gradcheck_lists_every_op() {
    let out = allg().arg("gradcheck").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for op in [
        "matmul",
        "affine",
        "relu",
        "frob_sq",
        "sup_norm_rows",
        "add",
        "sub",
        "scale",
        "weighted_sum",
        "composite",
    ] {
        assert!(text.contains(op), "{op} missing from\n{text}");
    }
}
