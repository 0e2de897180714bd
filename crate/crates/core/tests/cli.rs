use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use opnp::io;
use opnp::metrics::auroc;
use opnp::EvalReport;

fn opnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opnp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small toy fixture shared by the tests of one process.
fn fixture(dir: &Path) -> PathBuf {
    let out = dir.join("toy");
    let res = opnp(&[
        "toy",
        "--classes",
        "4",
        "--dim",
        "8",
        "--hidden",
        "16",
        "--n-train",
        "400",
        "--n-test",
        "200",
        "--epochs",
        "5",
        "--seed",
        "3",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&opnp(&["--help"])), 0);
    assert_eq!(code(&opnp(&["--version"])), 0);
    assert_eq!(code(&opnp(&["prune", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&opnp(&[])), 1);
    assert_eq!(code(&opnp(&["frobnicate"])), 1);
    assert_eq!(code(&opnp(&["score", "--features", "x"])), 1);
}

#[test]
fn missing_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let res = opnp(&[
        "estimate",
        "--features",
        "/no/such.opnf",
        "--head",
        "/no/head.json",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
    assert!(res.stdout.is_empty());
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture(dir.path());
    for f in [
        "train.opnf",
        "val-id.opnf",
        "val-ood.opnf",
        "test-id.opnf",
        "test-ood.opnf",
        "head.json",
        "toy.json",
    ] {
        assert!(toy.join(f).exists(), "{f} missing");
    }
    let p = |name: &str| dir.path().join(name);
    let head = toy.join("head.json");

    let res = opnp(&[
        "estimate",
        "--features",
        s(&toy.join("train.opnf")),
        "--head",
        s(&head),
        "--out",
        s(&p("sens.json")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let (map, stats) = io::read_sensitivity(p("sens.json")).unwrap();
    assert_eq!((map.rows(), map.cols()), (16, 4));
    assert_eq!(stats.len(), 6);

    let res = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--sens",
        s(&p("sens.json")),
        "--rho-min-w",
        "10",
        "--rho-max-w",
        "1",
        "--rho-min-o",
        "12.5",
        "--out",
        s(&p("pruned.json")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let pruned = io::read_head(p("pruned.json")).unwrap();
    // ceil(0.1 * 64) + ceil(0.01 * 64) weights, ceil(0.125 * 16) neurons.
    assert_eq!(pruned.pruned_weight_count(), 7 + 1);
    assert_eq!(pruned.pruned_neuron_count(), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("pruned 8 of 64 weights"));

    for (feat, out) in [("test-id.opnf", "id.csv"), ("test-ood.opnf", "ood.csv")] {
        let res = opnp(&[
            "score",
            "--features",
            s(&toy.join(feat)),
            "--head",
            s(&p("pruned.json")),
            "--out",
            s(&p(out)),
        ]);
        assert_eq!(code(&res), 0);
    }
    let res = opnp(&[
        "eval",
        "--id",
        s(&p("id.csv")),
        "--ood",
        s(&p("ood.csv")),
        "--out",
        s(&p("report.json")),
        "--id-features",
        s(&toy.join("test-id.opnf")),
        "--head",
        s(&p("pruned.json")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: EvalReport = io::read_report(p("report.json")).unwrap();
    let id = io::read_scores(p("id.csv")).unwrap();
    let ood = io::read_scores(p("ood.csv")).unwrap();
    assert_eq!(report.auroc, auroc(id.scores(), ood.scores()).unwrap());
    assert!(report.ece.is_some());
    assert_eq!(report.histogram.id_counts.len(), 50);

    let res = opnp(&[
        "diagnose",
        "--head",
        s(&head),
        "--sens",
        s(&p("sens.json")),
        "--mask-from-prune",
        s(&p("pruned.json")),
        "--id",
        s(&toy.join("test-id.opnf")),
        "--ood",
        s(&toy.join("test-ood.opnf")),
        "--out",
        s(&p("diag.json")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let diag: serde_json::Value = io::read_document(p("diag.json")).unwrap();
    assert_eq!(diag["pruned_weights"], 8);
    assert!(diag["flatness_after"]["proxy"].as_f64() <= diag["flatness_before"]["proxy"].as_f64());

    let res = opnp(&[
        "run-opnp",
        "--train",
        s(&toy.join("train.opnf")),
        "--head",
        s(&head),
        "--id",
        s(&toy.join("test-id.opnf")),
        "--ood",
        s(&toy.join("test-ood.opnf")),
        "--rho-min-w",
        "10",
        "--rho-max-w",
        "1",
        "--rho-min-o",
        "12.5",
        "--out-dir",
        s(&p("run")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let run_report = io::read_report(p("run").join("report.json")).unwrap();
    assert_eq!(run_report.auroc, report.auroc);
}

#[test]
fn sweep_writes_best_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture(dir.path());
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"rho_min_w":[0,10,60],"rho_max_w":[0,1,50],"rho_min_o":[0,20],"rho_max_o":[0]}"#,
    )
    .unwrap();
    let out = dir.path().join("best.json");
    let res = opnp(&[
        "--threads",
        "2",
        "sweep",
        "--train",
        s(&toy.join("train.opnf")),
        "--head",
        s(&toy.join("head.json")),
        "--val-id",
        s(&toy.join("val-id.opnf")),
        "--val-ood",
        s(&toy.join("val-ood.opnf")),
        "--grid",
        s(&grid),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let doc: serde_json::Value = io::read_document(&out).unwrap();
    // (60, 50) leaves an empty band and is skipped, not fatal.
    assert_eq!(doc["skipped"].as_array().unwrap().len(), 2);
    assert_eq!(doc["evaluated"], 16);
    assert!(doc["best_report"]["auroc"].as_f64() >= doc["baseline_report"]["auroc"].as_f64());
    let table = std::fs::read_to_string(dir.path().join("best.csv")).unwrap();
    assert_eq!(table.lines().count(), 17);
}

#[test]
fn prune_flag_errors() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture(dir.path());
    let head = toy.join("head.json");
    let out = dir.path().join("p.json");
    let sens = dir.path().join("sens.json");
    assert_eq!(
        code(&opnp(&[
            "estimate",
            "--features",
            s(&toy.join("train.opnf")),
            "--head",
            s(&head),
            "--out",
            s(&sens)
        ])),
        0
    );

    let band = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--sens",
        s(&sens),
        "--rho-min-w",
        "60",
        "--rho-max-w",
        "40",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&band), 1);
    let mixed = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--sens",
        s(&sens),
        "--baseline",
        "RPP",
        "--rho",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&mixed), 1);
    let tnp = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--baseline",
        "TNP",
        "--rho",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&tnp), 1);
    assert!(!out.exists());

    let rpp = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--baseline",
        "RPP",
        "--rho",
        "25",
        "--seed",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&rpp), 0);
    assert_eq!(io::read_head(&out).unwrap().pruned_weight_count(), 16);

    let react = opnp(&[
        "prune",
        "--head",
        s(&head),
        "--sens",
        s(&sens),
        "--react-percentile",
        "90",
        "--features",
        s(&toy.join("train.opnf")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&react), 0);
    assert!(io::read_head(&out).unwrap().activation_clip().is_some());

    // A head whose width disagrees with the sensitivity map is a data error.
    let other = dir.path().join("other");
    let res = opnp(&[
        "toy",
        "--classes",
        "4",
        "--dim",
        "8",
        "--hidden",
        "12",
        "--n-train",
        "40",
        "--n-test",
        "20",
        "--epochs",
        "1",
        "--out-dir",
        s(&other),
    ]);
    assert_eq!(code(&res), 0);
    let res = opnp(&[
        "prune",
        "--head",
        s(&other.join("head.json")),
        "--sens",
        s(&sens),
        "--rho-min-w",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn toy_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = fixture(a.path());
    let fb = fixture(b.path());
    for f in ["train.opnf", "test-ood.opnf", "head.json"] {
        assert_eq!(
            std::fs::read(fa.join(f)).unwrap(),
            std::fs::read(fb.join(f)).unwrap(),
            "{f}"
        );
    }
}
