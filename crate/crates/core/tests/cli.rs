//! The `pipcfr` binary end to end: artifacts, exit codes, reruns.

use std::path::Path;
use std::process::{Command, Output};

use pipcfr::data::load_csv;

fn pipcfr(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipcfr"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PIPCFR_OUT")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SMALL: &[&str] = &[
    "--set", "train.batch_size=32", "--set", "arch.rep_width=8", "--set", "arch.head_width=8", "--set", "arch.eta_width=8", "--set", "arch.prop_width=8",
];

#[test]
fn generate_writes_splits_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    ok(&pipcfr(&["generate", "--kind", "temporal", "--n", "500", "--K", "10", "--seed", "3"], &out));
    let sizes: Vec<usize> = ["train", "val", "test"].iter().map(|s| load_csv(out.join(format!("{s}.csv"))).unwrap().len()).collect();
    assert_eq!(sizes, vec![300, 100, 100]);
    let meta: serde_json::Value = serde_json::from_str(&read(out.join("metadata.json"))).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["kind"], "temporal");
    // window k0..=K spans 6 steps of (v, m, a) with 5 features each
    assert_eq!(meta["s_dim"], 6 * 3 * 5);
    assert!(read(out.join("config.txt")).contains("temporal.k = 10"));
}

#[test]
fn generate_is_byte_identical_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&pipcfr(&["generate", "--kind", "example1", "--n", "400", "--sigma-u", "2"], d));
    }
    for f in ["train.csv", "val.csv", "test.csv", "config.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&read(p.join("metadata.json"))).unwrap();
        v.as_object_mut().unwrap().remove("generated_at_unix");
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&pipcfr(&["generate", "--kind", "example1", "--n", "400"], &data));
    let model = dir.path().join("model");
    let data_s = data.to_str().unwrap();
    let mut args = vec!["train", "--data-dir", data_s, "--method", "PIPCFR_MMD", "--epochs", "3"];
    args.extend_from_slice(SMALL);
    ok(&pipcfr(&args, &model));
    for f in ["bundle.json", "trace.csv", "timing.csv", "config.txt", "metrics.json"] {
        assert!(model.join(f).exists(), "{f} missing");
    }
    assert_eq!(read(model.join("trace.csv")).lines().count(), 4);
    let eval = dir.path().join("eval");
    let ckpt = model.join("bundle.json");
    let test = data.join("test.csv");
    ok(&pipcfr(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap()], &eval));
    let m: serde_json::Value = serde_json::from_str(&read(eval.join("metrics.json"))).unwrap();
    let trained: serde_json::Value = serde_json::from_str(&read(model.join("metrics.json"))).unwrap();
    assert_eq!(m["pehe_out"], trained["pehe_out"]);
    assert!(m["diagnostics"]["eps_ITE"].is_number());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let usage = pipcfr(&["generate", "--bogus"], &out);
    assert_eq!(usage.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&usage.stderr).unwrap();
    assert_eq!(err["error"], "usage");
    assert_eq!(pipcfr(&["generate", "--set", "train.lrr=1"], &out).status.code(), Some(1));
    assert_eq!(pipcfr(&["frobnicate"], &out).status.code(), Some(1));
    assert_eq!(pipcfr(&["--help"], &out).status.code(), Some(0));
    let missing = pipcfr(&["eval", "--checkpoint", "/nonexistent/b.json", "--data", "/nonexistent/t.csv"], &out);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (e1, tmp) = (dir.path().join("e1"), dir.path().join("tmp"));
    ok(&pipcfr(&["generate", "--kind", "example1", "--n", "300"], &e1));
    let model = dir.path().join("m");
    let mut args = vec!["train", "--data-dir", e1.to_str().unwrap(), "--method", "TARNET", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    ok(&pipcfr(&args, &model));
    ok(&pipcfr(&["generate", "--kind", "temporal", "--n", "300", "--K", "4"], &tmp));
    let ckpt = model.join("bundle.json");
    let test = tmp.join("test.csv");
    let o = pipcfr(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap()], &dir.path().join("ev"));
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains('1') && msg.contains('5'), "{msg}");
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let mut args = vec![
        "sweep", "--grid", "method=TARNET,CFRNET_MMD", "--grid", "seed=0,1",
        "--set", "kind=example1", "--set", "n=300", "--set", "epochs=2",
    ];
    args.extend_from_slice(SMALL);
    ok(&pipcfr(&args, &sweep));
    let cells = std::fs::read_dir(sweep.join("cells")).unwrap().count();
    assert_eq!(cells, 4);
    assert_eq!(read(sweep.join("results.csv")).lines().count(), 5);
    // a rerun resumes every cell
    ok(&pipcfr(&args, &sweep));
    let report = dir.path().join("report");
    ok(&pipcfr(&["report", "--input", sweep.to_str().unwrap(), "--by", "method"], &report));
    let rows: serde_json::Value = serde_json::from_str(&read(report.join("report.json"))).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["seeds_aggregated"] == 2));
    assert!(read(report.join("report.txt")).contains("TARNET"));
}

#[test]
fn oracle_writes_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&pipcfr(&["oracle", "--sigma-u", "2", "--n-mc", "100000"], &out));
    let v: serde_json::Value = serde_json::from_str(&read(out.join("oracle.json"))).unwrap();
    let case_a = &v[0]["cases"][0];
    assert_eq!(case_a["name"], "a");
    assert!((case_a["pooled_var"].as_f64().unwrap() - 5.0).abs() < 0.25);
    assert_eq!(pipcfr(&["oracle", "--n-mc", "10"], &out).status.code(), Some(1));
}
