//! End-to-end runs of the `mfgpc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfgpc::io::load_any_model;

fn mfgpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mfgpc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate_small(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "generate",
        "--n-low",
        "60",
        "--n-high",
        "40",
        "--n-test",
        "50",
        "--seed",
        seed,
        "--out",
        s(&out),
    ]);
    out
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn generate_is_reproducible_and_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_small(dir.path(), "a.csv", "4");
    let b = generate_small(dir.path(), "b.csv", "4");
    for suffix in ["", ".test"] {
        let pa = dir.path().join(format!("a{suffix}.csv"));
        let pb = dir.path().join(format!("b{suffix}.csv"));
        let (ta, tb) = (fs::read_to_string(pa).unwrap(), fs::read_to_string(pb).unwrap());
        assert_eq!(data_rows(&ta), data_rows(&tb));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("# tool:"));
    assert!(text.contains("# seed: 4"));
    assert_eq!(data_rows(&text).len(), 100);
    assert!(dir.path().join("a.truth.json").exists());
    assert!(b.exists());
}

#[test]
fn out_of_range_noise_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfgpc(&[
        "generate",
        "--noise",
        "0.6",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(mfgpc(&["train"]).status.code(), Some(2));
    assert_eq!(mfgpc(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn single_class_fidelity_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(
        &data,
        "x1,y,fidelity\n0.1,0,low\n0.2,1,low\n0.3,1,high\n0.4,1,high\n",
    )
    .unwrap();
    let out = mfgpc(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("high-fidelity"), "{err}");
}

#[test]
fn train_report_matches_reloaded_model_and_predict_covers_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path(), "d.csv", "2");
    let model = dir.path().join("m.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--restarts",
        "1",
        "--max-steps",
        "40",
        "--out",
        s(&model),
    ]);
    let report = fs::read_to_string(dir.path().join("m.report.csv")).unwrap();
    let reported: f64 = data_rows(&report)
        .iter()
        .find_map(|l| l.strip_prefix("log_marginal,"))
        .unwrap()
        .parse()
        .unwrap();
    let reloaded = load_any_model(&model).unwrap();
    assert!((reloaded.log_marginal() - reported).abs() <= 1e-10);
    assert!(dir.path().join("m.restarts.csv").exists());
    assert!(dir.path().join("m.timing.csv").exists());

    let test = dir.path().join("d.test.csv");
    let pred = dir.path().join("p.csv");
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--data",
        s(&test),
        "--out",
        s(&pred),
    ]);
    let text = fs::read_to_string(&pred).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 50);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "d.test");
        assert_eq!(cols[1], i.to_string());
        let p: f64 = cols[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(cols[4], if p >= 0.5 { "1" } else { "0" });
    }

    // Single-fidelity models go through the same predict path.
    let sf = dir.path().join("sf.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "sf-gpc-hf",
        "--restarts",
        "1",
        "--out",
        s(&sf),
    ]);
    let pred = dir.path().join("psf.csv");
    ok(&[
        "predict",
        "--model",
        s(&sf),
        "--data",
        s(&test),
        "--out",
        s(&pred),
    ]);
    assert_eq!(data_rows(&fs::read_to_string(&pred).unwrap()).len(), 50);
}

#[test]
fn unknown_method_lists_registered_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path(), "d.csv", "1");
    let out = mfgpc(&[
        "evaluate",
        "--data",
        s(&data),
        "--methods",
        "mf-gpc,bogus",
        "--out",
        s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["bogus", "mf-gpc", "sf-gpc-hf", "sf-gpc-concat"] {
        assert!(err.contains(m), "{err}");
    }
    let out = mfgpc(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "svm",
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_writes_one_row_per_run_plus_external_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path(), "d.csv", "3");
    // Score every row with its own label: a perfect external method.
    let text = fs::read_to_string(&data).unwrap();
    let mut scores = String::from("dataset_id,point_id,score\n");
    for (i, row) in data_rows(&text).iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        scores.push_str(&format!("d,{i},{}\n", cols[cols.len() - 2]));
    }
    let score_file = dir.path().join("ext.csv");
    fs::write(&score_file, scores).unwrap();
    let out = dir.path().join("e.csv");
    ok(&[
        "evaluate",
        "--data",
        s(&data),
        "--methods",
        "sf-gpc-hf,ext",
        "--scores",
        &format!("ext={}", s(&score_file)),
        "--runs",
        "2",
        "--n-high",
        "10",
        "--restarts",
        "1",
        "--out",
        s(&out),
    ]);
    let runs = fs::read_to_string(&out).unwrap();
    let rows = data_rows(&runs);
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .filter(|r| r.contains(",ext,"))
        .all(|r| r.contains("1.0000000000000000e0")));
    assert!(dir.path().join("e.summary.csv").exists());
    assert!(dir.path().join("e.profile.csv").exists());
}

#[test]
fn gradcheck_passes_on_default_instance() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("PASS"), "{stdout}");
    let stdout = ok(&["gradcheck", "--seed", "3", "--rho", "-1.5"]);
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "[generate]\nn-low = 30\nn_high = 20\nn-test = 10\nseed = 9\n",
    )
    .unwrap();
    let out = dir.path().join("g.csv");
    ok(&[
        "--config",
        s(&cfg),
        "generate",
        "--n-high",
        "12",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let rows = data_rows(&text);
    let high = rows.iter().filter(|r| r.ends_with(",high")).count();
    assert_eq!((rows.len() - high, high), (30, 12));
    assert!(text.contains("# seed: 9"));
    // Default noise survives.
    assert!(text.contains("\"noise\":0.2"), "{text}");

    fs::write(&cfg, "[generate]\nbogus = 1\n").unwrap();
    let o = mfgpc(&["--config", s(&cfg), "generate", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, "[nonsense]\nx = 1\n").unwrap();
    let o = mfgpc(&["--config", s(&cfg), "generate", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
