use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use xneutr_core::report::read_matrix_csv;

fn xneutr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xneutr"))
        .args(args)
        .env_remove("XNEUTR_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xneutr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    xneutr(args).status.code().expect("exited normally")
}

/// Small synthetic corpus; returns the manifest path.
fn synth(dir: &Path, treebank: &str, seed: &str) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--treebank",
        treebank,
        "--seed",
        seed,
        "--set",
        "synth_words_per_class=150",
        "--set",
        "synth_layers=3,6",
    ]);
    out.join("synth").join(format!("{treebank}.manifest"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn matrix_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    walk(dir)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

const POS: [&str; 6] = ["--task", "pos", "--layer", "6", "--pooling", "first"];

#[test]
fn unknown_manifest_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let m = tmp.path().join("bad.manifest");
    fs::write(&m, "task = pos\nflavour = vanilla\n").unwrap();
    assert_eq!(code(&["train", "--manifest", s(&m)]), 2);
    assert_eq!(code(&["train", "--set", "flavour=vanilla"]), 2);
}

#[test]
fn missing_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(&["train", "--manifest", s(&tmp.path().join("none.manifest"))]),
        2
    );
    let m = tmp.path().join("m.manifest");
    fs::write(
        &m,
        "task = pos\nlayer = 6\npooling = first\ntrain_conllu = nowhere.conllu\n",
    )
    .unwrap();
    assert_eq!(
        code(&["train", "--manifest", s(&m), "--out", s(tmp.path())]),
        2
    );
}

#[test]
fn divergent_training_exits_3() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "1");
    let mut args = vec!["train", "--manifest", s(&m), "--out", s(tmp.path())];
    args.extend(POS);
    args.extend(["--set", "learning_rate=1e30"]);
    assert_eq!(code(&args), 3);
}

#[test]
fn train_writes_probe_log_and_report() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "2");
    let mut args = vec![
        "train",
        "--manifest",
        s(&m),
        "--out",
        s(tmp.path()),
        "--seed",
        "2",
    ];
    args.extend(POS);
    let stdout = ok(&args);
    assert!(stdout.starts_with("accuracy="));
    let dir = tmp.path().join("probes/synthetic/synth/pos_L6_first");
    for f in ["probe.bin", "training_log.json", "report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() > 0.95);
    let first = fs::read(dir.join("probe.bin")).unwrap();
    ok(&args);
    assert_eq!(
        fs::read(dir.join("probe.bin")).unwrap(),
        first,
        "retraining is deterministic"
    );
}

#[test]
fn flags_override_manifest_values() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "3");
    let layered = tmp.path().join("layered.manifest");
    let mut text = fs::read_to_string(&m).unwrap();
    text.push_str("task = pos\nlayer = 3\npooling = first\n");
    // relative paths resolve against the manifest's own directory
    let text = text.replace(" = synth-", " = data/synth/synth-");
    fs::write(&layered, text).unwrap();
    ok(&[
        "train",
        "--manifest",
        s(&layered),
        "--out",
        s(tmp.path()),
        "--layer",
        "6",
    ]);
    assert!(tmp
        .path()
        .join("probes/synthetic/synth/pos_L6_first/probe.bin")
        .is_file());
    assert!(!tmp
        .path()
        .join("probes/synthetic/synth/pos_L3_first")
        .exists());
}

#[test]
fn output_root_defaults_to_environment() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "4");
    let root = tmp.path().join("from-env");
    let mut args = vec!["train", "--manifest", s(&m)];
    args.extend(POS);
    let out = Command::new(env!("CARGO_BIN_EXE_xneutr"))
        .args(&args)
        .env("XNEUTR_OUT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root
        .join("probes/synthetic/synth/pos_L6_first/probe.bin")
        .is_file());
}

#[test]
fn csv_metadata_reruns_to_the_same_matrix() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "5");
    let first = tmp.path().join("first");
    let mut args = vec![
        "neutralize",
        "--manifest",
        s(&m),
        "--out",
        s(&first),
        "--seed",
        "5",
    ];
    args.extend(POS);
    ok(&args);
    let csv = matrix_files(&first, "csv").pop().unwrap();
    let second = tmp.path().join("second");
    ok(&["neutralize", "--manifest", s(&csv), "--out", s(&second)]);
    let rerun = matrix_files(&second, "csv").pop().unwrap();
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&rerun).unwrap());
    assert!(csv.with_extension("svg").is_file());
}

#[test]
fn zero_centroids_give_an_all_zero_matrix() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "6");
    let mut args = vec![
        "neutralize",
        "--manifest",
        s(&m),
        "--out",
        s(tmp.path()),
        "--zero-centroids",
    ];
    args.extend(POS);
    ok(&args);
    let csv = matrix_files(&tmp.path().join("matrices"), "csv")
        .pop()
        .unwrap();
    assert!(csv.to_string_lossy().ends_with("_zero.csv"));
    let matrix = read_matrix_csv(fs::read(&csv).unwrap().as_slice()).unwrap();
    assert_eq!(matrix.present_cells().count(), 25);
    assert!(matrix.present_cells().all(|v| v == 0.0));
}

#[test]
fn cross_task_and_cross_lingual_runs() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "alpha", "7");
    let b = synth(tmp.path(), "beta", "8");
    let out = tmp.path().join("out");
    ok(&[
        "neutralize",
        "--manifest",
        s(&a),
        "--out",
        s(&out),
        "--experiment",
        "xt-xn",
        "--direction",
        "dep_neutralizes_pos",
        "--layer",
        "6",
        "--pooling",
        "mean",
        "--jobs",
        "2",
    ]);
    // the target's inputs come in through target_* keys
    let beta = fs::read_to_string(&b).unwrap();
    let mut sets = vec!["--set".to_owned(), "target_treebank=beta".to_owned()];
    for line in beta
        .lines()
        .filter(|l| l.contains("_conllu") || l.contains("_store"))
    {
        let (k, v) = line.split_once(" = ").unwrap();
        sets.push("--set".into());
        sets.push(format!(
            "target_{k}={}",
            b.parent().unwrap().join(v).display()
        ));
    }
    let mut args = vec![
        "neutralize",
        "--manifest",
        s(&a),
        "--out",
        s(&out),
        "--experiment",
        "xl-xn",
    ];
    args.extend(POS);
    args.extend(sets.iter().map(String::as_str));
    ok(&args);
    let files = matrix_files(&out.join("matrices"), "csv");
    assert_eq!(files.len(), 2);
    for f in &files {
        let m = read_matrix_csv(fs::read(f).unwrap().as_slice()).unwrap();
        assert!(m.present_cells().count() > 0);
    }
    // an xt-xn run cannot take a combiner other than concat
    assert_eq!(
        code(&[
            "neutralize",
            "--manifest",
            s(&a),
            "--out",
            s(&out),
            "--experiment",
            "xt-xn",
            "--direction",
            "pos_neutralizes_dep",
            "--layer",
            "6",
            "--pooling",
            "mean",
            "--combiner",
            "sum",
        ]),
        2
    );
}

#[test]
fn report_lists_every_matrix_or_says_none() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    ok(&["report", "--out", s(&empty)]);
    let html = fs::read_to_string(empty.join("report/index.html")).unwrap();
    assert!(html.contains("No runs found."));

    let m = synth(tmp.path(), "synth", "9");
    let out = tmp.path().join("out");
    let mut args = vec!["neutralize", "--manifest", s(&m), "--out", s(&out)];
    args.extend(POS);
    ok(&args);
    let stdout = ok(&["report", "--out", s(&out)]);
    assert!(stdout.starts_with("figures=1 "));
    let html = fs::read_to_string(out.join("report/index.html")).unwrap();
    assert_eq!(html.matches("<svg").count(), 1);
    assert!(html.contains("manifest.seed"));
}

#[test]
fn select_config_writes_one_row_per_task_and_respects_no_train() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "10");
    let out = tmp.path().join("out");
    // the synthetic store has layers 3 and 6 only, so the grid cannot be filled
    assert_eq!(
        code(&[
            "select-config",
            "--manifest",
            s(&m),
            "--out",
            s(&out),
            "--task",
            "pos",
            "--no-train"
        ]),
        2
    );

    let full = tmp.path().join("full");
    ok(&[
        "synth",
        "--out",
        s(&full),
        "--seed",
        "10",
        "--set",
        "synth_words_per_class=60",
    ]);
    let fm = full.join("synth/synth.manifest");
    for task in ["pos", "dep"] {
        ok(&[
            "select-config",
            "--manifest",
            s(&fm),
            "--out",
            s(&out),
            "--task",
            task,
            "--jobs",
            "3",
        ]);
    }
    let table = fs::read_to_string(out.join("selection/config_selection.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "encoder,treebank,task,layer,pooling");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("synthetic,synth,dep,"));
    assert!(lines[2].starts_with("synthetic,synth,pos,"));
    // every probe now exists, so --no-train succeeds and agrees
    let again = ok(&[
        "select-config",
        "--manifest",
        s(&fm),
        "--out",
        s(&out),
        "--task",
        "pos",
        "--no-train",
    ]);
    assert!(again.starts_with(&format!(
        "selected={}",
        lines[2].splitn(4, ',').nth(3).unwrap()
    )));
}

#[test]
fn selectivity_and_centroids() {
    let tmp = TempDir::new().unwrap();
    let m = synth(tmp.path(), "synth", "11");
    let mut args = vec![
        "selectivity",
        "--manifest",
        s(&m),
        "--out",
        s(tmp.path()),
        "--layer",
        "6",
        "--pooling",
        "first",
    ];
    let stdout = ok(&args);
    let sel: f64 = stdout
        .split("selectivity=")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(sel > 0.0);
    args[0] = "centroids";
    args.extend(["--task", "pos"]);
    ok(&args);
    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(
            tmp.path()
                .join("probes/synthetic/synth/pos_L6_first/centroids.json"),
        )
        .unwrap(),
    )
    .unwrap();
    let cos = json["gold_vs_predicted_cosine"].as_object().unwrap();
    assert_eq!(cos.len(), 5);
    assert!(cos.values().all(|v| v.as_f64().unwrap() > 0.999));
}
