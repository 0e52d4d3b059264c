use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gaitbac::ingest::{parse_ema_log, parse_sensor_log};
use gaitbac::pipeline::{sha256_hex, Manifest, CORPUS_MANIFEST};

const SMALL: [&str; 6] = ["--set", "synth.n_participants=4", "--set", "synth.duration_s=12", "--set", "mlp.max_epochs=40"];

fn gaitbac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitbac")).args(args).output().expect("binary runs")
}

fn dirs<'a>(data: &'a Path, out: &'a Path) -> [&'a str; 4] {
    ["--data-dir", data.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]
}

fn error_record(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(stderr.lines().last().expect("error line")).expect("stderr holds a JSON record")
}

fn run_ok(args: &[&str]) -> Output {
    let o = gaitbac(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn missing_data_dir_is_a_data_error_naming_the_path() {
    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("no_such_dir");
    let out = root.path().join("out");
    for cmd in ["featurize", "label", "pipeline"] {
        let mut args = vec![cmd];
        args.extend(dirs(&missing, &out));
        let o = gaitbac(&args);
        assert_eq!(o.status.code(), Some(3), "{cmd}");
        let rec = error_record(&o);
        assert_eq!(rec["error"], "data");
        assert_eq!(rec["path"], missing.to_str().unwrap());
    }
}

#[test]
fn config_errors_exit_with_code_2() {
    let root = tempfile::tempdir().unwrap();
    let o = gaitbac(&["config", "--set", "mlp.hidden=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_record(&o)["message"].as_str().unwrap().contains("mlp.hidden"));

    let bad = root.path().join("bad.cfg");
    fs::write(&bad, "features.window = 100\nfeatures.window = 128\n").unwrap();
    let o = gaitbac(&["config", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["path"], bad.to_str().unwrap());

    let o = gaitbac(&["config", "--set", "split.test_frac=0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_round_trips_and_flags_win() {
    let root = tempfile::tempdir().unwrap();
    let dumped = run_ok(&["config", "--set", "mlp.n_hidden=6"]);
    let file = root.path().join("run.cfg");
    fs::write(&file, &dumped.stdout).unwrap();
    let again = run_ok(&["config", "--config", file.to_str().unwrap()]);
    assert_eq!(again.stdout, dumped.stdout);
    let seeded = run_ok(&["config", "--config", file.to_str().unwrap(), "--seed", "9", "--set", "mlp.n_hidden=3"]);
    let text = String::from_utf8(seeded.stdout).unwrap();
    for line in ["mlp.n_hidden = 3", "mlp.seed = 9", "split.seed = 9"] {
        assert!(text.lines().any(|l| l == line), "{line}");
    }
}

#[test]
fn stage_before_its_input_names_the_missing_artifact() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let mut args = vec!["train", "svr"];
    args.extend(dirs(root.path(), &out));
    let o = gaitbac(&args);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_record(&o)["path"].as_str().unwrap().ends_with("features.csv"));
}

#[test]
fn synthetic_corpus_is_read_by_ingest_and_matches_its_manifest() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let out = root.path().join("out");
    let mut args = vec!["synth"];
    args.extend(dirs(&data, &out));
    args.extend(SMALL);
    run_ok(&args);

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(data.join(CORPUS_MANIFEST)).unwrap()).unwrap();
    assert!(!manifest.contents.is_empty());
    for entry in &manifest.contents {
        let rel = entry.path.strip_prefix("data/").unwrap();
        assert_eq!(sha256_hex(&fs::read(data.join(rel)).unwrap()), entry.sha256, "{rel}");
    }
    let recordings: Vec<_> = fs::read_dir(data.join("recordings")).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(recordings.len() > 10);
    for path in &recordings {
        let rec = parse_sensor_log(path).unwrap();
        assert!((rec.rate - 100.0).abs() < 0.1, "{}", rec.rate);
    }
    for entry in fs::read_dir(data.join("ema")).unwrap() {
        parse_ema_log(&entry.unwrap().path()).unwrap();
    }
}

#[test]
fn stages_compose_into_the_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let staged = root.path().join("staged");
    let whole = root.path().join("whole");
    let stages: [&[&str]; 11] = [
        &["synth"],
        &["featurize", "--dump-attitude"],
        &["label"],
        &["join"],
        &["split"],
        &["train", "mlp"],
        &["train", "ols"],
        &["train", "svr"],
        &["evaluate", "mlp"],
        &["evaluate", "svr"],
        &["report"],
    ];
    for stage in stages {
        let mut args = stage.to_vec();
        args.extend(dirs(&data, &staged));
        args.extend(SMALL);
        run_ok(&args);
    }
    let mut args = vec!["pipeline"];
    args.extend(dirs(&data, &whole));
    args.extend(SMALL);
    let o = run_ok(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("RRSE"));

    for f in ["features.csv", "joined.csv", "split.json", "models/mlp.json", "eval/svr.json", "report.json", "report.txt"] {
        assert_eq!(fs::read(staged.join(f)).unwrap(), fs::read(whole.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(whole.join("report.json")).unwrap()).unwrap();
    for m in report["models"].as_array().unwrap() {
        let test = m["splits"].as_array().unwrap().iter().find(|s| s["split_name"] == "test").unwrap();
        for key in ["pearson_r", "mae", "rmse", "rae", "rrse"] {
            assert!(test[key].is_number(), "{} {key}", m["model"]);
        }
    }

    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(staged.join("models/mlp.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.sha256, sha256_hex(&fs::read(staged.join("models/mlp.json")).unwrap()));
    assert_eq!(manifest.config_hash.len(), 64);
    let dumps = fs::read_dir(staged.join("attitude")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "csv").count();
    assert!(dumps > 10);
    let some_dump = fs::read_dir(staged.join("attitude")).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().unwrap() == "csv").unwrap();
    assert!(fs::read_to_string(some_dump).unwrap().starts_with("t,qw,qx,qy,qz,yaw,pitch,roll,lax,lay,laz\n"));
}
