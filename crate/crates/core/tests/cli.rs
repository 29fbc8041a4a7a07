use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use trackcluster::config::RunConfig;
use trackcluster::data::{load_dataset, save_dataset, ClusterAssignment, Track, TrackDataset};

const FAST_CONFIG: &str = r#"{
  "train": { "ssl_iterations": 1, "epochs_first": 4, "head_only_epochs": 1,
             "warmup_epochs": 1, "batch_size": 8, "lr_peak": 0.003 },
  "quality": { "passes": 4 }
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trackcluster"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small labelled dataset plus a fast config, in a fresh temp dir.
fn setup() -> (TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = run(&[
        "generate", "--out", s(&data), "--identities", "3", "--tracks-per-id", "3", "--crops", "4",
        "--dim", "8", "--seed", "7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = tmp.path().join("fast.json");
    fs::write(&config, FAST_CONFIG).unwrap();
    (tmp, data, config)
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_is_loadable_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["generate", "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["generate", "--out", s(&b)])), 0);
    let ds = load_dataset(&a).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.dim(), 32);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn invalid_flags_exit_2_and_io_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--out", s(&tmp.path().join("x")), "--identities", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("identities"));
    assert_eq!(code(&run(&["generate", "--dim", "abc", "--out", "x"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);

    // --out below a regular file cannot be created
    let file = tmp.path().join("file");
    fs::write(&file, "x").unwrap();
    let o = run(&["generate", "--out", s(&file.join("sub"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[write]"));

    let o = run(&["inspect", "--data", s(&tmp.path().join("missing"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[load]"));
}

#[test]
fn run_writes_every_artifact_and_reruns_from_its_config() {
    let (tmp, data, config) = setup();
    let out = tmp.path().join("run");
    let o = run(&["--threads", "1", "run", "--data", s(&data), "--config", s(&config), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "clusters.json",
        "quality.csv",
        "train_log.jsonl",
        "config.json",
        "report.json",
        "report.csv",
        "run_meta.json",
        "matches.json",
        "model.ckpt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = read_json(&out.join("report.json"));
    assert!(report["wcp"].is_f64() && report["pcr"].is_f64());

    // ssl_iterations = 1 gives exactly one iteration block
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let iterations: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"].as_u64().unwrap())
        .collect();
    assert_eq!(iterations, vec![1; 4]);

    // the resolved config reproduces the run bit-exactly
    let resolved = RunConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(resolved.train.ssl_iterations, 1);
    assert_eq!(resolved.threads, 1);
    let again = tmp.path().join("again");
    let o = run(&["--threads", "1", "run", "--data", s(&data), "--config", s(&out.join("config.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    for f in ["clusters.json", "train_log.jsonl", "quality.csv", "model.ckpt", "config.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    // every dataset track is assigned, Unknowns match the quality filter
    let assign: ClusterAssignment = serde_json::from_str(&fs::read_to_string(out.join("clusters.json")).unwrap()).unwrap();
    assign.check_covers(&load_dataset(&data).unwrap()).unwrap();
    let quality = fs::read_to_string(out.join("quality.csv")).unwrap();
    let filtered: Vec<u64> = quality
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",true"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(assign.unknown_ids(), filtered);
}

#[test]
fn flags_override_the_config_file() {
    let (tmp, data, config) = setup();
    let out = tmp.path().join("run");
    let o = run(&[
        "run", "--data", s(&data), "--config", s(&config), "--out", s(&out), "--seed", "99", "--similarity",
        "cosine",
    ]);
    assert_eq!(code(&o), 0);
    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["seed"], 99);
    assert_eq!(cfg["clustering"]["similarity"], "cosine");
    assert_eq!(cfg["train"]["epochs_first"], 4);
    assert_eq!(read_json(&out.join("run_meta.json"))["similarity"], "cosine");
}

#[test]
fn bad_config_files_are_usage_errors() {
    let (tmp, data, _) = setup();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["run", "--data", s(&data), "--config", s(&bad), "--out", s(&out)])), 2);
    fs::write(&bad, r#"{"trian": {}}"#).unwrap();
    assert_eq!(code(&run(&["run", "--data", s(&data), "--config", s(&bad), "--out", s(&out)])), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&run(&["run", "--data", s(&data), "--config", s(&missing), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["run", "--data", s(&data), "--out", s(&out), "--similarity", "manhattan"])), 2);
}

#[test]
fn assignments_agree_across_thread_counts() {
    let (tmp, data, config) = setup();
    let mut wcps = Vec::new();
    for threads in ["1", "2"] {
        let out = tmp.path().join(format!("t{threads}"));
        let o = run(&["--threads", threads, "run", "--data", s(&data), "--config", s(&config), "--out", s(&out)]);
        assert_eq!(code(&o), 0);
        wcps.push((
            read_json(&out.join("report.json"))["wcp"].as_f64().unwrap(),
            fs::read(out.join("clusters.json")).unwrap(),
        ));
    }
    assert_eq!(wcps[0], wcps[1]);
}

fn labelled_dataset(dir: &Path, labels: &[i64]) {
    let tracks = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Track::new(i as u64, 0, vec![vec![i as f64, 1.0]], Some(l)).unwrap())
        .collect();
    save_dataset(&TrackDataset::new("labels", 2, tracks).unwrap(), dir).unwrap();
}

fn write_assignment(path: &Path, pairs: &[(u64, i64)]) {
    let a = ClusterAssignment {
        assignment: pairs.iter().copied().collect::<BTreeMap<_, _>>(),
    };
    fs::write(path, serde_json::to_string(&a).unwrap()).unwrap();
}

#[test]
fn eval_reports_and_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    // 21 identities over 22 tracks; track 21 repeats identity 0
    let labels: Vec<i64> = (0..21).chain([0]).collect();
    labelled_dataset(&data, &labels);

    let pred = tmp.path().join("pred.json");
    write_assignment(&pred, &(0..22u64).map(|i| (i, i as i64 + 1)).collect::<Vec<_>>());
    let o = run(&["eval", "--pred", s(&pred), "--data", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&tmp.path().join("report.json"));
    assert_eq!(r["wcp"], 1.0);
    assert_eq!((r["pcr_pred"].as_u64(), r["pcr_gt"].as_u64()), (Some(22), Some(21)));
    assert!((r["pcr"].as_f64().unwrap() - 1.048).abs() < 5e-4);
    assert!(tmp.path().join("report.csv").is_file());

    // two Unknowns: excluded, then counted as wrong
    let mut pairs: Vec<(u64, i64)> = (0..20u64).map(|i| (i, i as i64 + 1)).collect();
    pairs.extend([(20, -1), (21, -1)]);
    write_assignment(&pred, &pairs);
    let out = tmp.path().join("policy");
    for (policy, want) in [("exclude", 1.0), ("count_wrong", 20.0 / 22.0)] {
        let o = run(&["eval", "--pred", s(&pred), "--data", s(&data), "--policy", policy, "--out", s(&out)]);
        assert_eq!(code(&o), 0);
        let r = read_json(&out.join("report.json"));
        assert!((r["wcp"].as_f64().unwrap() - want).abs() < 1e-12, "{policy}");
        assert_eq!(r["unknown_policy"], policy);
    }
    assert_eq!(code(&run(&["eval", "--pred", s(&pred), "--data", s(&data), "--policy", "ignore"])), 2);
}

#[test]
fn eval_without_truth_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let tracks = vec![Track::new(1, 0, vec![vec![0.0, 1.0]], None).unwrap()];
    save_dataset(&TrackDataset::new("nolabels", 2, tracks).unwrap(), &data).unwrap();
    let pred = tmp.path().join("pred.json");
    write_assignment(&pred, &[(1, 1)]);
    let o = run(&["eval", "--pred", s(&pred), "--data", s(&data)]);
    assert_eq!(code(&o), 2);

    // labelled dataset, but a clustered track lacks its label
    let tracks = vec![
        Track::new(0, 0, vec![vec![0.0, 1.0]], Some(0)).unwrap(),
        Track::new(1, 0, vec![vec![1.0, 1.0]], None).unwrap(),
    ];
    save_dataset(&TrackDataset::new("partial", 2, tracks).unwrap(), &data).unwrap();
    write_assignment(&pred, &[(0, 1), (1, 2)]);
    assert_eq!(code(&run(&["eval", "--pred", s(&pred), "--data", s(&data)])), 2);
}

#[test]
fn compare_emits_the_four_row_table() {
    let (tmp, data, config) = setup();
    let out = tmp.path().join("cmp");
    let o = run(&[
        "compare", "--data", s(&data), "--config", s(&config), "--methods", "loss,cosine,euclidean,hac",
        "--hac-cutoff", "0.05", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,similarity,wcp,pcr_pred,pcr_gt");
    assert_eq!(lines.len(), 5);
    let methods: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join("-"))
        .collect();
    assert_eq!(methods, ["ours-loss", "ours-cosine", "ours-euclidean", "hac-cosine"]);
    let json = read_json(&out.join("compare.json"));
    assert_eq!(json.as_array().unwrap().len(), 4);
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);

    // a method listed twice gives identical rows
    let o = run(&["compare", "--data", s(&data), "--config", s(&config), "--methods", "cosine,cosine"]);
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn compare_usage_errors() {
    let (_tmp, data, config) = setup();
    let o = run(&["compare", "--data", s(&data), "--config", s(&config), "--methods", "loss,hac"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--hac-cutoff"));
    let o = run(&["compare", "--data", s(&data), "--methods", "loss,kmeans", "--hac-cutoff", "0.1"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["compare", "--data", s(&data), "--methods", "hac", "--hac-cutoff", "-1"])), 2);
}

#[test]
fn cluster_reuses_a_saved_model() {
    let (tmp, data, config) = setup();
    let out = tmp.path().join("run");
    assert_eq!(code(&run(&["run", "--data", s(&data), "--config", s(&config), "--out", s(&out)])), 0);
    let again = tmp.path().join("cl");
    let o = run(&[
        "cluster", "--data", s(&data), "--model", s(&out.join("model.ckpt")), "--quality",
        s(&out.join("quality.csv")), "--out", s(&again),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a: ClusterAssignment = serde_json::from_str(&fs::read_to_string(out.join("clusters.json")).unwrap()).unwrap();
    let b: ClusterAssignment = serde_json::from_str(&fs::read_to_string(again.join("clusters.json")).unwrap()).unwrap();
    assert_eq!(a.unknown_ids(), b.unknown_ids());
    assert_eq!(a.cluster_count(), b.cluster_count());

    // raw-feature clustering needs no model, the loss metric does
    assert_eq!(code(&run(&["cluster", "--data", s(&data), "--out", s(&again), "--similarity", "cosine"])), 0);
    assert_eq!(code(&run(&["cluster", "--data", s(&data), "--out", s(&again)])), 2);
}

#[test]
fn inspect_prints_stats_and_pca() {
    let (tmp, data, _) = setup();
    let pca = tmp.path().join("pca.csv");
    let o = run(&["inspect", "--data", s(&data), "--pca", s(&pca)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("tracks      9"));
    assert!(text.contains("3 identities"));
    let csv = fs::read_to_string(pca).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,track_id,cluster_id"));
    assert_eq!(csv.lines().count(), 10);
}
