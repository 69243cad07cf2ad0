use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semrecon::contrastive::{Level, PriorPair};
use semrecon::encoder::{Encoder, EncoderConfig, QualityLabel};
use semrecon::io::{read_array, read_manifest};
use semrecon::recon::{read_projection_csv, PointKind, TrajectoryLog, TrajectoryRecord};

const PROMPT: &str = "Is this image high quality?";

fn semrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semrecon"))
        .args(args)
        .env("SEMRECON_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = semrecon(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    semrecon(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_dataset(dir: &Path, n: &str) {
    ok(&["gen-data", "--out", s(dir), "--n", n, "--size", "32", "--acs", "4", "--seed", "3"]);
}

#[test]
fn gen_data_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let out = ok(&["gen-data", "--out", s(&a), "--n", "2", "--size", "32", "--acs", "4"]);
    ok(&["gen-data", "--out", s(&b), "--n", "2", "--size", "32", "--acs", "4"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key(Path::new("manifest.json")));
    assert!(ta.contains_key(Path::new("config.json")));
    assert_eq!(ta, tb);
}

#[test]
fn gen_data_rejects_bad_parameters_without_writing() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    assert_eq!(code(&["gen-data", "--out", s(&out), "--R", "0.5"]), 1);
    assert_eq!(code(&["gen-data", "--out", s(&out), "--size", "8"]), 1);
    assert_eq!(code(&["gen-data", "--out", s(&out), "--phantom", "cube"]), 1);
    assert_eq!(code(&["gen-data", "--out", s(&out), "--n", "0"]), 1);
    assert!(!out.exists());
}

#[test]
fn acceleration_one_samples_everything() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "2", "--size", "32", "--acs", "4", "--R", "1"]);
    let manifest = read_manifest(&d).unwrap();
    for e in &manifest.entries {
        let mask = read_array(&d.join(&e.mask)).unwrap().real_values().unwrap();
        assert!(mask.iter().all(|&v| v == 1.0), "{}", e.id);
    }
}

#[test]
fn non_empty_output_needs_force() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "1");
    let out = semrecon(&["gen-data", "--out", s(&d), "--n", "1", "--size", "32", "--acs", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(&["gen-data", "--out", s(&d), "--n", "1", "--size", "32", "--acs", "4", "--force"]);
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["recon", "--no-such-flag"]), 1);
    assert_eq!(code(&[]), 1);
}

#[test]
fn config_file_is_merged_with_flags() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"data": {"n": 3, "size": 32, "acs": 4, "R": 2}}"#).unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d), "--n", "1"]);
    let manifest = read_manifest(&d).unwrap();
    assert_eq!(manifest.entries.len(), 1);
    assert_eq!(manifest.entries[0].metadata.acceleration, 2.0);

    std::fs::write(&cfg, r#"{"dataa": {}}"#).unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&cfg), "--out", s(&t.path().join("e"))]), 1);
    assert_eq!(code(&["gen-data", "--config", s(&t.path().join("missing.json")), "--out", s(&d)]), 3);
}

#[test]
fn pretrain_zero_steps_keeps_initialization() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "2");
    let p = t.path().join("p");
    ok(&["pretrain", "--dataset", s(&d), "--out", s(&p), "--steps", "0", "--seed", "5"]);
    let saved = Encoder::load(&p.join("encoder")).unwrap();
    let init = Encoder::new(EncoderConfig {
        seed: 5,
        ..EncoderConfig::default()
    })
    .unwrap();
    assert_eq!(saved.fingerprint(), init.fingerprint());
    let csv = std::fs::read_to_string(p.join("pretrain_loss.csv")).unwrap();
    assert_eq!(csv.trim(), "step,loss");
}

#[test]
fn pretrain_reduces_loss_and_reloads() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "3");
    let p = t.path().join("p");
    ok(&["pretrain", "--dataset", s(&d), "--out", s(&p), "--steps", "30"]);
    let csv = std::fs::read_to_string(p.join("pretrain_loss.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 30);
    let head = losses[..5].iter().sum::<f64>();
    let tail = losses[25..].iter().sum::<f64>();
    assert!(tail < head, "{head} -> {tail}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("pretrain_report.json")).unwrap()).unwrap();
    assert!(report["final_eval"].as_f64().unwrap() < report["initial_eval"].as_f64().unwrap());
    assert!(Encoder::load(&p.join("encoder")).is_ok());
}

#[test]
fn pretrain_divergence_exits_two() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "2");
    let p = t.path().join("p");
    assert_eq!(code(&["pretrain", "--dataset", s(&d), "--out", s(&p), "--steps", "3", "--lr", "1e300"]), 2);
    assert!(!p.exists());
}

#[test]
fn zero_filled_recon_writes_no_trajectory() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "2");
    let r = t.path().join("r");
    ok(&["recon", "--dataset", s(&d), "--out", s(&r), "--method", "zero_filled"]);
    for id in ["subject_000", "subject_001"] {
        assert!(r.join(id).join("image.arr").is_file());
        assert!(r.join(id).join("image.png").is_file());
        assert!(!r.join(id).join("trajectory.jsonl").exists());
    }
    let metrics = std::fs::read_to_string(r.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().nth(1).unwrap().starts_with("subject_000,zero_filled,none,4.0,"));
}

#[test]
fn invalid_recon_combination_fails_before_writing() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d, "1");
    let r = t.path().join("r");
    let base = ["recon", "--dataset", s(&d), "--out", s(&r), "--method", "inr"];
    let with = |extra: &[&str]| -> i32 { code(&[&base[..], extra].concat()) };
    assert_eq!(with(&["--regularizer", "semantic_image"]), 1);
    assert_eq!(with(&["--regularizer", "semantic_lang"]), 1);
    assert_eq!(with(&["--lambda=-1"]), 1);
    assert_eq!(with(&["--iterations", "0"]), 1);
    assert!(!r.exists());
    assert_eq!(
        code(&["recon", "--dataset", s(&t.path().join("nope")), "--out", s(&r), "--method", "zero_filled"]),
        3
    );
    assert!(!r.exists());
    let diverging = ["recon", "--dataset", s(&d), "--out", s(&r), "--method", "tv_cs", "--lr", "1e300"];
    assert_eq!(code(&diverging), 2);
    assert!(!r.exists());
}

struct Trained {
    _t: tempfile::TempDir,
    root: PathBuf,
}

impl Trained {
    fn new() -> Self {
        let t = tempfile::tempdir().unwrap();
        let root = t.path().to_owned();
        small_dataset(&root.join("d"), "2");
        ok(&["pretrain", "--dataset", s(&root.join("d")), "--out", s(&root.join("p")), "--steps", "5"]);
        Self { _t: t, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn semantic_args(&self) -> Vec<String> {
        let d = self.path("d");
        [
            "--dataset", s(&d), "--encoder", s(&self.path("p").join("encoder")),
            "--positives", s(&d), "--negatives", s(&d), "--method", "inr", "--iterations", "15",
        ]
        .iter()
        .map(|a| a.to_string())
        .collect()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let mut args: Vec<String> = vec![cmd.into(), "--out".into(), s(&self.path(out)).into()];
        args.extend(self.semantic_args());
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    }
}

#[test]
fn semantic_recon_logs_labels_and_is_deterministic() {
    let t = Trained::new();
    let extra = ["--regularizer", "semantic_language", "--instruction", PROMPT, "--log-every", "5"];
    t.run("recon", "r1", &extra);
    t.run("recon", "r2", &extra);

    let log = TrajectoryLog::read_jsonl(&t.path("r1").join("subject_000").join("trajectory.jsonl")).unwrap();
    let iterations: Vec<usize> = log.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iterations, vec![0, 5, 10, 15]);
    for r in &log.records {
        assert!(r.embedding(Level::Language).is_some());
        let q = r.quality.as_ref().expect("quality response");
        let expected = if q.margin > 0.0 {
            QualityLabel::Positive
        } else if q.margin < 0.0 {
            QualityLabel::Negative
        } else {
            QualityLabel::Undetermined
        };
        assert_eq!(q.label, expected);
        assert!(r.metrics.is_some());
    }
    let priors: Vec<PriorPair> =
        serde_json::from_str(&std::fs::read_to_string(t.path("r1").join("priors.json")).unwrap()).unwrap();
    assert_eq!(priors.len(), 1);
    assert_eq!(priors[0].level, Level::Language);

    let (a, b) = (tree(&t.path("r1")), tree(&t.path("r2")));
    assert_eq!(a, b);
    let metrics = std::fs::read_to_string(t.path("r1").join("metrics.csv")).unwrap();
    let row = metrics.lines().nth(1).unwrap();
    assert!(row.starts_with("subject_000,inr,inr,4.0,"));
    assert!(!row.ends_with(','), "feature distance present: {row}");
}

#[test]
fn thread_count_does_not_change_results() {
    let t = Trained::new();
    t.run("recon", "r1", &["--regularizer", "tv"]);
    let mut args: Vec<String> = vec!["recon".into(), "--out".into(), s(&t.path("r2")).into()];
    args.extend(t.semantic_args());
    args.extend(["--regularizer".to_string(), "tv".to_string()]);
    let out = Command::new(env!("CARGO_BIN_EXE_semrecon"))
        .args(&args)
        .env("SEMRECON_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(tree(&t.path("r1")), tree(&t.path("r2")));
    let bad = Command::new(env!("CARGO_BIN_EXE_semrecon"))
        .args(&args)
        .arg("--force")
        .env("SEMRECON_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_matches_recon_metrics() {
    let t = Trained::new();
    t.run("recon", "r", &["--regularizer", "tv"]);
    ok(&[
        "eval", "--dataset", s(&t.path("d")), "--recon", s(&t.path("r")), "--out", s(&t.path("e")),
        "--encoder", s(&t.path("p").join("encoder")), "--method", "inr", "--backbone", "inr",
    ]);
    let a = std::fs::read_to_string(t.path("r").join("metrics.csv")).unwrap();
    let b = std::fs::read_to_string(t.path("e").join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        code(&["eval", "--dataset", s(&t.path("d")), "--recon", s(&t.path("missing")), "--out", s(&t.path("e2"))]),
        3
    );
}

#[test]
fn repeated_instruction_gives_zero_spread() {
    let t = Trained::new();
    let file = t.path("same.txt");
    std::fs::write(&file, format!("{PROMPT}\n\n{PROMPT}\n{PROMPT}\n")).unwrap();
    t.run("prompt-robustness", "pr", &["--instruction-file", s(&file)]);
    let pr = t.path("pr");
    let std = read_array(&pr.join("std_map.arr")).unwrap().real_values().unwrap();
    assert_eq!(std.len(), 32 * 32);
    assert!(std.iter().all(|&v| v == 0.0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pr.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["spatial_mean_std"].as_f64(), Some(0.0));
    assert_eq!(summary["instructions"].as_array().unwrap().len(), 3);
    for i in ["00", "01", "02"] {
        assert!(pr.join("instructions").join(i).join("image.arr").is_file());
    }
    assert!(pr.join("std_map.png").is_file());
}

#[test]
fn prompt_robustness_needs_two_instructions() {
    let t = Trained::new();
    let file = t.path("one.txt");
    std::fs::write(&file, format!("{PROMPT}\n")).unwrap();
    let mut args: Vec<String> = vec!["prompt-robustness".into(), "--out".into(), s(&t.path("pr")).into()];
    args.extend(t.semantic_args());
    args.extend(["--instruction-file".to_string(), s(&file).to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(code(&refs), 1);
    assert!(!t.path("pr").exists());
}

fn unit(dim: usize, axis: usize, sign: f64, jitter: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = sign;
    v[(axis + 1) % dim] = jitter;
    v
}

#[test]
fn projection_of_separable_fixture() {
    let t = tempfile::tempdir().unwrap();
    let dim = 6;
    let prior = PriorPair::new(
        Level::Mid,
        (0..4).map(|i| unit(dim, 0, 1.0, 0.1 * i as f64)).collect(),
        (0..3).map(|i| unit(dim, 0, -1.0, 0.1 * i as f64)).collect(),
    )
    .unwrap();
    let priors = t.path().join("priors.json");
    std::fs::write(&priors, serde_json::to_string(&vec![prior]).unwrap()).unwrap();
    let mut log = TrajectoryLog::default();
    for (k, x) in [-0.8, 0.0, 0.8].into_iter().enumerate() {
        let mut e = vec![0.0; dim];
        e[0] = x;
        log.push(TrajectoryRecord {
            iteration: 10 * k,
            dc_loss: 1.0,
            reg_loss: 1.0,
            embeddings: BTreeMap::from([("mid".to_string(), e)]),
            quality: None,
            metrics: None,
        })
        .unwrap();
    }
    let traj = t.path().join("trajectory.jsonl");
    log.write_jsonl(&traj).unwrap();

    let out = t.path().join("proj");
    ok(&["project", "--trajectory", s(&traj), "--priors", s(&priors), "--level", "mid", "--out", s(&out)]);
    let points = read_projection_csv(&out.join("projection.csv")).unwrap();
    assert_eq!(points.len(), 4 + 3 + 3);
    let xs = |k: PointKind| points.iter().filter(|p| p.kind == k).map(|p| p.x).collect::<Vec<_>>();
    let (pos, neg, tr) = (xs(PointKind::Positive), xs(PointKind::Negative), xs(PointKind::Trajectory));
    let pos_side = pos[0].signum();
    assert!(pos.iter().all(|x| x.signum() == pos_side));
    assert!(neg.iter().all(|x| x.signum() == -pos_side));
    assert!(tr[0] * pos_side < tr[1] * pos_side && tr[1] * pos_side < tr[2] * pos_side);
    assert!(std::fs::metadata(out.join("projection.png")).unwrap().len() > 0);

    let missing = ["project", "--trajectory", s(&traj), "--priors", s(&priors), "--out"];
    assert_eq!(code(&[&missing[..], &[s(&t.path().join("a")), "--level", "language"]].concat()), 1);
    assert_eq!(code(&[&missing[..], &[s(&t.path().join("b")), "--level", "middle"]].concat()), 1);
    std::fs::write(&priors, "not json").unwrap();
    assert_eq!(code(&[&missing[..], &[s(&t.path().join("c")), "--level", "mid"]].concat()), 3);
}
