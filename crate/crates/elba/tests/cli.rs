use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use elba::report::{read_csv, AGGREGATE_SEED};

const SMALL: &str = "\
data.n_layouts = 5
data.episodes_per_layout = 6
actioner.epochs = 2
planner.epochs = 5
qaeval.epochs = 1
eval.max_episodes = 4
eval.n_seeds = 2
";

fn elba(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elba"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("ELBA_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = elba(out, args);
    assert!(
        o.status.success(),
        "elba {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn small_run(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(dir, &["--config", "small.toml", "gen"]);
    for c in ["actioner", "planner", "qaeval"] {
        ok(dir, &["--config", "small.toml", "train", c]);
    }
}

#[test]
fn gen_writes_four_splits_and_is_idempotent() {
    let a = tempfile::tempdir().unwrap();
    ok(a.path(), &["gen"]);
    for s in ["train", "valid", "test_seen", "test_unseen"] {
        assert!(a.path().join(format!("data/{s}.jsonl")).exists());
    }
    assert!(a.path().join("data/manifest.json").exists());
    let first = fs::read(a.path().join("data/test_seen.jsonl")).unwrap();
    ok(a.path(), &["gen"]);
    assert_eq!(fs::read(a.path().join("data/test_seen.jsonl")).unwrap(), first);

    let b = tempfile::tempdir().unwrap();
    ok(b.path(), &["--config", a.path().join("data/config.toml").to_str().unwrap(), "gen"]);
    assert_eq!(fs::read(b.path().join("data/test_seen.jsonl")).unwrap(), first);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let d = tempfile::tempdir().unwrap();
    let o = elba(d.path(), &["gen", "--set", "data.min_size=3", "--set", "data.max_size=4"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("SpecInfeasible"));

    let o = elba(d.path(), &["gen", "--set", "confusion.nope=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key"));

    for c in ["actioner", "planner", "qaeval"] {
        assert!(!elba(d.path(), &["train", c]).status.success());
    }
    assert!(!elba(d.path(), &["eval"]).status.success());
    assert!(!elba(d.path(), &["report"]).status.success());
}

#[test]
fn seed_env_is_the_default_seed() {
    let d = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_elba"));
        c.arg("--out").arg(d.path()).args(extra).arg("config");
        match env {
            Some(v) => c.env("ELBA_SEED", v),
            None => c.env_remove("ELBA_SEED"),
        };
        String::from_utf8(c.output().unwrap().stdout).unwrap()
    };
    assert!(run(None, &[]).contains("\nseed = 0\n"));
    assert!(run(Some("17"), &[]).contains("\nseed = 17\n"));
    assert!(run(Some("17"), &["--set", "seed=3"]).contains("\nseed = 3\n"));
}

#[test]
fn full_pipeline_on_a_small_dataset() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_run(dir);
    for f in ["actioner", "planner", "qaeval"] {
        assert!(dir.join(format!("models/{f}.tnn")).exists());
        assert!(dir.join(format!("models/{f}.manifest.json")).exists());
        assert!(dir.join(format!("models/{f}.config.toml")).exists());
    }

    ok(dir, &["--config", "small.toml", "eval", "--jobs", "2"]);
    let rows = read_csv(&dir.join("eval/report.csv")).unwrap();
    let arms: Vec<&str> = rows.iter().filter(|r| r.seed == AGGREGATE_SEED).map(|r| r.arm.as_str()).collect();
    assert!(arms.len() >= 2);
    assert!(arms.contains(&"baseline"));
    assert!(dir.join("eval/config.toml").exists());
    assert!(dir.join("eval/trajectories/test_seen/elba_e.seed1.jsonl").exists());

    let first = fs::read(dir.join("eval/report.csv")).unwrap();
    ok(dir, &["--config", "small.toml", "eval", "--jobs", "1"]);
    assert_eq!(fs::read(dir.join("eval/report.csv")).unwrap(), first);
    ok(dir, &["--config", "eval/config.toml", "eval"]);
    assert_eq!(fs::read(dir.join("eval/report.csv")).unwrap(), first);

    ok(dir, &["--config", "small.toml", "ablate", "thresholds"]);
    let abl = read_csv(&dir.join("ablate/thresholds.csv")).unwrap();
    assert_eq!(abl.len(), 15 * 3);

    ok(dir, &["--config", "small.toml", "ablate", "--set", "ablate.kind=question_type"]);
    let qt = read_csv(&dir.join("ablate/question_type.csv")).unwrap();
    ok(dir, &["report", "eval/report.csv", "ablate/question_type.csv", "eval/report.csv"]);
    let merged = read_csv(&dir.join("report/merged.csv")).unwrap();
    let shared = qt
        .iter()
        .filter(|r| rows.iter().any(|e| (&e.config_hash, &e.split, &e.seed) == (&r.config_hash, &r.split, &r.seed)))
        .count();
    assert!(shared >= 3, "qa=none repeats the baseline cell");
    assert_eq!(merged.len(), rows.len() + qt.len() - shared);

    let mut hashes: Vec<&str> = merged.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.dedup();
    let mut unique = hashes.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(hashes.len(), unique.len(), "rows are grouped by config hash");
}

#[test]
fn training_resumes_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(dir, &["--config", "small.toml", "gen"]);
    ok(dir, &["--config", "small.toml", "train", "actioner"]);
    let direct = fs::read(dir.join("models/actioner.tnn")).unwrap();

    ok(dir, &["--config", "small.toml", "train", "actioner", "--set", "actioner.epochs=1"]);
    fs::rename(dir.join("models/actioner.tnn"), dir.join("half.tnn")).unwrap();
    fs::rename(dir.join("models/actioner.manifest.json"), dir.join("half.manifest.json")).unwrap();
    ok(dir, &["--config", "small.toml", "train", "actioner", "--resume-from", "half.tnn"]);
    assert_eq!(fs::read(dir.join("models/actioner.tnn")).unwrap(), direct);

    let o = elba(
        dir,
        &["--config", "small.toml", "train", "actioner", "--resume-from", "half.tnn", "--set", "actioner.lr=0.01"],
    );
    assert!(!o.status.success());
}

#[test]
fn eval_refuses_models_from_another_config() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_run(dir);
    let o = elba(dir, &["--config", "small.toml", "eval", "--set", "actioner.window=8"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config hash"));
}

#[test]
fn rouge_l_scores_line_pairs() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("ref.txt"), "pickup potato place potato desk\nfind mug\n").unwrap();
    fs::write(d.path().join("hyp.txt"), "pickup potato place potato desk\nfind knife\n").unwrap();
    let o = ok(d.path(), &["rouge-l", "--reference", "ref.txt", "--hypothesis", "hyp.txt"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.750000"));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("rouge_l.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 2);
    fs::write(d.path().join("short.txt"), "one line\n").unwrap();
    assert!(!elba(d.path(), &["rouge-l", "--reference", "ref.txt", "--hypothesis", "short.txt"]).status.success());
}
