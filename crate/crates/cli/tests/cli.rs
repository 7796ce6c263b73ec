use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use motion_diffusion::motion_data::{load_motion_file, save_motion_file, MotionSequence};
use motion_diffusion::numerics::DenseArray;
use motion_diffusion::training::load_checkpoint;
use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = "\
n_joints = 2
n_sequences = 4
frames_per_sequence = 30
obs_frames = 4
pred_frames = 5
steps = 5
n_heads = 2
batch_size = 4
iterations = 20
checkpoint_every = 10
log_every = 5
";

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("runs")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mdiff"))
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env_remove("MD_SEED")
            .output()
            .unwrap()
    }

    /// Runs with the tiny config and returns the run directory.
    fn ok(&self, args: &[&str]) -> PathBuf {
        let cfg = self.dir.path().join("tiny.cfg");
        let mut full = vec!["--config", cfg.to_str().unwrap()];
        full.extend_from_slice(args);
        let out = self.run(&full);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    }

    fn synth(&self) -> PathBuf {
        self.ok(&["synth"])
    }

    fn trained(&self) -> (PathBuf, PathBuf) {
        let data = self.synth();
        let run = self.ok(&["train", "--data", s(&data)]);
        (data, run.join("model.ckpt"))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_default_lists_every_sequence_and_is_deterministic() {
    let env = Env::new();
    let a = PathBuf::from(String::from_utf8(env.run(&["synth"]).stdout).unwrap().trim());
    let b = PathBuf::from(String::from_utf8(env.run(&["synth"]).stdout).unwrap().trim());
    assert_ne!(a, b);
    let files = json(&a.join("manifest.json"));
    assert_eq!(files.as_array().unwrap().len(), 20);
    for f in files.as_array().unwrap() {
        let f = f.as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let manifest = json(&a.join("run.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["n_sequences"], "20");
    assert!(manifest["build"].as_str().unwrap().starts_with("mdiff "));
}

#[test]
fn usage_errors_exit_2_and_name_the_key() {
    let env = Env::new();
    let out = env.run(&["synth", "--set", "actions=walk,jog"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("actions"));

    let out = env.run(&["synth", "--set", "learning_rate=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));

    let out = env.run(&["train", "--data", s(&env.dir.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest"));

    let data = env.synth();
    let out = env.run(&["sample", "--checkpoint", "nope.ckpt", "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));

    let out = env.run(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_precedence_file_then_set_then_flag() {
    let env = Env::new();
    let cfg = env.dir.path().join("p.cfg");
    fs::write(&cfg, "seed = 3\nn_sequences = 2\nframes_per_sequence = 10\n").unwrap();
    let run = env.run(&["--config", s(&cfg), "--set", "seed=4", "--seed", "5", "synth"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let dir = PathBuf::from(String::from_utf8(run.stdout).unwrap().trim());
    let manifest = json(&dir.join("run.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["n_sequences"], "2");

    let out = Command::new(env!("CARGO_BIN_EXE_mdiff"))
        .args(["--out", s(&env.out()), "--config", s(&cfg), "synth"])
        .env("MD_SEED", "9")
        .output()
        .unwrap();
    let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert_eq!(json(&dir.join("run.json"))["seed"], 3);
}

#[test]
fn smoke_training_both_variants() {
    let env = Env::new();
    let data = PathBuf::from(String::from_utf8(env.run(&["synth"]).stdout).unwrap().trim());
    for variant in ["series", "parallel"] {
        let start = Instant::now();
        let out = env.run(&[
            "train",
            "--data",
            s(&data),
            "--variant",
            variant,
            "--iterations",
            "200",
            "--set",
            "batch_size=8",
        ]);
        let elapsed = start.elapsed();
        assert!(out.status.success(), "{variant}: {}", stderr(&out));
        assert!(elapsed < Duration::from_secs(300), "{variant} took {elapsed:?}");
        let run = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
        let log = fs::read_to_string(run.join("loss.csv")).unwrap();
        let rows: Vec<&str> = log.lines().collect();
        assert_eq!(rows[0], "iteration,loss");
        assert_eq!(rows.len(), 3);
        assert!(rows[1..].iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
        assert!(run.join("model.ckpt").is_file());
        assert_eq!(json(&run.join("run.json"))["config"]["variant"], variant);
    }
}

#[test]
fn resume_continues_bit_identically() {
    let env = Env::new();
    let data = env.synth();
    let full = env.ok(&["train", "--data", s(&data)]);
    let half = env.ok(&["train", "--data", s(&data), "--iterations", "10"]);
    let resumed = env.ok(&[
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&half.join("model.ckpt")),
        "--iterations",
        "20",
    ]);
    let same = |a: PathBuf, b: PathBuf| fs::read(a).unwrap() == fs::read(b).unwrap();
    assert!(same(full.join("model.ckpt"), resumed.join("model.ckpt")));
    assert!(same(full.join("loss.csv"), resumed.join("loss.csv")));
    // Only the iteration target differs between these two.
    let mid = load_checkpoint(&full.join("ckpt/iter_000010.ckpt")).unwrap();
    let stop = load_checkpoint(&half.join("model.ckpt")).unwrap();
    assert_eq!(mid.params, stop.params);
    assert_eq!((mid.iteration, mid.rng.word_pos), (stop.iteration, stop.rng.word_pos));
    assert_eq!((mid.train.iterations, stop.train.iterations), (20, 10));

    let cfg = env.dir.path().join("tiny.cfg");
    let out = env.run(&[
        "--config",
        s(&cfg),
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&half.join("model.ckpt")),
        "--set",
        "lr=0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lr"));
}

fn frames(path: &Path) -> DenseArray {
    load_motion_file(path).unwrap().frames().clone()
}

#[test]
fn deterministic_mode_ignores_the_seed() {
    let env = Env::new();
    let (data, ckpt) = env.trained();
    let run = |seed: &str| {
        env.ok(&[
            "sample",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--mode",
            "deterministic",
            "--seed",
            seed,
        ])
    };
    let (a, b) = (run("1"), run("2"));
    let index = json(&a.join("samples.json"));
    assert_eq!(index["n_samples"], 1);
    assert_eq!(index["seed"], Value::Null);
    for t in index["tasks"].as_array().unwrap() {
        let f = t["samples"].as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert_eq!(frames(&a.join(f)).shape(), &[5, 6]);
    }

    let out = env.run(&["sample", "--checkpoint", s(&ckpt), "--data", s(&data), "--mode", "determinstic"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mode"));
}

#[test]
fn first_stochastic_sample_does_not_depend_on_n() {
    let env = Env::new();
    let (data, ckpt) = env.trained();
    let run = |n: &str| {
        env.ok(&[
            "sample",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--n",
            n,
            "--seed",
            "7",
            "--set",
            "max_tasks=2",
        ])
    };
    let (one, fifty) = (run("1"), run("50"));
    let index = json(&fifty.join("samples.json"));
    assert_eq!(index["tasks"].as_array().unwrap().len(), 2);
    for t in index["tasks"].as_array().unwrap() {
        let f = t["samples"].as_str().unwrap();
        let (a, b) = (frames(&one.join(f)), frames(&fifty.join(f)));
        assert_eq!(a.shape(), &[5, 6]);
        assert_eq!(b.shape(), &[250, 6]);
        assert_eq!(a, b.slice_rows(0, 5).unwrap());
    }
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn eval_is_reproducible_and_aggregates_exactly() {
    let env = Env::new();
    let (data, ckpt) = env.trained();
    let samples = env.ok(&["sample", "--checkpoint", s(&ckpt), "--data", s(&data), "--n", "6", "--split", "all"]);
    let a = env.ok(&["eval", "--samples", s(&samples)]);
    let b = env.ok(&["eval", "--samples", s(&samples.join("samples.json"))]);
    for f in ["metrics.csv", "euler_mse.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let rows = parse_csv(&fs::read_to_string(a.join("metrics.csv")).unwrap());
    assert_eq!(rows[0], ["task", "APD", "mDE", "aDE", "sDE", "mFDE", "aFDE", "sFDE"]);
    let (tasks, mean) = (&rows[1..rows.len() - 1], rows.last().unwrap());
    assert_eq!(mean[0], "mean");
    for c in 1..8 {
        let vals: Vec<f64> = tasks.iter().map(|r| r[c].parse().unwrap()).collect();
        let expect = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean[c].parse::<f64>().unwrap() - expect).abs() < 1e-12);
    }

    let exported = env.ok(&["export", "--samples", s(&samples), "--metrics", s(&a.join("metrics.csv"))]);
    let long = fs::read_to_string(exported.join("samples_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + tasks.len() * 6 * 5 * 6);
    let long = fs::read_to_string(exported.join("metrics_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + (tasks.len() + 1) * 7);
}

#[test]
fn ground_truth_as_samples_scores_zero_and_bad_shapes_name_the_task() {
    let env = Env::new();
    let (data, ckpt) = env.trained();
    let samples = env.ok(&["sample", "--checkpoint", s(&ckpt), "--data", s(&data), "--n", "50"]);
    let index = json(&samples.join("samples.json"));
    let first = &index["tasks"][0];
    for t in index["tasks"].as_array().unwrap() {
        let gt = load_motion_file(samples.join(t["ground_truth"].as_str().unwrap())).unwrap();
        let copies = vec![gt.frames(); 50];
        let stacked = DenseArray::concat_rows(&copies).unwrap();
        let seq = MotionSequence::new(stacked, gt.fps, gt.representation, None).unwrap();
        save_motion_file(samples.join(t["samples"].as_str().unwrap()), &seq).unwrap();
    }
    let run = env.ok(&["eval", "--samples", s(&samples)]);
    let rows = parse_csv(&fs::read_to_string(run.join("metrics.csv")).unwrap());
    for r in &rows[1..] {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0, "APD in {r:?}");
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0, "mDE in {r:?}");
    }

    let gt = load_motion_file(samples.join(first["ground_truth"].as_str().unwrap())).unwrap();
    save_motion_file(samples.join(first["samples"].as_str().unwrap()), &gt).unwrap();
    let out = env.run(&["eval", "--samples", s(&samples)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(first["id"].as_str().unwrap()));
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_pullback() {
    let env = Env::new();
    let ok = env.run(&["gradcheck"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let dir = PathBuf::from(String::from_utf8(ok.stdout).unwrap().trim());
    let rows = parse_csv(&fs::read_to_string(dir.join("gradcheck.csv")).unwrap());
    assert_eq!(rows[0], ["check", "probes", "worst_rel_err", "status"]);
    assert!(rows.iter().any(|r| r[0] == "denoiser_series"));
    assert!(rows.iter().any(|r| r[0] == "denoiser_parallel"));
    for r in &rows[1..] {
        assert!(r[2].parse::<f64>().unwrap() < 1e-4, "{r:?}");
        assert_eq!(r[3], "pass");
    }

    let bad = env.run(&["gradcheck", "--inject-fault", "layer_norm"]);
    assert_eq!(bad.status.code(), Some(1));
    let dir = PathBuf::from(String::from_utf8(bad.stdout).unwrap().trim());
    let csv = fs::read_to_string(dir.join("gradcheck.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("layer_norm,") && l.ends_with("FAIL")));

    let out = env.run(&["gradcheck", "--inject-fault", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}
