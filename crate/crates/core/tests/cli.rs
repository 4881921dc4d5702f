use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pufm::config::RunConfig;
use pufm::io::{read_report, read_xyz, Checkpoint};
use pufm::model::VelocityModel;
use pufm::pipeline::{evaluate_clouds, inference_schedule, upsample_cloud};
use pufm::scheduler::LossProfile;
use tempfile::{tempdir, TempDir};

const SMALL: &[&str] = &[
    "--set", "toy_points=256",
    "--set", "toy_count=2",
    "--set", "patch_size=64",
    "--set", "train_patches=2",
    "--set", "stage1_epochs=2",
    "--set", "stage2_epochs=1",
    "--set", "batch_size=2",
    "--set", "profile_intervals=10",
];

fn pufm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pufm"))
        .args(SMALL)
        .args(args)
        .env("PUFM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pufm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = pufm(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("pufm: error:") || err.contains("error:"), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Self { dir: tempdir().unwrap() };
        ok(&["gen-toy", "--out", s(&w.data()), "--seed", "3"]);
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn sparse(&self) -> PathBuf {
        self.data().join("sphere_000.sparse.xyz")
    }

    fn train(&self, name: &str) -> (PathBuf, String) {
        let ck = self.path(name);
        let stdout = ok(&["train", "--data", s(&self.data()), "--checkpoint", s(&ck), "--seed", "5"]);
        (ck, stdout)
    }
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    for pair in SMALL.chunks(2) {
        let (k, v) = pair[1].split_once('=').unwrap();
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn gen_toy_is_deterministic() {
    let a = Workspace::new();
    let b = Workspace::new();
    let mut names: Vec<_> = std::fs::read_dir(a.data()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in names {
        assert_eq!(std::fs::read(a.data().join(&n)).unwrap(), std::fs::read(b.data().join(&n)).unwrap());
    }
    let sparse = read_xyz(&a.sparse()).unwrap();
    let dense = read_xyz(&a.data().join("sphere_000.dense.xyz")).unwrap();
    assert_eq!((sparse.len(), dense.len()), (64, 256));
}

#[test]
fn train_reports_epochs_and_is_reproducible() {
    let w = Workspace::new();
    let (a, out) = w.train("a.json");
    let (b, _) = w.train("b.json");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        let tok: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(tok[..3], ["epoch", &i.to_string(), "loss"]);
        assert!(tok[3].parse::<f64>().unwrap().is_finite());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn profile_keeps_weights_and_is_idempotent() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let before = Checkpoint::load(&ck).unwrap();
    let json = w.path("profile.json");
    let out = ok(&["profile", "--data", s(&w.data()), "--checkpoint", s(&ck), "--profile-out", s(&json)]);
    assert_eq!(out.lines().count(), 11);
    let after = Checkpoint::load(&ck).unwrap();
    assert_eq!(after.params, before.params);
    assert_eq!(after.optimizer, before.optimizer);
    assert_eq!(after.profile.as_ref().unwrap().len(), 11);
    assert_eq!(pufm::io::read_profile(&json).unwrap(), after.loss_profile().unwrap().unwrap());

    let first = std::fs::read(&ck).unwrap();
    ok(&["profile", "--data", s(&w.data()), "--checkpoint", s(&ck)]);
    assert_eq!(std::fs::read(&ck).unwrap(), first);
}

#[test]
fn refine_writes_a_separate_checkpoint() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let original = std::fs::read(&ck).unwrap();
    let refined = w.path("r.json");
    let out = ok(&["refine", "--data", s(&w.data()), "--checkpoint", s(&ck), "--output", s(&refined)]);
    assert!(out.starts_with("epoch 0 loss "));
    assert_eq!(std::fs::read(&ck).unwrap(), original);
    let r = Checkpoint::load(&refined).unwrap();
    assert_ne!(r.params, Checkpoint::load(&ck).unwrap().params);
    assert!(r.profile.is_none());
}

#[test]
fn upsample_multiplies_point_count_and_matches_library() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let out = w.path("dense.xyz");
    let input = std::fs::read(w.sparse()).unwrap();
    ok(&["upsample", "--checkpoint", s(&ck), "--input", s(&w.sparse()), "--output", s(&out), "--uniform-schedule"]);
    assert_eq!(std::fs::read(w.sparse()).unwrap(), input);
    let dense = read_xyz(&out).unwrap();
    let sparse = read_xyz(&w.sparse()).unwrap();
    assert_eq!(dense.len(), 4 * sparse.len());

    let mut cfg = small_config();
    cfg.sampler.use_ats = false;
    let model = Checkpoint::load(&ck).unwrap().to_model().unwrap();
    let lib = upsample_cloud(&model, &sparse, &cfg, &inference_schedule(&cfg, None).unwrap()).unwrap();
    assert_eq!(dense, lib);

    let rate2 = w.path("dense2.xyz");
    ok(&[
        "upsample", "--checkpoint", s(&ck), "--input", s(&w.sparse()), "--output", s(&rate2),
        "--uniform-schedule", "--rate", "2", "--set", "patch_size=32",
    ]);
    assert_eq!(read_xyz(&rate2).unwrap().len(), 2 * sparse.len());
}

#[test]
fn zero_model_single_step_returns_midpoints() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let mut model = Checkpoint::load(&ck).unwrap().to_model().unwrap();
    model.params_mut().zero_all();
    let zero = w.path("zero.json");
    Checkpoint::from_model(&model, None).save(&zero).unwrap();
    let out = w.path("dense.xyz");
    ok(&[
        "upsample", "--checkpoint", s(&zero), "--input", s(&w.sparse()), "--output", s(&out),
        "--steps", "1", "--uniform-schedule", "--no-postprocess",
    ]);
    let sparse = read_xyz(&w.sparse()).unwrap();
    let mut candidates: Vec<[f64; 3]> = sparse.points().to_vec();
    for (i, a) in sparse.points().iter().enumerate() {
        for b in &sparse.points()[i + 1..] {
            candidates.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]);
        }
    }
    for p in read_xyz(&out).unwrap().points() {
        let d = candidates.iter().map(|c| pufm::geometry::dist(*p, *c)).fold(f64::INFINITY, f64::min);
        assert!(d <= 1e-12, "{p:?} is {d} from every midpoint");
    }
}

#[test]
fn constant_profile_makes_ats_equal_uniform() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let model = Checkpoint::load(&ck).unwrap().to_model().unwrap();
    let flat = w.path("flat.json");
    Checkpoint::from_model(&model, Some(&LossProfile::uniform(vec![0.4; 11]).unwrap())).save(&flat).unwrap();
    let (a, b) = (w.path("a.xyz"), w.path("b.xyz"));
    ok(&["upsample", "--checkpoint", s(&flat), "--input", s(&w.sparse()), "--output", s(&a), "--ats"]);
    ok(&["upsample", "--checkpoint", s(&flat), "--input", s(&w.sparse()), "--output", s(&b), "--uniform-schedule"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn ats_without_profile_is_an_error() {
    let w = Workspace::new();
    let (ck, _) = w.train("m.json");
    let out = w.path("dense.xyz");
    let err = fails(&["upsample", "--checkpoint", s(&ck), "--input", s(&w.sparse()), "--output", s(&out), "--ats"]);
    assert!(err.contains("profile"), "{err}");
    assert!(!out.exists());
}

#[test]
fn eval_prints_metrics_and_writes_report() {
    let w = Workspace::new();
    let sparse = w.sparse();
    let dense = w.data().join("sphere_000.dense.xyz");
    let report = w.path("report.json");
    let out = ok(&["eval", "--reference", s(&sparse), "--candidate", s(&sparse), "--report", s(&report)]);
    assert_eq!(out, "chamfer 0\nhausdorff 0\njsd 0\n");
    let rep = read_report(&report).unwrap();
    assert_eq!((rep.chamfer, rep.hausdorff, rep.jsd), (0.0, 0.0, 0.0));

    let out = ok(&["eval", "--reference", s(&dense), "--candidate", s(&sparse), "--report", s(&report)]);
    let lib = evaluate_clouds(&read_xyz(&dense).unwrap(), &read_xyz(&sparse).unwrap(), None, RunConfig::default().jsd_resolution)
        .unwrap();
    assert_eq!(read_report(&report).unwrap(), lib);
    let values: Vec<(String, f64)> = out
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(' ').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(
        values,
        vec![("chamfer".into(), lib.chamfer), ("hausdorff".into(), lib.hausdorff), ("jsd".into(), lib.jsd)]
    );
}

#[test]
fn missing_inputs_fail_cleanly() {
    let w = Workspace::new();
    let nowhere = w.path("nowhere");
    fails(&["train", "--data", s(&nowhere), "--checkpoint", s(&w.path("m.json"))]);
    fails(&["train", "--checkpoint", s(&w.path("m.json"))]);
    fails(&["upsample", "--checkpoint", s(&nowhere), "--input", s(&w.sparse()), "--output", s(&w.path("o.xyz"))]);
    fails(&["eval", "--reference", s(&nowhere), "--candidate", s(&w.sparse())]);
    fails(&["--set", "bogus=1", "gen-toy", "--out", s(&w.path("t"))]);
    fails(&["gen-toy", "--out", s(&w.path("t")), "--rate", "1"]);
    let out = Command::new(env!("CARGO_BIN_EXE_pufm"))
        .args(["gen-toy", "--out", s(&w.path("t"))])
        .env("PUFM_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_supplies_paths() {
    let w = Workspace::new();
    let cfg = w.path("run.cfg");
    let ck = w.path("m.json");
    std::fs::write(&cfg, format!("data_dir = {}\ncheckpoint = {}\nseed = 5\n", s(&w.data()), s(&ck))).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let (direct, _) = w.train("direct.json");
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&direct).unwrap());
}
