use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wam_cli::figure::{parse_ppm, OverheadProjection, PREDICTED};
use wam_cli::{read_log, render_episode, ConfigArgs};
use wam_core::metrics::Report;
use wam_core::microworld::read_episodes;
use wam_core::RunConfig;

fn wam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wam")).args(args).env_remove("WAM_CONFIG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    /// Desk preset with a handful of training steps.
    fn new(steps: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::desk();
        cfg.train.steps = steps;
        cfg.train.batch = 2;
        cfg.sampler.action_steps = 4;
        cfg.sampler.depth_steps = 2;
        cfg.sampler.video_steps = 2;
        std::fs::write(dir.path().join("cfg.toml"), cfg.to_toml_string()).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn gen(&self, split: &str, n: usize, out: &str) {
        ok(wam(&["gen-data", "--config", &self.p("cfg.toml"), "--split", split, "--episodes", &n.to_string(), "--out", &self.p(out)]));
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (c, d, o) = (self.p("cfg.toml"), self.p("train.eps"), self.p(out));
        let mut args = vec!["train", "--config", &c, "--data", &d, "--out", &o];
        args.extend_from_slice(extra);
        wam(&args)
    }
}

fn report(path: &Path) -> Report {
    Report::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_splits_are_disjoint() {
    let w = Work::new(1);
    w.gen("train", 5, "a.eps");
    w.gen("train", 5, "b.eps");
    w.gen("test", 5, "t.eps");
    let (a, b) = (std::fs::read(w.path("a.eps")).unwrap(), std::fs::read(w.path("b.eps")).unwrap());
    assert_eq!(a, b);
    let dt = RunConfig::desk().world.dt;
    let train = read_episodes(&a[..], dt).unwrap();
    let test = read_episodes(&std::fs::read(w.path("t.eps")).unwrap()[..], dt).unwrap();
    assert_eq!((train.len(), test.len()), (5, 5));
    for r in &test {
        assert!(train.iter().all(|t| t.scene != r.scene));
    }
    assert!(w.path("a.eps.config.toml").exists());
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let w = Work::new(6);
    w.gen("train", 6, "train.eps");
    ok(w.train("full", &[]));
    ok(w.train("part", &["--set", "train.steps=3"]));
    ok(w.train("part", &["--resume", &w.p("part/checkpoint.wack"), "--set", "train.steps=6"]));
    let full = read_log(&w.path("full/train.log")).unwrap();
    let part = read_log(&w.path("part/train.log")).unwrap();
    assert_eq!(full.len(), 6);
    assert_eq!(full, part);
    assert!(w.path("full/config.toml").exists());
    let a = std::fs::read(w.path("full/checkpoint.wack")).unwrap();
    let b = std::fs::read(w.path("part/checkpoint.wack")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_training_exits_with_numeric_code() {
    let w = Work::new(3);
    w.gen("train", 3, "train.eps");
    let o = w.train("nan", &["--set", "train.lambda_a=inf"]);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let w = Work::new(1);
    assert_eq!(code(&wam(&["train", "--bogus"])), 1);
    assert_eq!(code(&wam(&["gen-data", "--episodes", "2", "--split", "sideways", "--out", &w.p("x")])), 1);
    assert_eq!(code(&wam(&["gen-data", "--config", &w.p("cfg.toml"), "--set", "model.nope=1", "--episodes", "1", "--out", &w.p("x")])), 1);
    let o = wam(&["train", "--config", &w.p("cfg.toml"), "--data", &w.p("missing.eps"), "--out", &w.p("r")]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&wam(&["--help"])), 0);
}

#[test]
fn config_comes_from_the_environment_variable() {
    let w = Work::new(1);
    std::fs::write(w.path("small.toml"), {
        let mut c = RunConfig::desk();
        c.world.frame_w = 16;
        c.to_toml_string()
    })
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wam"))
        .args(["gen-data", "--episodes", "1", "--out", &w.p("e.eps")])
        .env("WAM_CONFIG", w.p("small.toml"))
        .output()
        .unwrap();
    ok(o);
    let resolved = RunConfig::from_toml_str(&std::fs::read_to_string(w.path("e.eps.config.toml")).unwrap()).unwrap();
    assert_eq!(resolved.world.frame_w, 16);

    std::fs::write(w.path("broken.toml"), "[world]\nframe_w = \"wide\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wam"))
        .args(["gen-data", "--episodes", "1", "--out", &w.p("f.eps")])
        .env("WAM_CONFIG", w.p("broken.toml"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_plan_only_and_multi_seed_aggregation() {
    let w = Work::new(4);
    w.gen("train", 4, "train.eps");
    w.gen("test", 3, "test.eps");
    ok(w.train("run", &[]));
    let ck = w.p("run/checkpoint.wack");

    ok(wam(&["eval", "--checkpoint", &ck, "--data", &w.p("test.eps"), "--which", "plan"]));
    let r = report(&w.path("run/eval-plan.txt"));
    assert_eq!(r.get("counters.depth_evals"), Some(0.0));
    assert_eq!(r.get("counters.video_evals"), Some(0.0));
    assert!(r.get("counters.action_evals").unwrap() > 0.0);
    for key in ["plan.pdms", "plan.nc", "plan.dac", "plan.ttc", "plan.comfort", "plan.ep", "plan.ade", "plan.ade_cv"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert!(r.get("depth.absrel").is_none() && r.get("video.psnr").is_none());
    assert!(w.path("run/eval-plan.config.toml").exists());

    ok(wam(&["eval", "--checkpoint", &ck, "--data", &w.p("test.eps"), "--which", "all", "--seeds", "3", "--out", &w.p("multi.txt")]));
    let multi = report(&w.path("multi.txt"));
    assert_eq!(multi.get("seeds"), Some(3.0));
    let mut singles = Vec::new();
    for k in 0..3 {
        let out = w.p(&format!("single{k}.txt"));
        ok(wam(&["eval", "--checkpoint", &ck, "--data", &w.p("test.eps"), "--set", &format!("sampler.seed={k}"), "--out", &out]));
        singles.push(report(Path::new(&out)));
    }
    for key in ["plan.pdms", "plan.ade", "depth.absrel", "video.psnr"] {
        let v: Vec<f64> = singles.iter().map(|r| r.get(key).unwrap()).collect();
        let mean = v.iter().sum::<f64>() / 3.0;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((multi.get(key).unwrap() - mean).abs() < 1e-8, "{key} mean");
        assert!((multi.get(&format!("{key}.std")).unwrap() - var.sqrt()).abs() < 1e-8, "{key} std");
    }
}

#[test]
fn eval_rejects_missing_experts() {
    let w = Work::new(2);
    w.gen("train", 2, "train.eps");
    ok(w.train("run", &["--heads", "action"]));
    let o = wam(&["eval", "--checkpoint", &w.p("run/checkpoint.wack"), "--data", &w.p("train.eps"), "--which", "depth"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ablate_writes_table_reports_and_valid_figures() {
    let w = Work::new(2);
    let o = ok(wam(&[
        "ablate",
        "--config",
        &w.p("cfg.toml"),
        "--matrix",
        "action-only,full",
        "--seeds",
        "2",
        "--train-episodes",
        "3",
        "--test-episodes",
        "2",
        "--out",
        &w.p("abl"),
    ]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("action-only"));
    let table = std::fs::read_to_string(w.path("abl/table.txt")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("action-only") && rows[1].starts_with("full"));
    for v in ["action-only", "full"] {
        for s in 0..2 {
            assert!(w.path(&format!("abl/reports/{v}-seed{s}.txt")).exists());
        }
    }
    for f in ["loss_curves.ppm", "pdms_bars.ppm", "psnr_bars.ppm", "absrel_bars.ppm"] {
        let c = parse_ppm(&std::fs::read(w.path(&format!("abl/{f}"))).unwrap()).unwrap();
        assert!(c.w > 0 && c.h > 0, "{f}");
    }
    let legend = std::fs::read_to_string(w.path("abl/legend.txt")).unwrap();
    assert_eq!(legend, "# wam figure legend v1\n0 action-only\n1 full\n");
    assert!(w.path("abl/config.toml").exists());
}

#[test]
fn render_episode_writes_three_artifacts_on_the_overhead_grid() {
    let w = Work::new(2);
    w.gen("train", 2, "train.eps");
    ok(w.train("run", &[]));
    let r = render_episode(&ConfigArgs::default(), &w.path("run/checkpoint.wack"), &w.path("train.eps"), 1, &w.path("render"))
        .unwrap();
    for p in [&r.depth, &r.frames, &r.trajectory] {
        parse_ppm(&std::fs::read(p).unwrap()).unwrap();
    }
    let depth = parse_ppm(&std::fs::read(&r.depth).unwrap()).unwrap();
    let cfg = RunConfig::desk();
    assert_eq!(depth.h, cfg.world.frame_h * 4);
    assert!(depth.w > cfg.world.frame_w * 8);

    let overlay = parse_ppm(&std::fs::read(&r.trajectory).unwrap()).unwrap();
    let proj = OverheadProjection::default();
    assert_eq!((overlay.w, overlay.h), (proj.w, proj.h));
    assert!(!r.predicted.states.is_empty());
    for s in &r.predicted.states {
        let px = (120.0 - 5.0 * s.y as f64).round() as i64;
        let py = (300.0 - 5.0 * s.x as f64).round() as i64;
        if (0..proj.w as i64).contains(&px) && (0..proj.h as i64).contains(&py) {
            assert_eq!(overlay.get(px as usize, py as usize), PREDICTED);
        }
    }

    let o = wam(&["render-episode", "--checkpoint", &w.p("run/checkpoint.wack"), "--data", &w.p("train.eps"), "--episode", "9", "--out", &w.p("r2")]);
    assert_eq!(code(&o), 1);
}
