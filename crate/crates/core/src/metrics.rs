//! Depth, video and closed-loop planning metrics, and a plain-text report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::{MetricsConfig, RunConfig, SamplerSection};
use crate::experts::{DepthMap, FrameSequence, Trajectory, TrajectoryState};
use crate::flowmatch::SamplerConfig;
use crate::microworld::geometry::Rect;
use crate::microworld::{expert_policy, step, CameraConfig, EgoState, EpisodeRecord, Scene};
use crate::model::WorldActionModel;
use crate::{mix_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthReport {
    pub absrel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// AbsRel and δ-threshold accuracies over pixels where `valid` is true
/// (all pixels when `valid` is `None`).
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, valid: Option<&[bool]>) -> Result<DepthReport> {
    if pred.data.len() != gt.data.len() || valid.is_some_and(|v| v.len() != gt.data.len()) {
        return Err(Error::Input("depth maps and mask must have equal sizes".into()));
    }
    let (mut n, mut abs, mut d) = (0usize, 0.0f64, [0usize; 3]);
    for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        if !(g > 0.0) {
            return Err(Error::Input(format!("ground-truth depth {g} at pixel {i} is not positive")));
        }
        let (p, g) = (p as f64, g as f64);
        n += 1;
        abs += (p - g).abs() / g;
        let ratio = (p / g).max(g / p);
        for (k, slot) in d.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *slot += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Input("depth metrics need at least one valid pixel".into()));
    }
    let nf = n as f64;
    Ok(DepthReport { absrel: abs / nf, delta1: d[0] as f64 / nf, delta2: d[1] as f64 / nf, delta3: d[2] as f64 / nf })
}

pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(1/MSE)` for values in `[0, 1]`, capped at 100 dB.
pub fn psnr(pred: &[f32], gt: &[f32]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Input("psnr needs equal, non-empty inputs".into()));
    }
    let mse: f64 = pred.iter().zip(gt).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>() / pred.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean PSNR between consecutive frames; compared between generated and
/// ground-truth sequences as a temporal-consistency proxy.
pub fn temporal_consistency(seq: &FrameSequence) -> Result<f64> {
    if seq.frames < 2 {
        return Err(Error::Input("temporal consistency needs at least two frames".into()));
    }
    let mut acc = 0.0;
    for i in 1..seq.frames {
        acc += psnr(seq.frame(i), seq.frame(i - 1))?;
    }
    Ok(acc / (seq.frames - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSubscores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdmsWeights {
    pub ttc: f64,
    pub ep: f64,
    pub comfort: f64,
}

impl PdmsWeights {
    pub fn from_config(cfg: &MetricsConfig) -> Self {
        Self { ttc: cfg.w_ttc as f64, ep: cfg.w_ep as f64, comfort: cfg.w_comfort as f64 }
    }
}

impl Default for PdmsWeights {
    fn default() -> Self {
        Self { ttc: 5.0, ep: 5.0, comfort: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdmsReport {
    pub subscores: PlanSubscores,
    pub weights: PdmsWeights,
    pub score: f64,
}

/// Gate product of NC and DAC times the weighted mean of TTC, EP and comfort.
pub fn pdms(sub: &PlanSubscores, w: &PdmsWeights) -> PdmsReport {
    let num = w.ttc * sub.ttc + w.ep * sub.ep + w.comfort * sub.comfort;
    let den = w.ttc + w.ep + w.comfort;
    let score = sub.nc * sub.dac * (num / den);
    PdmsReport { subscores: *sub, weights: *w, score }
}

fn rect_at(x: f64, y: f64, theta: f64) -> Rect {
    EgoState { x, y, theta, speed: 0.0 }.rect()
}

/// Rolls the scene along `traj` (ego frame at the snapshot) and scores it.
///
/// Speeds come from position differences starting at the snapshot speed;
/// accelerations and jerks are their finite differences over `dt`.
pub fn plan_subscores(traj: &Trajectory, scene: &Scene, cfg: &MetricsConfig) -> Result<PlanSubscores> {
    if traj.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    let dt = traj.dt as f64;
    if !(dt > 0.0) {
        return Err(Error::Input("trajectory timestep must be positive".into()));
    }
    let poses: Vec<(f64, f64, f64)> = traj.states.iter().map(|s| scene.ego.to_world(s)).collect();
    if poses.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(Error::Input("non-finite trajectory state".into()));
    }
    let moving_eps = cfg.moving_eps as f64;
    let (mut nc, mut dac, mut ttc) = (1.0, 1.0, 1.0);
    let mut prev = (scene.ego.x, scene.ego.y, scene.ego.theta);
    let mut world = scene.clone();
    for &(x, y, th) in &poses {
        let disp = ((x - prev.0).powi(2) + (y - prev.1).powi(2)).sqrt();
        world = step(&world, EgoState { x, y, theta: th, speed: disp / dt }, dt);
        let ego = rect_at(x, y, th);
        let moving = disp > moving_eps;
        if moving && world.actors.iter().any(|a| a.rect().overlaps(&ego)) {
            nc = 0.0;
        }
        let corridor = scene.half_width + cfg.dac_tolerance as f64;
        if ego.corners().iter().any(|&c| scene.centerline.project(c).lateral.abs() > corridor) {
            dac = 0.0;
        }
        if moving {
            // Constant-velocity projection of ego and actors over the gate horizon.
            let (vx, vy) = ((x - prev.0) / dt, (y - prev.1) / dt);
            let n = (cfg.ttc_min as f64 / 0.1).round() as usize;
            'horizon: for i in 0..=n {
                let tau = i as f64 * 0.1;
                let e = rect_at(x + vx * tau, y + vy * tau, th);
                for a in &world.actors {
                    if a.at(tau).rect().overlaps(&e) {
                        ttc = 0.0;
                        break 'horizon;
                    }
                }
            }
        }
        prev = (x, y, th);
    }

    let mut speeds = vec![scene.ego.speed];
    let mut last = (scene.ego.x, scene.ego.y);
    for &(x, y, _) in &poses {
        speeds.push(((x - last.0).powi(2) + (y - last.1).powi(2)).sqrt() / dt);
        last = (x, y);
    }
    let accel: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let jerk: Vec<f64> = accel.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let comfort = (accel.iter().all(|a| a.abs() <= cfg.accel_max as f64)
        && jerk.iter().all(|j| j.abs() <= cfg.jerk_max as f64)) as u8 as f64;

    let s0 = scene.centerline.project([scene.ego.x, scene.ego.y]).s;
    let progress = |p: &(f64, f64, f64)| scene.centerline.project([p.0, p.1]).s - s0;
    let expert = expert_policy(scene, &scene.ego, scene.instruction, traj.len(), traj.dt);
    let expert_end = scene.ego.to_world(expert.states.last().expect("non-empty"));
    let expert_progress = progress(&expert_end);
    let ep = if expert_progress < 0.1 {
        1.0
    } else {
        (progress(poses.last().expect("non-empty")) / expert_progress).clamp(0.0, 1.0)
    };
    Ok(PlanSubscores { nc, dac, ttc, comfort, ep })
}

/// Ordered `key = value` report with a schema header line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: BTreeMap<String, f64>,
}

pub const REPORT_HEADER: &str = "# wam metrics report v1";

impl Report {
    pub fn insert(&mut self, key: &str, v: f64) {
        self.entries.insert(key.to_string(), v);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v:.9}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Report> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Format("missing or mismatched report header".into()));
        }
        let mut r = Report::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Format(format!("bad report line `{line}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Format(format!("bad value in `{line}`")))?;
            r.entries.insert(k.trim().to_string(), v);
        }
        Ok(r)
    }
}

/// Per-episode planning results folded into means.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlanAggregate {
    pub n: usize,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
}

impl PlanAggregate {
    pub fn from_reports(reports: &[PdmsReport]) -> Self {
        let n = reports.len();
        if n == 0 {
            return Self::default();
        }
        let mut a = Self { n, ..Self::default() };
        for r in reports {
            a.nc += r.subscores.nc;
            a.dac += r.subscores.dac;
            a.ttc += r.subscores.ttc;
            a.comfort += r.subscores.comfort;
            a.ep += r.subscores.ep;
            a.pdms += r.score;
        }
        let nf = n as f64;
        for v in [&mut a.nc, &mut a.dac, &mut a.ttc, &mut a.comfort, &mut a.ep, &mut a.pdms] {
            *v /= nf;
        }
        a
    }

    pub fn write_to(&self, r: &mut Report, prefix: &str) {
        for (k, v) in [
            ("nc", self.nc),
            ("dac", self.dac),
            ("ttc", self.ttc),
            ("comfort", self.comfort),
            ("ep", self.ep),
            ("pdms", self.pdms),
        ] {
            r.insert(&format!("{prefix}{k}"), v);
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Mean over reports for every key, plus `<key>.std` (population) when
/// there is more than one report. Keys missing from some reports use the
/// reports that have them.
pub fn aggregate_reports(reports: &[Report]) -> Report {
    let mut keys: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, &v) in &r.entries {
            keys.entry(k.as_str()).or_default().push(v);
        }
    }
    let mut out = Report::default();
    for (k, v) in keys {
        let (m, s) = mean_std(&v);
        out.insert(k, m);
        if reports.len() > 1 {
            out.insert(&format!("{k}.std"), s);
        }
    }
    out
}

/// Which evaluation families to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Which {
    pub plan: bool,
    pub depth: bool,
    pub video: bool,
}

impl Which {
    pub const ALL: Which = Which { plan: true, depth: true, video: true };
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub which: Which,
    pub sampler: SamplerSection,
    pub metrics: MetricsConfig,
    pub camera: CameraConfig,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig, which: Which) -> Self {
        Self {
            which,
            sampler: cfg.sampler.clone(),
            metrics: cfg.metrics.clone(),
            camera: CameraConfig::from_world(&cfg.world),
        }
    }
}

/// Constant-velocity baseline: keep heading and snapshot speed.
pub fn constant_velocity(speed: f32, n: usize, dt: f32) -> Trajectory {
    let states = (1..=n).map(|k| TrajectoryState { x: speed * dt * k as f32, y: 0.0, cos: 1.0, sin: 0.0 }).collect();
    Trajectory { states, dt }
}

/// Average displacement error over matching states.
pub fn ade(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input("ADE needs two non-empty trajectories of equal length".into()));
    }
    let s: f64 = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| ((p.x - q.x) as f64).hypot((p.y - q.y) as f64))
        .sum();
    Ok(s / a.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    mean_std(v).0
}

/// Scores a model on a held-out split and returns the flat report.
///
/// Each episode uses its own sampler seed derived from the configured seed
/// and its index, so results do not depend on evaluation order.
pub fn evaluate_split(model: &WorldActionModel, data: &[EpisodeRecord], opt: &EvalOptions) -> Result<Report> {
    if data.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let before = model.counters();
    let mut r = Report::default();
    r.insert("episodes", data.len() as f64);
    let w = PdmsWeights::from_config(&opt.metrics);
    let sm = &opt.sampler;
    let sampler = |steps: usize, i: usize, head: u64| SamplerConfig {
        steps,
        method: sm.method,
        seed: mix_seed(&[sm.seed, i as u64, head]),
    };
    if opt.which.plan {
        let (mut reps, mut cv_reps, mut ades, mut ades_cv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in data.iter().enumerate() {
            let traj = model.plan(rec, sampler(sm.action_steps, i, 3))?;
            reps.push(pdms(&plan_subscores(&traj, &rec.scene, &opt.metrics)?, &w));
            ades.push(ade(&traj, &rec.expert)?);
            let cv = constant_velocity(rec.scene.ego.speed as f32, rec.expert.len(), rec.expert.dt);
            cv_reps.push(pdms(&plan_subscores(&cv, &rec.scene, &opt.metrics)?, &w));
            ades_cv.push(ade(&cv, &rec.expert)?);
        }
        PlanAggregate::from_reports(&reps).write_to(&mut r, "plan.");
        PlanAggregate::from_reports(&cv_reps).write_to(&mut r, "plan_cv.");
        r.insert("plan.ade", mean(&ades));
        r.insert("plan.ade_cv", mean(&ades_cv));
    }
    if opt.which.depth {
        let mut m = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for (i, rec) in data.iter().enumerate() {
            let pred = model.predict_depth(rec, sampler(sm.depth_steps, i, 1))?;
            let d = depth_metrics(&pred, &rec.depth_map(0), None)?;
            for (slot, v) in m.iter_mut().zip([d.absrel, d.delta1, d.delta2, d.delta3]) {
                slot.push(v);
            }
        }
        for (k, v) in ["absrel", "delta1", "delta2", "delta3"].iter().zip(&m) {
            r.insert(&format!("depth.{k}"), mean(v));
        }
    }
    if opt.which.video {
        let horizon = model.config.horizon;
        let (mut ps, mut copy, mut ae, mut tc, mut tc_gt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in data.iter().enumerate() {
            let pred = model.predict_video(rec, sampler(sm.video_steps, i, 2))?;
            let gt = rec.future_frames(&opt.camera, horizon)?;
            let recon = model.video.decode_latents(&model.params, &model.video.encode_frames(&model.params, &gt)?)?;
            for f in 0..horizon {
                ps.push(psnr(pred.frame(f), gt.frame(f))?);
                ae.push(psnr(recon.frame(f), gt.frame(f))?);
                copy.push(psnr(rec.front_frame(), gt.frame(f))?);
            }
            if horizon > 1 {
                tc.push(temporal_consistency(&pred)?);
                tc_gt.push(temporal_consistency(&gt)?);
            }
        }
        r.insert("video.psnr", mean(&ps));
        r.insert("video.psnr_copy_last", mean(&copy));
        r.insert("video.psnr_autoencoder", mean(&ae));
        if !tc.is_empty() {
            r.insert("video.tc", mean(&tc));
            r.insert("video.tc_gt", mean(&tc_gt));
        }
    }
    let c = model.counters();
    r.insert("counters.depth_evals", (c.depth - before.depth) as f64);
    r.insert("counters.video_evals", (c.video - before.video) as f64);
    r.insert("counters.action_evals", (c.action - before.action) as f64);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::{generate_scene, Scenario};

    #[test]
    fn depth_examples() {
        let gt = DepthMap::new(1, 4, vec![1.0, 2.0, 5.0, 10.0]).unwrap();
        let r = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!((r.absrel, r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0, 1.0));
        let p = DepthMap::new(1, 4, gt.data.iter().map(|v| v * 1.3).collect()).unwrap();
        let r = depth_metrics(&p, &gt, None).unwrap();
        assert!((r.absrel - 0.3).abs() < 1e-6);
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0));
        assert!(depth_metrics(&p, &gt, Some(&[false; 4])).is_err());
        let bad = DepthMap::new(1, 4, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(depth_metrics(&p, &bad, None).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.5, 0.2], &[0.5, 0.2]).unwrap(), 100.0);
        let a = [0.0f32; 4];
        let b = [0.1f32; 4];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn pdms_worked_value() {
        let s = PlanSubscores { nc: 1.0, dac: 1.0, ttc: 1.0, comfort: 1.0, ep: 0.5 };
        assert_eq!(pdms(&s, &PdmsWeights::default()).score, 9.5 / 12.0);
        let z = PlanSubscores { nc: 0.0, ..s };
        assert_eq!(pdms(&z, &PdmsWeights::default()).score, 0.0);
    }

    #[test]
    fn expert_scores_clean_and_standing_still_scores_zero_progress() {
        let mut scene = generate_scene(4, Scenario::Straight);
        scene.instruction = crate::microworld::Instruction::GoStraight;
        let cfg = MetricsConfig::default();
        let expert = expert_policy(&scene, &scene.ego, scene.instruction, 8, 0.5);
        let s = plan_subscores(&expert, &scene, &cfg).unwrap();
        assert_eq!((s.nc, s.dac, s.ttc, s.comfort, s.ep), (1.0, 1.0, 1.0, 1.0, 1.0));
        let still = Trajectory {
            states: vec![crate::experts::encode_heading(0.0, 0.0, 0.0); 8],
            dt: 0.5,
        };
        let s = plan_subscores(&still, &scene, &cfg).unwrap();
        assert_eq!(s.nc, 1.0);
        assert_eq!(s.ep, 0.0);
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::default();
        r.insert("plan.pdms", 0.75);
        r.insert("depth.absrel", 0.125);
        assert_eq!(Report::parse(&r.to_text()).unwrap(), r);
        assert!(Report::parse("nope\n").is_err());
    }
}
