use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::geometry::Polyline;
use super::{
    expert_policy, generate_scene, render, step, Actor, CameraConfig, EgoState, Instruction, Scenario, Scene,
};
use crate::config::{MetricsConfig, WorldConfig};
use crate::experts::{DepthMap, FrameSequence, Trajectory};
use crate::metrics::plan_subscores;
use crate::{Error, Result};

pub const EPISODE_MAGIC: &[u8; 4] = b"WAKE";
pub const EPISODE_VERSION: u16 = 1;

/// Attempts per episode before giving up on finding a scene the expert
/// drives cleanly.
const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}` (train|test)"))),
        }
    }
}

/// Seed of episode `i`. The split occupies the top bit, so the two splits
/// never share a seed.
pub fn episode_seed(split: Split, seed: u64, i: usize) -> u64 {
    let tag = match split {
        Split::Train => 0u64,
        Split::Test => 1u64 << 63,
    };
    tag | ((seed & 0x7fff_ffff) << 32) | (i as u64 & 0xffff_ffff)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub instruction: u16,
    /// Current observation, one frame per view.
    pub frames: FrameSequence,
    /// `views × h × w` meters.
    pub depth: Vec<f32>,
    pub action_ctx: Trajectory,
    pub expert: Trajectory,
    pub scene: Scene,
}

impl EpisodeRecord {
    pub fn views(&self) -> usize {
        self.frames.frames
    }

    pub fn depth_map(&self, view: usize) -> DepthMap {
        let n = self.frames.h * self.frames.w;
        DepthMap { h: self.frames.h, w: self.frames.w, data: self.depth[view * n..(view + 1) * n].to_vec() }
    }

    pub fn front_frame(&self) -> &[f32] {
        self.frames.frame(0)
    }

    /// Expert trajectory recomputed from the stored scene snapshot.
    pub fn replay_expert(&self) -> Trajectory {
        expert_policy(&self.scene, &self.scene.ego, self.scene.instruction, self.expert.len(), self.expert.dt)
    }

    /// Front-view frames along the expert trajectory, one per state, first `horizon`.
    pub fn future_frames(&self, cam: &CameraConfig, horizon: usize) -> Result<FrameSequence> {
        if horizon > self.expert.len() {
            return Err(Error::Input(format!(
                "video horizon {horizon} exceeds trajectory length {}",
                self.expert.len()
            )));
        }
        let mut data = Vec::with_capacity(horizon * cam.h * cam.w * 3);
        for (k, st) in self.expert.states.iter().take(horizon).enumerate() {
            let (x, y, th) = self.scene.ego.to_world(st);
            let t = (k + 1) as f64 * self.expert.dt as f64;
            let scene = step(&self.scene, EgoState { x, y, theta: th, speed: 0.0 }, t);
            data.extend(render(&scene, (x, y, th), cam).0);
        }
        FrameSequence::new(horizon, cam.h, cam.w, data)
    }
}

/// Builds one episode; also reports how many scenes were rejected because
/// the expert plan did not score cleanly.
pub fn build_episode(cfg: &WorldConfig, seed: u64) -> Result<(EpisodeRecord, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = Scenario::ALL[rng.gen_range(0..Scenario::ALL.len())];
    let metrics = MetricsConfig::default();
    let mut rejected = 0;
    let (scene, expert) = loop {
        if rejected >= MAX_ATTEMPTS {
            return Err(Error::Input(format!("no clean {} scene for seed {seed}", scenario.name())));
        }
        let scene = generate_scene(rng.gen(), scenario);
        let expert = expert_policy(&scene, &scene.ego, scene.instruction, cfg.t_a, cfg.dt);
        let sub = plan_subscores(&expert, &scene, &metrics)?;
        if sub.nc == 1.0 && sub.dac == 1.0 && sub.ttc == 1.0 && sub.comfort == 1.0 {
            break (scene, expert);
        }
        rejected += 1;
    };
    let cam = CameraConfig::from_world(cfg);
    let pose = (scene.ego.x, scene.ego.y, scene.ego.theta);
    let mut frames = Vec::new();
    let mut depth = Vec::new();
    for v in 0..cfg.views {
        let (rgb, d) = render(&scene, pose, &cam.view(v, cfg.views));
        frames.extend(rgb);
        depth.extend(d.data);
    }
    if cfg.depth_label_noise > 0.0 {
        for d in &mut depth {
            let z: f32 = rng.sample(StandardNormal);
            *d = (*d * (cfg.depth_label_noise * z).exp()).clamp(1e-3, cfg.d_max);
        }
    }
    let record = EpisodeRecord {
        instruction: scene.instruction.id(),
        frames: FrameSequence::new(cfg.views, cfg.frame_h, cfg.frame_w, frames)?,
        depth,
        action_ctx: scene.action_context(cfg.h_ctx, cfg.dt),
        expert,
        scene,
    };
    Ok((record, rejected))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<EpisodeRecord>,
    pub rejected: usize,
    pub per_scenario: BTreeMap<Scenario, usize>,
}

impl Dataset {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.records.len() + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

/// `n` episodes from the split's seed range, ordered by index regardless of
/// which worker produced them.
pub fn build_dataset(cfg: &WorldConfig, n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let results: Vec<Result<Vec<(EpisodeRecord, usize)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                s.spawn(move || {
                    (start..(start + chunk).min(n))
                        .map(|i| build_episode(cfg, episode_seed(split, seed, i)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("episode worker panicked")).collect()
    });
    let mut ds = Dataset { records: Vec::with_capacity(n), rejected: 0, per_scenario: BTreeMap::new() };
    for part in results {
        for (rec, rej) in part? {
            ds.rejected += rej;
            *ds.per_scenario.entry(rec.scene.scenario).or_default() += 1;
            ds.records.push(rec);
        }
    }
    Ok(ds)
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Scene blob layout (little endian): scenario u16, instruction u16,
/// half_width, cruise_speed, ego x, y, theta, speed, time (f64 each),
/// point count u32 then (x, y) f64 pairs, actor count u32 then per actor
/// x, y, theta, half_len, half_wid, vx, vy (f64 each).
fn scene_blob(s: &Scene) -> Vec<u8> {
    let mut b = Vec::new();
    put_u16(&mut b, s.scenario.code());
    put_u16(&mut b, s.instruction.id());
    put_f64s(&mut b, &[s.half_width, s.cruise_speed, s.ego.x, s.ego.y, s.ego.theta, s.ego.speed, s.time]);
    let pts = s.centerline.points();
    b.extend_from_slice(&(pts.len() as u32).to_le_bytes());
    for p in pts {
        put_f64s(&mut b, p);
    }
    b.extend_from_slice(&(s.actors.len() as u32).to_le_bytes());
    for a in &s.actors {
        put_f64s(&mut b, &[a.x, a.y, a.theta, a.half_len, a.half_wid, a.vx, a.vy]);
    }
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("episode data truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn parse_scene(blob: &[u8]) -> Result<Scene> {
    let mut c = Cursor { buf: blob, pos: 0 };
    let scenario = Scenario::from_code(c.u16()?)?;
    let instruction = Instruction::from_id(c.u16()?)?;
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = c.f64()?;
    }
    let np = c.u32()? as usize;
    let mut pts = Vec::with_capacity(np.min(1 << 16));
    for _ in 0..np {
        pts.push([c.f64()?, c.f64()?]);
    }
    let na = c.u32()? as usize;
    let mut actors = Vec::with_capacity(na.min(1 << 16));
    for _ in 0..na {
        let mut a = [0.0; 7];
        for v in &mut a {
            *v = c.f64()?;
        }
        actors.push(Actor { x: a[0], y: a[1], theta: a[2], half_len: a[3], half_wid: a[4], vx: a[5], vy: a[6] });
    }
    if c.pos != blob.len() {
        return Err(Error::Format("trailing bytes in scene blob".into()));
    }
    let scene = Scene {
        scenario,
        instruction,
        centerline: Polyline::new(pts),
        half_width: f[0],
        cruise_speed: f[1],
        ego: EgoState { x: f[2], y: f[3], theta: f[4], speed: f[5] },
        actors,
        time: f[6],
    };
    scene.validate().map_err(|e| Error::Format(format!("invalid scene snapshot: {e}")))?;
    Ok(scene)
}

pub fn write_episodes<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<()> {
    let count = u16::try_from(records.len())
        .map_err(|_| Error::Input(format!("{} records exceed the per-file limit of 65535", records.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(EPISODE_MAGIC);
    put_u16(&mut out, EPISODE_VERSION);
    put_u16(&mut out, count);
    for r in records {
        let dims = [r.frames.frames, r.frames.h, r.frames.w, r.expert.len(), r.action_ctx.len()];
        put_u16(&mut out, r.instruction);
        for d in dims {
            put_u16(&mut out, u16::try_from(d).map_err(|_| Error::Input(format!("dimension {d} too large")))?);
        }
        put_f32s(&mut out, &r.frames.data);
        put_f32s(&mut out, &r.depth);
        put_f32s(&mut out, &r.action_ctx.flat());
        put_f32s(&mut out, &r.expert.flat());
        let blob = scene_blob(&r.scene);
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    w.write_all(&out)?;
    Ok(())
}

/// Reads an episode file; `dt` is the trajectory timestep the data was made with.
pub fn read_episodes<R: Read>(mut r: R, dt: f32) -> Result<Vec<EpisodeRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != EPISODE_MAGIC {
        return Err(Error::Format("not an episode file (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != EPISODE_VERSION {
        return Err(Error::Format(format!("episode file version {version}, expected {EPISODE_VERSION}")));
    }
    let count = c.u16()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let instruction = c.u16()?;
        Instruction::from_id(instruction).map_err(|e| Error::Format(e.to_string()))?;
        let [views, h, w, t_a, h_ctx] = [c.u16()?, c.u16()?, c.u16()?, c.u16()?, c.u16()?].map(|v| v as usize);
        let frames = FrameSequence::new(views, h, w, c.f32s(views * h * w * 3)?)?;
        let depth = c.f32s(views * h * w)?;
        let action_ctx = Trajectory::from_flat(&c.f32s(h_ctx * 4)?, dt);
        let expert = Trajectory::from_flat(&c.f32s(t_a * 4)?, dt);
        let n = c.u32()? as usize;
        let scene = parse_scene(c.take(n)?)?;
        out.push(EpisodeRecord { instruction, frames, depth, action_ctx, expert, scene });
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig { frame_h: 8, frame_w: 16, ..WorldConfig::default() }
    }

    #[test]
    fn file_round_trip() {
        let ds = build_dataset(&small(), 6, 2, Split::Train).unwrap();
        assert_eq!(ds.records.len(), 6);
        let mut bytes = Vec::new();
        write_episodes(&mut bytes, &ds.records).unwrap();
        assert_eq!(&bytes[..4], b"WAKE");
        let back = read_episodes(&bytes[..], 0.5).unwrap();
        assert_eq!(back, ds.records);
        for r in &back {
            assert_eq!(r.replay_expert(), r.expert);
        }
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = Vec::new();
        write_episodes(&mut bytes, &[]).unwrap();
        bytes[4] = 9;
        assert!(matches!(read_episodes(&bytes[..], 0.5), Err(Error::Format(_))));
        assert!(read_episodes(&b"NOPE\x01\x00\x00\x00"[..], 0.5).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        for i in 0..100 {
            for j in 0..100 {
                assert_ne!(episode_seed(Split::Train, 7, i), episode_seed(Split::Test, 7, j));
            }
        }
    }
}
