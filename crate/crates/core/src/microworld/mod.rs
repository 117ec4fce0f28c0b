//! Procedural single-road driving world.
//!
//! A scene is a lane centerline (straight, or straight → 90° arc → straight)
//! with a half-width, rectangular actors moving at constant velocity, and the
//! ego pose. A 1D raycast camera yields exact depth, an IDM + pure-pursuit
//! expert yields future trajectories, and [`step`] replays a plan.

mod episode;
pub mod geometry;
mod policy;
mod render;

pub use episode::{
    build_dataset, build_episode, episode_seed, read_episodes, write_episodes, Dataset, EpisodeRecord, Split,
    EPISODE_MAGIC, EPISODE_VERSION,
};
pub use policy::{expert_policy, expert_rollout, SIM_DT};
pub use render::{render, scan, CameraConfig, Hit, RayHit};

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experts::{Trajectory, TrajectoryState};
use crate::{Error, Result};
use geometry::{Polyline, Rect, P2};

/// Ego footprint half length and half width (m).
pub const EGO_HL: f64 = 2.2;
pub const EGO_HW: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Straight,
    LeftTurn,
    RightTurn,
    LeadVehicle,
    StoppedObstacle,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::Straight, Scenario::LeftTurn, Scenario::RightTurn, Scenario::LeadVehicle, Scenario::StoppedObstacle];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(c: u16) -> Result<Self> {
        Self::ALL.get(c as usize).copied().ok_or_else(|| Error::Format(format!("unknown scenario code {c}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Straight => "straight",
            Scenario::LeftTurn => "left-turn",
            Scenario::RightTurn => "right-turn",
            Scenario::LeadVehicle => "lead-vehicle",
            Scenario::StoppedObstacle => "stopped-obstacle",
        }
    }
}

/// Discrete instruction vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    GoStraight,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Instruction {
    pub const ALL: [Instruction; 4] =
        [Instruction::GoStraight, Instruction::TurnLeft, Instruction::TurnRight, Instruction::Stop];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Result<Self> {
        Self::ALL.get(id as usize).copied().ok_or_else(|| Error::Input(format!("unknown instruction id {id}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actor {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Actor {
    pub fn rect(&self) -> Rect {
        Rect { c: [self.x, self.y], theta: self.theta, hl: self.half_len, hw: self.half_wid }
    }

    /// Position after `t` seconds of constant velocity.
    pub fn at(&self, t: f64) -> Actor {
        Actor { x: self.x + self.vx * t, y: self.y + self.vy * t, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn rect(&self) -> Rect {
        Rect { c: [self.x, self.y], theta: self.theta, hl: EGO_HL, hw: EGO_HW }
    }

    /// World pose of a state given in this state's frame.
    pub fn to_world(&self, s: &TrajectoryState) -> (f64, f64, f64) {
        let (sn, cs) = self.theta.sin_cos();
        let (x, y) = (s.x as f64, s.y as f64);
        let th = (s.sin as f64).atan2(s.cos as f64);
        (self.x + cs * x - sn * y, self.y + sn * x + cs * y, geometry::wrap_angle(self.theta + th))
    }

    /// State expressed in this state's frame.
    pub fn to_local(&self, x: f64, y: f64, theta: f64) -> TrajectoryState {
        let (sn, cs) = self.theta.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        let th = geometry::wrap_angle(theta - self.theta);
        TrajectoryState {
            x: (cs * dx + sn * dy) as f32,
            y: (-sn * dx + cs * dy) as f32,
            cos: th.cos() as f32,
            sin: th.sin() as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scenario: Scenario,
    pub instruction: Instruction,
    pub centerline: Polyline,
    pub half_width: f64,
    pub cruise_speed: f64,
    pub ego: EgoState,
    pub actors: Vec<Actor>,
    /// Seconds since the snapshot.
    pub time: f64,
}

impl Scene {
    pub fn left_edge(&self) -> Polyline {
        self.centerline.offset(self.half_width)
    }

    pub fn right_edge(&self) -> Polyline {
        self.centerline.offset(-self.half_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > EGO_HW) {
            return Err(Error::Input(format!("lane half-width {} not above ego half-width", self.half_width)));
        }
        if self.centerline.points().len() < 2 || !(self.centerline.length() > 0.0) {
            return Err(Error::Input("centerline needs at least two distinct points".into()));
        }
        for a in &self.actors {
            if !(a.half_len > 0.0 && a.half_wid > 0.0) {
                return Err(Error::Input("degenerate actor footprint".into()));
            }
            if ![a.x, a.y, a.theta, a.vx, a.vy].iter().all(|v| v.is_finite()) {
                return Err(Error::Input("non-finite actor state".into()));
            }
        }
        Ok(())
    }

    /// Applies a rigid motion (rotation `phi` about the origin, then translation).
    pub fn transformed(&self, phi: f64, tx: f64, ty: f64) -> Scene {
        let (s, c) = phi.sin_cos();
        let tp = |p: P2| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty];
        let tv = |vx: f64, vy: f64| (c * vx - s * vy, s * vx + c * vy);
        let pts = self.centerline.points().iter().map(|&p| tp(p)).collect();
        let e = tp([self.ego.x, self.ego.y]);
        Scene {
            centerline: Polyline::new(pts),
            ego: EgoState { x: e[0], y: e[1], theta: self.ego.theta + phi, ..self.ego },
            actors: self
                .actors
                .iter()
                .map(|a| {
                    let p = tp([a.x, a.y]);
                    let (vx, vy) = tv(a.vx, a.vy);
                    Actor { x: p[0], y: p[1], theta: a.theta + phi, vx, vy, ..*a }
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Past ego states in the current ego frame, oldest first, ending at the
    /// current pose, assuming constant speed along the current heading.
    pub fn action_context(&self, h_ctx: usize, dt: f32) -> Trajectory {
        let states = (0..h_ctx)
            .rev()
            .map(|k| TrajectoryState { x: -(k as f32) * dt * self.ego.speed as f32, y: 0.0, cos: 1.0, sin: 0.0 })
            .collect();
        Trajectory { states, dt }
    }
}

/// Moves the ego to `next` (trajectory-tracking abstraction) and advances
/// every actor by its constant velocity.
pub fn step(scene: &Scene, next: EgoState, dt: f64) -> Scene {
    Scene {
        ego: next,
        actors: scene.actors.iter().map(|a| a.at(dt)).collect(),
        time: scene.time + dt,
        ..scene.clone()
    }
}

fn scene_rng(seed: u64, scenario: Scenario) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (scenario.code() as u64 + 1))
}

/// Centerline for a scenario. Ego starts at the origin, 50 m after the start.
fn centerline<R: Rng>(rng: &mut R, scenario: Scenario) -> Polyline {
    let mut pts: Vec<P2> = Vec::new();
    let turn = match scenario {
        Scenario::LeftTurn => 1.0,
        Scenario::RightTurn => -1.0,
        _ => 0.0,
    };
    if turn == 0.0 {
        let mut x = -50.0;
        while x <= 150.0 {
            pts.push([x, 0.0]);
            x += 5.0;
        }
        return Polyline::new(pts);
    }
    let l1: f64 = rng.gen_range(8.0..25.0);
    let r: f64 = rng.gen_range(15.0..30.0);
    let mut x = -50.0;
    while x < l1 {
        pts.push([x, 0.0]);
        x += 5.0;
    }
    pts.push([l1, 0.0]);
    // Arc centered at (l1, ±r), sampled about once per meter.
    let n = (r * FRAC_PI_2).ceil() as usize;
    for i in 1..=n {
        let a = FRAC_PI_2 * i as f64 / n as f64;
        pts.push([l1 + r * a.sin(), turn * r * (1.0 - a.cos())]);
    }
    let end = *pts.last().unwrap();
    for k in 1..=16 {
        pts.push([end[0], end[1] + turn * 5.0 * k as f64]);
    }
    Polyline::new(pts)
}

/// Pure function of `(seed, scenario)`.
pub fn generate_scene(seed: u64, scenario: Scenario) -> Scene {
    let mut rng = scene_rng(seed, scenario);
    loop {
        let scene = try_scene(&mut rng, scenario);
        if scene_is_clean(&scene) {
            return scene;
        }
    }
}

fn try_scene(rng: &mut ChaCha8Rng, scenario: Scenario) -> Scene {
    let centerline = centerline(rng, scenario);
    let half_width = rng.gen_range(2.5..3.5);
    let cruise_speed = rng.gen_range(5.0..10.0);
    let s0 = 50.0;
    let ego = EgoState {
        x: 0.0,
        y: rng.gen_range(-0.3..0.3),
        theta: rng.gen_range(-0.03..0.03),
        speed: cruise_speed * rng.gen_range(0.8..1.0),
    };
    let instruction = match scenario {
        Scenario::LeftTurn => Instruction::TurnLeft,
        Scenario::RightTurn => Instruction::TurnRight,
        Scenario::Straight if rng.gen_bool(0.25) => Instruction::Stop,
        _ => Instruction::GoStraight,
    };
    let mut actors = Vec::new();
    let car = |rng: &mut ChaCha8Rng, x: f64, y: f64, v: f64| Actor {
        x,
        y,
        theta: 0.0,
        half_len: rng.gen_range(2.0..2.4),
        half_wid: rng.gen_range(0.8..1.0),
        vx: v,
        vy: 0.0,
    };
    match scenario {
        Scenario::LeadVehicle => {
            let gap = rng.gen_range(20.0..35.0);
            let v = cruise_speed * rng.gen_range(0.3..0.7);
            let y = rng.gen_range(-0.3..0.3);
            actors.push(car(rng, gap, y, v));
        }
        Scenario::StoppedObstacle => {
            let v = ego.speed;
            let near = v * v / 4.0 + v + 10.0;
            let gap = rng.gen_range(near..near + 25.0);
            let y = rng.gen_range(-0.5..0.5);
            actors.push(car(rng, gap, y, 0.0));
        }
        _ => {}
    }
    for _ in 0..rng.gen_range(0..=3) {
        let s = s0 + rng.gen_range(8.0..70.0);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let hl: f64 = rng.gen_range(1.0..3.0);
        let hw: f64 = rng.gen_range(0.5..1.5);
        let off = half_width + 1.0 + hw.max(hl) + rng.gen_range(0.0..4.0);
        let (p, tan) = centerline.at(s);
        let (sn, cs) = tan.sin_cos();
        actors.push(Actor {
            x: p[0] - sn * side * off,
            y: p[1] + cs * side * off,
            theta: tan + rng.gen_range(-0.2..0.2),
            half_len: hl,
            half_wid: hw,
            vx: 0.0,
            vy: 0.0,
        });
    }
    Scene { scenario, instruction, centerline, half_width, cruise_speed, ego, actors, time: 0.0 }
}

/// Parked actors must sit clear of the lane; in-lane actors must not touch the ego.
fn scene_is_clean(scene: &Scene) -> bool {
    if scene.validate().is_err() {
        return false;
    }
    let ego = scene.ego.rect();
    scene.actors.iter().all(|a| {
        let r = a.rect();
        if r.overlaps(&ego) {
            return false;
        }
        let moving_in_lane = matches!(scene.scenario, Scenario::LeadVehicle | Scenario::StoppedObstacle)
            && scene.centerline.project([a.x, a.y]).lateral.abs() < scene.half_width;
        moving_in_lane
            || r.corners().iter().all(|&c| scene.centerline.project(c).lateral.abs() > scene.half_width + 0.5)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_pure() {
        for sc in Scenario::ALL {
            assert_eq!(generate_scene(11, sc), generate_scene(11, sc));
        }
        assert_ne!(generate_scene(11, Scenario::LeftTurn), generate_scene(12, Scenario::LeftTurn));
    }

    #[test]
    fn straight_centerline_has_no_curvature() {
        let s = generate_scene(3, Scenario::Straight);
        assert!(s.centerline.points().iter().all(|p| p[1] == 0.0));
    }

    #[test]
    fn step_moves_actors() {
        let mut s = generate_scene(5, Scenario::LeadVehicle);
        s.actors.push(Actor { x: 0.0, y: 30.0, theta: 0.0, half_len: 1.0, half_wid: 1.0, vx: 5.0, vy: 0.0 });
        s.actors.push(Actor { x: 3.0, y: 30.0, theta: 0.0, half_len: 1.0, half_wid: 1.0, vx: 0.0, vy: 0.0 });
        let n = s.actors.len();
        let t = step(&s, s.ego, 0.5);
        assert!((t.actors[n - 2].x - 2.5).abs() < 1e-12);
        assert_eq!(t.actors[n - 1], s.actors[n - 1]);
        assert_eq!(step(&s, s.ego, 0.5), t);
    }

    #[test]
    fn frame_round_trip() {
        let e = EgoState { x: 3.0, y: -2.0, theta: 0.7, speed: 1.0 };
        let l = e.to_local(10.0, 4.0, 1.2);
        let (x, y, th) = e.to_world(&l);
        assert!((x - 10.0).abs() < 1e-5 && (y - 4.0).abs() < 1e-5 && (th - 1.2).abs() < 1e-6);
    }
}
