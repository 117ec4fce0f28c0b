use super::geometry::{norm, sub, wrap_angle};
use super::{EgoState, Instruction, Scene, EGO_HL};
use crate::experts::Trajectory;

/// Internal simulation step of the expert (s).
pub const SIM_DT: f64 = 0.1;

const A_MAX: f64 = 1.5;
const B_COMFORT: f64 = 2.0;
const HEADWAY: f64 = 2.0;
const S0: f64 = 4.0;
const ACCEL_MIN: f64 = -4.0;
const ACCEL_MAX: f64 = 2.0;
const JERK: f64 = 5.0;
const LAT_ACCEL: f64 = 2.0;
const MAX_CURVATURE: f64 = 0.25;

/// Longitudinal acceleration request: IDM toward the lane's desired speed,
/// or a smooth stop under a stop instruction.
fn desired_accel(scene: &Scene, st: &EgoState, t: f64, instruction: Instruction) -> f64 {
    let v = st.speed;
    let here = scene.centerline.project([st.x, st.y]);
    if instruction == Instruction::Stop {
        return (-v / 1.0).clamp(-1.5, 0.0);
    }
    // Slow down for curvature within the next 20 m.
    let (_, t0) = scene.centerline.at(here.s);
    let (_, t1) = scene.centerline.at(here.s + 20.0);
    let kappa = wrap_angle(t1 - t0).abs() / 20.0;
    let v0 = if kappa > 1e-6 { scene.cruise_speed.min((LAT_ACCEL / kappa).sqrt()) } else { scene.cruise_speed };
    let mut a = A_MAX * (1.0 - (v / v0.max(0.1)).powi(4));

    let mut lead: Option<(f64, f64)> = None;
    for actor in &scene.actors {
        let a_now = actor.at(t);
        let p = scene.centerline.project([a_now.x, a_now.y]);
        if p.lateral.abs() > scene.half_width + a_now.half_wid || p.s <= here.s {
            continue;
        }
        let gap = p.s - here.s - EGO_HL - a_now.half_len;
        let v_l = a_now.vx * p.tangent.cos() + a_now.vy * p.tangent.sin();
        if lead.map_or(true, |(g, _)| gap < g) {
            lead = Some((gap, v_l));
        }
    }
    if let Some((gap, v_l)) = lead {
        let s_star = S0 + (v * HEADWAY + v * (v - v_l) / (2.0 * (A_MAX * B_COMFORT).sqrt())).max(0.0);
        a -= A_MAX * (s_star / gap.max(0.1)).powi(2);
    }
    a.clamp(ACCEL_MIN, ACCEL_MAX)
}

/// Pure-pursuit curvature toward the centerline point one lookahead ahead.
fn steer(scene: &Scene, st: &EgoState) -> f64 {
    let here = scene.centerline.project([st.x, st.y]);
    let look = (1.2 * st.speed).max(5.0);
    let (target, _) = scene.centerline.at(here.s + look);
    let d = sub(target, [st.x, st.y]);
    let dist = norm(d).max(1e-6);
    let alpha = wrap_angle(d[1].atan2(d[0]) - st.theta);
    (2.0 * alpha.sin() / dist).clamp(-MAX_CURVATURE, MAX_CURVATURE)
}

/// World-frame expert states at `dt`, `t_a` of them, from the scene's ego.
pub fn expert_rollout(scene: &Scene, ego: &EgoState, instruction: Instruction, t_a: usize, dt: f64) -> Vec<EgoState> {
    let sub_steps = (dt / SIM_DT).round().max(1.0) as usize;
    let h = dt / sub_steps as f64;
    let mut st = *ego;
    let mut accel = 0.0;
    let mut t = scene.time;
    let mut out = Vec::with_capacity(t_a);
    for _ in 0..t_a {
        for _ in 0..sub_steps {
            let want = desired_accel(scene, &st, t - scene.time, instruction);
            accel += (want - accel).clamp(-JERK * h, JERK * h);
            let kappa = steer(scene, &st);
            let mut v_new = (st.speed + accel * h).max(0.0);
            // Snap to standstill once braking has nearly stopped the car.
            if v_new < 0.05 && want <= 0.0 {
                v_new = 0.0;
            }
            if v_new == 0.0 {
                accel = accel.max(0.0);
            }
            let v_mid = 0.5 * (st.speed + v_new);
            let theta_mid = st.theta + 0.5 * v_mid * kappa * h;
            st = EgoState {
                x: st.x + v_mid * theta_mid.cos() * h,
                y: st.y + v_mid * theta_mid.sin() * h,
                theta: wrap_angle(st.theta + v_mid * kappa * h),
                speed: v_new,
            };
            t += h;
        }
        out.push(st);
    }
    out
}

/// Expert plan in the frame of `ego`.
pub fn expert_policy(scene: &Scene, ego: &EgoState, instruction: Instruction, t_a: usize, dt: f32) -> Trajectory {
    let states = expert_rollout(scene, ego, instruction, t_a, dt as f64)
        .iter()
        .map(|s| ego.to_local(s.x, s.y, s.theta))
        .collect();
    Trajectory { states, dt }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, Scenario};
    use super::*;

    #[test]
    fn cruising_advances_v_dt() {
        let mut s = generate_scene(1, Scenario::Straight);
        s.actors.clear();
        s.instruction = Instruction::GoStraight;
        s.ego = EgoState { x: 0.0, y: 0.0, theta: 0.0, speed: s.cruise_speed };
        let tr = expert_policy(&s, &s.ego, Instruction::GoStraight, 8, 0.5);
        for (k, st) in tr.states.iter().enumerate() {
            let expect = s.cruise_speed * 0.5 * (k + 1) as f64;
            assert!((st.x as f64 - expect).abs() < 0.05, "{k}: {} vs {expect}", st.x);
            assert!(st.y.abs() < 1e-3);
        }
    }

    #[test]
    fn stops_before_obstacle() {
        for seed in 0..20 {
            let s = generate_scene(seed, Scenario::StoppedObstacle);
            let rollout = expert_rollout(&s, &s.ego, s.instruction, 40, 0.5);
            let last = rollout.last().unwrap();
            assert!(last.speed < 0.1, "seed {seed} speed {}", last.speed);
            let ob = s.actors[0];
            assert!(last.x + EGO_HL < ob.x - ob.half_len, "seed {seed}");
        }
    }
}
