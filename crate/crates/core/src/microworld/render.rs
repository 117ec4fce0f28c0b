use super::geometry::{ray_segment, wrap_angle, P2};
use super::Scene;
use crate::config::WorldConfig;
use crate::experts::DepthMap;

/// Height of actors and road-edge barriers above ground (m).
const ACTOR_HEIGHT: f64 = 1.6;
const BARRIER_HEIGHT: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    /// Horizontal field of view (rad).
    pub fov: f64,
    pub w: usize,
    pub h: usize,
    pub d_max: f64,
    /// Mount offset ahead of the ego center (m).
    pub mount_forward: f64,
    pub mount_height: f64,
    /// Yaw relative to the ego heading (rad).
    pub yaw: f64,
}

impl CameraConfig {
    pub fn from_world(w: &WorldConfig) -> Self {
        Self {
            fov: (w.fov_deg as f64).to_radians(),
            w: w.frame_w,
            h: w.frame_h,
            d_max: w.d_max as f64,
            mount_forward: 1.5,
            mount_height: 1.2,
            yaw: 0.0,
        }
    }

    /// Camera `k` of `n`, spread by one field of view around the front view.
    pub fn view(&self, k: usize, n: usize) -> Self {
        Self { yaw: (k as f64 - (n as f64 - 1.0) / 2.0) * self.fov, ..*self }
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.w as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    /// Ray azimuth offset from the optical axis for column `c` (left positive).
    pub fn column_angle(&self, c: usize) -> f64 {
        self.fov / 2.0 - (c as f64 + 0.5) * self.fov / self.w as f64
    }

    /// Camera origin and optical-axis heading for an ego pose.
    pub fn origin(&self, pose: (f64, f64, f64)) -> (P2, f64) {
        let (x, y, th) = pose;
        let o = [x + self.mount_forward * th.cos(), y + self.mount_forward * th.sin()];
        (o, wrap_angle(th + self.yaw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hit {
    Nothing,
    Actor,
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Range along the ray (m), `d_max`-capped planar depth in `depth`.
    pub range: f64,
    pub depth: f64,
    pub hit: Hit,
}

/// One ray per column. Depth is planar (range times the cosine of the ray's
/// offset from the optical axis), capped at `d_max`.
pub fn scan(scene: &Scene, pose: (f64, f64, f64), cam: &CameraConfig) -> Vec<RayHit> {
    let (o, axis) = cam.origin(pose);
    let rects: Vec<_> = scene.actors.iter().map(|a| a.rect()).collect();
    let edges = [scene.left_edge(), scene.right_edge()];
    (0..cam.w)
        .map(|c| {
            let off = cam.column_angle(c);
            let a = axis + off;
            let dir = [a.cos(), a.sin()];
            let mut best = (f64::INFINITY, Hit::Nothing);
            for r in &rects {
                if let Some(t) = r.ray_hit(o, dir) {
                    if t < best.0 {
                        best = (t, Hit::Actor);
                    }
                }
            }
            for e in &edges {
                for (p, q) in e.segments() {
                    if let Some(t) = ray_segment(o, dir, p, q) {
                        if t < best.0 {
                            best = (t, Hit::Barrier);
                        }
                    }
                }
            }
            let depth = best.0 * off.cos();
            if depth > cam.d_max || !depth.is_finite() {
                RayHit { range: best.0, depth: cam.d_max, hit: Hit::Nothing }
            } else {
                RayHit { range: best.0, depth, hit: best.1 }
            }
        })
        .collect()
}

const SKY_TOP: [f32; 3] = [0.35, 0.55, 0.9];
const SKY_BOTTOM: [f32; 3] = [0.75, 0.85, 0.95];
const GROUND: [f32; 3] = [0.32, 0.32, 0.3];
const ACTOR: [f32; 3] = [0.95, 0.3, 0.2];
const BARRIER: [f32; 3] = [0.3, 0.9, 0.4];

/// RGB frame `h × w × 3` in `[0, 1]` and the depth map (scan replicated over rows).
pub fn render(scene: &Scene, pose: (f64, f64, f64), cam: &CameraConfig) -> (Vec<f32>, DepthMap) {
    let hits = scan(scene, pose, cam);
    let (h, w) = (cam.h, cam.w);
    let f = cam.focal();
    let horizon = h as f64 / 2.0;
    let mut rgb = vec![0.0f32; h * w * 3];
    let mut depth = vec![0.0f32; h * w];
    for (c, hit) in hits.iter().enumerate() {
        let band = match hit.hit {
            Hit::Nothing => None,
            Hit::Actor => Some((ACTOR_HEIGHT, ACTOR)),
            Hit::Barrier => Some((BARRIER_HEIGHT, BARRIER)),
        };
        let bright = (8.0 / hit.depth).min(1.0) as f32;
        for r in 0..h {
            let y = r as f64 + 0.5;
            let color = match band {
                Some((height, col))
                    if y >= horizon - f * (height - cam.mount_height) / hit.depth
                        && y <= horizon + f * cam.mount_height / hit.depth =>
                {
                    col.map(|v| v * bright)
                }
                _ if y < horizon => {
                    let k = (y / horizon) as f32;
                    [0, 1, 2].map(|i| SKY_TOP[i] + (SKY_BOTTOM[i] - SKY_TOP[i]) * k)
                }
                _ => GROUND,
            };
            let i = r * w + c;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
            depth[i] = hit.depth as f32;
        }
    }
    (rgb, DepthMap { h, w, data: depth })
}

#[cfg(test)]
mod tests {
    use super::super::geometry::Polyline;
    use super::super::{Actor, EgoState, Instruction, Scenario};
    use super::*;

    fn far_road() -> Scene {
        // A road far behind the camera so no edge is visible.
        Scene {
            scenario: Scenario::Straight,
            instruction: Instruction::GoStraight,
            centerline: Polyline::new(vec![[-500.0, 0.0], [-400.0, 0.0]]),
            half_width: 3.0,
            cruise_speed: 5.0,
            ego: EgoState { x: 0.0, y: 0.0, theta: 0.0, speed: 5.0 },
            actors: vec![],
            time: 0.0,
        }
    }

    #[test]
    fn empty_scene_is_all_far() {
        let cam = CameraConfig { fov: 1.5, w: 16, h: 8, d_max: 80.0, mount_forward: 0.0, mount_height: 1.2, yaw: 0.0 };
        let (rgb, d) = render(&far_road(), (0.0, 0.0, 0.0), &cam);
        assert!(d.data.iter().all(|&v| v == 80.0));
        assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn square_ahead_has_flat_face_depth() {
        let mut s = far_road();
        s.actors.push(Actor { x: 10.0, y: 0.0, theta: 0.0, half_len: 0.5, half_wid: 0.5, vx: 0.0, vy: 0.0 });
        let cam = CameraConfig { fov: 1.5, w: 63, h: 8, d_max: 80.0, mount_forward: 0.0, mount_height: 1.2, yaw: 0.0 };
        let hits = scan(&s, (0.0, 0.0, 0.0), &cam);
        assert!((hits[31].depth - 9.5).abs() < 1e-12);
        assert_eq!(hits[31].hit, Hit::Actor);
        assert_eq!(hits[0].hit, Hit::Nothing);
    }
}
