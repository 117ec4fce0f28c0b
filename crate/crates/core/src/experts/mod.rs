//! Generative heads and the data types they produce: a pixel-space depth
//! denoiser, a latent video denoiser with its patch autoencoder and visual
//! condition, and a trajectory denoiser.

mod action;
mod depth;
mod video;

pub use action::ActionExpert;
pub use depth::DepthExpert;
pub use video::VideoExpert;

use crate::numerics::Tensor;
use crate::{Error, Result};

/// One or more RGB frames, `frames × h × w × 3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(frames: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * h * w * 3 {
            return Err(Error::Input(format!(
                "frame data has {} values, expected {frames}x{h}x{w}x3",
                data.len()
            )));
        }
        Ok(Self { frames, h, w, data })
    }

    pub fn zeros(frames: usize, h: usize, w: usize) -> Self {
        Self { frames, h, w, data: vec![0.0; frames * h * w * 3] }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * 3
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// A single-frame sequence holding frame `i`.
    pub fn single(&self, i: usize) -> FrameSequence {
        FrameSequence { frames: 1, h: self.h, w: self.w, data: self.frame(i).to_vec() }
    }
}

/// Metric depth in meters, `h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Input(format!("depth data has {} values, expected {h}x{w}", data.len())));
        }
        Ok(Self { h, w, data })
    }
}

/// Log-space percentile bounds used to map depth into `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthNormParams {
    pub log_lo: f32,
    pub log_hi: f32,
    pub p_low: f32,
    pub p_high: f32,
    pub degenerate: bool,
}

impl DepthNormParams {
    /// Median of per-map bounds, used at inference when no ground truth exists.
    pub fn aggregate(per_map: &[DepthNormParams]) -> Result<DepthNormParams> {
        let first = per_map.first().ok_or_else(|| Error::Input("no depth maps to aggregate".into()))?;
        let med = |f: fn(&DepthNormParams) -> f32| {
            let mut v: Vec<f32> = per_map.iter().map(f).collect();
            v.sort_by(f32::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        let log_lo = med(|p| p.log_lo);
        let log_hi = med(|p| p.log_hi).max(log_lo);
        Ok(DepthNormParams {
            log_lo,
            log_hi,
            p_low: first.p_low,
            p_high: first.p_high,
            degenerate: log_hi <= log_lo,
        })
    }
}

/// Linear-interpolated percentile of sorted data, `p ∈ [0, 100]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let frac = pos - i as f64;
    sorted[i] + (sorted[j] - sorted[i]) * frac
}

pub fn normalize_depth(d: &DepthMap, p_low: f32, p_high: f32) -> Result<(Tensor, DepthNormParams)> {
    if d.data.is_empty() {
        return Err(Error::Input("empty depth map".into()));
    }
    if let Some(bad) = d.data.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("depth must be positive and finite, found {bad}")));
    }
    let logs: Vec<f64> = d.data.iter().map(|&v| (v as f64).ln()).collect();
    let mut sorted = logs.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, p_low as f64);
    let hi = percentile(&sorted, p_high as f64);
    let degenerate = !(hi > lo);
    let data = if degenerate {
        vec![0.0; logs.len()]
    } else {
        logs.iter().map(|&l| (((l - lo) / (hi - lo)) - 0.5).clamp(-0.5, 0.5) as f32).collect()
    };
    let params = DepthNormParams { log_lo: lo as f32, log_hi: hi as f32, p_low, p_high, degenerate };
    Ok((Tensor::new(&[d.h, d.w], data)?, params))
}

pub fn denormalize_depth(n: &Tensor, params: &DepthNormParams) -> DepthMap {
    let (h, w) = match n.shape() {
        [h, w] => (*h, *w),
        _ => (1, n.len()),
    };
    let (lo, hi) = (params.log_lo as f64, params.log_hi as f64);
    let data = n
        .data()
        .iter()
        .map(|&v| {
            if params.degenerate {
                lo.exp() as f32
            } else {
                ((v as f64 + 0.5) * (hi - lo) + lo).exp() as f32
            }
        })
        .collect();
    DepthMap { h, w, data }
}

/// A planar pose with heading stored as `(cos θ, sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub x: f32,
    pub y: f32,
    pub cos: f32,
    pub sin: f32,
}

pub fn encode_heading(x: f32, y: f32, theta: f32) -> TrajectoryState {
    TrajectoryState { x, y, cos: theta.cos(), sin: theta.sin() }
}

/// Decoded pose and whether `(cos, sin)` was the zero vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedPose {
    pub x: f32,
    pub y: f32,
    pub theta: f32,
    pub degenerate: bool,
}

pub fn decode_heading(s: &TrajectoryState) -> DecodedPose {
    let r = s.renormalized();
    let theta = if r.1 { 0.0 } else { (s.sin as f64).atan2(s.cos as f64) as f32 };
    DecodedPose { x: r.0.x, y: r.0.y, theta, degenerate: r.1 }
}

impl TrajectoryState {
    /// Unit-length heading; the zero vector maps to θ = 0 with the flag set.
    pub fn renormalized(&self) -> (TrajectoryState, bool) {
        let (c, s) = (self.cos as f64, self.sin as f64);
        let n = (c * c + s * s).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return (TrajectoryState { cos: 1.0, sin: 0.0, ..*self }, true);
        }
        (TrajectoryState { cos: (c / n) as f32, sin: (s / n) as f32, ..*self }, false)
    }

    pub fn theta(&self) -> f32 {
        self.sin.atan2(self.cos)
    }
}

/// States at a fixed timestep, in the ego frame at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
    pub dt: f32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `[n × 4]` rows of `(x/scale, y/scale, cos, sin)`.
    pub fn to_tensor(&self, scale: f32) -> Tensor {
        let data = self.states.iter().flat_map(|s| [s.x / scale, s.y / scale, s.cos, s.sin]).collect();
        Tensor::new(&[self.states.len(), 4], data).expect("rows of 4")
    }

    /// Inverse of [`Self::to_tensor`], renormalizing every heading.
    pub fn from_tensor(t: &Tensor, scale: f32, dt: f32) -> Result<Self> {
        let (n, c) = t.rows_cols();
        if c != 4 {
            return Err(Error::Input(format!("trajectory tensor needs 4 columns, got {c}")));
        }
        let states = (0..n)
            .map(|i| {
                let r = t.row(i);
                TrajectoryState { x: r[0] * scale, y: r[1] * scale, cos: r[2], sin: r[3] }.renormalized().0
            })
            .collect();
        Ok(Self { states, dt })
    }

    pub fn flat(&self) -> Vec<f32> {
        self.states.iter().flat_map(|s| [s.x, s.y, s.cos, s.sin]).collect()
    }

    pub fn from_flat(data: &[f32], dt: f32) -> Self {
        let states = data.chunks(4).map(|r| TrajectoryState { x: r[0], y: r[1], cos: r[2], sin: r[3] }).collect();
        Self { states, dt }
    }
}

/// Autoencoder latents, `t × h × w × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl VideoLatent {
    /// Rows of `c` channels, frame-major then raster order.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.t * self.h * self.w, self.c], self.data.clone()).expect("latent shape")
    }

    pub fn from_tensor(t: &Tensor, frames: usize, h: usize, w: usize) -> Result<Self> {
        let (n, c) = t.rows_cols();
        if n != frames * h * w {
            return Err(Error::Input(format!("latent tensor has {n} rows, expected {}", frames * h * w)));
        }
        Ok(Self { t: frames, h, w, c, data: t.data().to_vec() })
    }
}
