//! Run configuration: `[world]`, `[model]`, `[train]`, `[sampler]` and
//! `[metrics]` sections of `key = value` entries. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Camera frame height in pixels.
    pub frame_h: usize,
    /// Camera frame width in pixels (one ray per column).
    pub frame_w: usize,
    pub fov_deg: f32,
    /// Depth ceiling and ray range (m).
    pub d_max: f32,
    pub views: usize,
    /// Past ego states given to the backbone (including the current one).
    pub h_ctx: usize,
    /// Future trajectory length.
    pub t_a: usize,
    /// Trajectory timestep (s).
    pub dt: f32,
    /// Std of multiplicative log-normal noise on depth labels (0 disables).
    pub depth_label_noise: f32,
    pub depth_p_low: f32,
    pub depth_p_high: f32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            frame_h: 32,
            frame_w: 64,
            fov_deg: 90.0,
            d_max: 80.0,
            views: 1,
            h_ctx: 4,
            t_a: 8,
            dt: 0.5,
            depth_label_noise: 0.0,
            depth_p_low: 1.0,
            depth_p_high: 99.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Square image patch size for backbone tokens and the visual condition.
    pub patch: usize,
    pub vocab: usize,
    pub n_depth: usize,
    pub n_video: usize,
    pub n_action: usize,

    pub depth_width: usize,
    pub depth_blocks: usize,
    pub depth_heads: usize,
    pub depth_patch: usize,

    pub video_width: usize,
    pub video_blocks: usize,
    pub video_heads: usize,
    /// Autoencoder patch size `s`; latents are `H/s × W/s`.
    pub ae_downsample: usize,
    pub latent_channels: usize,
    /// Future frames generated by the video expert.
    pub horizon: usize,
    pub video_temporal_pos: bool,
    /// Generate future latents as offsets from the current-frame latent.
    pub video_residual: bool,
    /// Multiplier from latents (or latent offsets) to flow-matching space.
    pub video_latent_scale: f32,
    /// How the clean current-frame latent enters the video denoiser.
    pub video_context: VideoContext,

    pub action_width: usize,
    pub action_blocks: usize,
    pub action_heads: usize,
    /// Trajectory positions are divided by this (m) before flow matching.
    pub traj_scale: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            blocks: 4,
            heads: 4,
            mlp_ratio: 4,
            patch: 8,
            vocab: 4,
            n_depth: 64,
            n_video: 64,
            n_action: 8,
            depth_width: 64,
            depth_blocks: 2,
            depth_heads: 4,
            depth_patch: 8,
            video_width: 64,
            video_blocks: 2,
            video_heads: 4,
            ae_downsample: 8,
            latent_channels: 16,
            horizon: 4,
            video_temporal_pos: true,
            video_residual: true,
            video_latent_scale: 1.0,
            video_context: VideoContext::Prepend,
            action_width: 64,
            action_blocks: 2,
            action_heads: 4,
            traj_scale: 10.0,
        }
    }
}

/// Which generative experts receive a loss during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Heads {
    pub depth: bool,
    pub video: bool,
    pub action: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { depth: true, video: true, action: true };
    pub const ACTION: Heads = Heads { depth: false, video: false, action: true };

    pub fn is_empty(&self) -> bool {
        !(self.depth || self.video || self.action)
    }
}

impl Default for Heads {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.depth {
            parts.push("depth");
        }
        if self.video {
            parts.push("video");
        }
        if self.action {
            parts.push("action");
        }
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for Heads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let mut h = Heads { depth: false, video: false, action: false };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "depth" => h.depth = true,
                "video" => h.video = true,
                "action" => h.action = true,
                "all" => h = Heads::ALL,
                other => return Err(Error::Config(format!("unknown head `{other}`"))),
            }
        }
        if h.is_empty() {
            return Err(Error::Config("at least one head must be enabled".into()));
        }
        Ok(h)
    }
}

impl Serialize for Heads {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Heads {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_d: f32,
    pub lambda_v: f32,
    pub lambda_a: f32,
    /// Weight of the autoencoder reconstruction term inside the video loss.
    pub recon_weight: f32,
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip (0 disables).
    pub grad_clip: f32,
    pub seed: u64,
    pub heads: Heads,
    /// Detach backbone embeddings before the experts.
    pub stop_gradient: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.1,
            lambda_v: 1.0,
            lambda_a: 1.0,
            recon_weight: 1.0,
            steps: 5000,
            batch: 16,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            heads: Heads::ALL,
            stop_gradient: false,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Large-scale values (100k steps, batch 32, lr 1e-5).
    pub fn reference_preset() -> Self {
        Self { steps: 100_000, batch: 32, lr: 1e-5, ..Self::default() }
    }
}

/// `prepend`: clean current-frame tokens precede the noisy future tokens.
/// `concat`: the current latent is projected and added to every future
/// frame's tokens (channel concatenation written as a sum of projections).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoContext {
    Prepend,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Euler,
    Heun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub method: SolverMethod,
    pub depth_steps: usize,
    pub video_steps: usize,
    pub action_steps: usize,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { method: SolverMethod::Euler, depth_steps: 32, video_steps: 32, action_steps: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub w_ttc: f32,
    pub w_ep: f32,
    pub w_comfort: f32,
    /// Time-to-collision gate (s).
    pub ttc_min: f32,
    /// Comfort limits (m/s², m/s³).
    pub accel_max: f32,
    pub jerk_max: f32,
    /// Lane corridor tolerance for drivable-area compliance (m).
    pub dac_tolerance: f32,
    /// Collisions only count when the ego moved more than this in the step (m).
    pub moving_eps: f32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            w_ttc: 5.0,
            w_ep: 5.0,
            w_comfort: 2.0,
            ttc_min: 1.0,
            accel_max: 4.0,
            jerk_max: 8.0,
            dac_tolerance: 0.1,
            moving_eps: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSection,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        format!(
            "# wam run config v1\n{}",
            toml::to_string(self).expect("config serializes")
        )
    }

    /// Applies a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), Error> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{key}` needs section.field")))?;
        let mut doc: toml::Table = toml::from_str(&toml::to_string(self).expect("serializes"))
            .map_err(|e| Error::Config(e.to_string()))?;
        let table = doc
            .get_mut(section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section `{section}`")))?;
        let old = table
            .get(field)
            .ok_or_else(|| Error::Config(format!("unknown key `{section}.{field}`")))?;
        let value = value.trim();
        let parsed = match old {
            toml::Value::String(_) => toml::Value::String(value.trim_matches('"').to_string()),
            _ => {
                let wrapped: toml::Table = toml::from_str(&format!("v = {value}"))
                    .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))?;
                let v = wrapped["v"].clone();
                // Allow integers where floats are expected.
                match (old, v) {
                    (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (_, v) => v,
                }
            }
        };
        table.insert(field.to_string(), parsed);
        let text = toml::to_string(&doc).expect("serializes");
        *self = Self::from_toml_str(&text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        let w = &self.world;
        let m = &self.model;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(w.fov_deg > 0.0 && w.fov_deg < 180.0) {
            return bad(format!("world.fov_deg must be in (0, 180), got {}", w.fov_deg));
        }
        if w.frame_w < 8 || w.frame_h < 8 {
            return bad("world.frame_w and world.frame_h must be at least 8".into());
        }
        if w.views == 0 || w.h_ctx == 0 || w.t_a == 0 || !(w.dt > 0.0) || !(w.d_max > 0.0) {
            return bad("world views, h_ctx, t_a, dt and d_max must be positive".into());
        }
        if !(0.0..100.0).contains(&w.depth_p_low) || !(w.depth_p_low < w.depth_p_high && w.depth_p_high <= 100.0) {
            return bad("depth percentiles must satisfy 0 <= low < high <= 100".into());
        }
        for (name, p) in [("patch", m.patch), ("depth_patch", m.depth_patch), ("ae_downsample", m.ae_downsample)] {
            if p == 0 || w.frame_h % p != 0 || w.frame_w % p != 0 {
                return bad(format!("model.{name}={p} must divide the frame size"));
            }
        }
        for (name, width, heads) in [
            ("", m.d_model, m.heads),
            ("depth_", m.depth_width, m.depth_heads),
            ("video_", m.video_width, m.video_heads),
            ("action_", m.action_width, m.action_heads),
        ] {
            if heads == 0 || width % heads != 0 {
                return bad(format!("model.{name}heads must divide the width"));
            }
        }
        if m.n_depth == 0 || m.n_video == 0 || m.n_action == 0 || m.vocab == 0 || m.horizon == 0 {
            return bad("query group sizes, vocab and horizon must be positive".into());
        }
        let t = &self.train;
        if t.lambda_d < 0.0 || t.lambda_v < 0.0 || t.lambda_a < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        if t.batch == 0 {
            return bad("train.batch must be positive".into());
        }
        let s = &self.sampler;
        if s.depth_steps == 0 || s.video_steps == 0 || s.action_steps == 0 {
            return bad("sampler steps must be at least 1".into());
        }
        Ok(())
    }

    /// Small configuration sized for a single CPU core: 16×32 frames and a
    /// 32-wide backbone, keeping the default 64/64/8 query layout.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.world.frame_h = 16;
        c.world.frame_w = 32;
        c.model = ModelConfig {
            d_model: 32,
            blocks: 2,
            heads: 2,
            mlp_ratio: 2,
            patch: 8,
            depth_width: 32,
            depth_blocks: 1,
            depth_heads: 2,
            depth_patch: 4,
            video_width: 32,
            video_blocks: 1,
            video_heads: 2,
            ae_downsample: 4,
            latent_channels: 16,
            action_width: 32,
            action_blocks: 2,
            action_heads: 2,
            ..ModelConfig::default()
        };
        c.train.batch = 4;
        c.train.lr = 1e-3;
        c.sampler.depth_steps = 8;
        c.sampler.video_steps = 8;
        c.sampler.action_steps = 8;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let cfg = RunConfig::desk();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[world]\nframe_hh = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[nope]\nx = 1\n").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.nope=1").is_err());
        assert!(cfg.set("train.steps").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("train.steps=12").unwrap();
        cfg.set("train.lr=1").unwrap();
        cfg.set("train.heads=depth,action").unwrap();
        cfg.set("sampler.method=heun").unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.train.lr, 1.0);
        assert_eq!(cfg.train.heads, Heads { depth: true, video: false, action: true });
        assert_eq!(cfg.sampler.method, SolverMethod::Heun);
    }

    #[test]
    fn validation_catches_bad_patches() {
        let mut cfg = RunConfig::default();
        cfg.model.patch = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn heads_parse() {
        assert_eq!("action".parse::<Heads>().unwrap(), Heads::ACTION);
        assert_eq!("all".parse::<Heads>().unwrap(), Heads::ALL);
        assert!("".parse::<Heads>().is_err());
        assert!("wheels".parse::<Heads>().is_err());
    }
}
