//! The assembled world–action model: backbone, three experts, one parameter store.

use crate::backbone::{Backbone, WorldEmbeddings};
use crate::config::{Heads, ModelConfig, RunConfig, WorldConfig};
use crate::experts::{ActionExpert, DepthExpert, DepthMap, DepthNormParams, FrameSequence, Trajectory, VideoExpert};
use crate::flowmatch::SamplerConfig;
use crate::microworld::EpisodeRecord;
use crate::numerics::ParamStore;
use crate::{Error, Result};

/// Denoiser evaluation counts per expert.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub depth: u64,
    pub video: u64,
    pub action: u64,
}

#[derive(Debug)]
pub struct WorldActionModel {
    pub world: WorldConfig,
    pub config: ModelConfig,
    /// Experts whose parameters exist in this model.
    pub heads: Heads,
    pub backbone: Backbone,
    pub depth: DepthExpert,
    pub video: VideoExpert,
    pub action: ActionExpert,
    pub params: ParamStore,
    /// Dataset-level bounds used to map generated depth back to meters.
    pub depth_norm: DepthNormParams,
}

impl WorldActionModel {
    /// Fresh model; parameters of disabled experts are not created.
    pub fn new(world: &WorldConfig, config: &ModelConfig, heads: Heads, seed: u64) -> Result<Self> {
        let backbone = Backbone::new(config, world)?;
        let depth = DepthExpert::new(config, world)?;
        let video = VideoExpert::new(config, world)?;
        let action = ActionExpert::new(config, world)?;
        if heads.video && config.horizon > world.t_a {
            return Err(Error::Config(format!(
                "video horizon {} exceeds trajectory length {}",
                config.horizon, world.t_a
            )));
        }
        let mut params = ParamStore::new(seed);
        backbone.init_params(&mut params);
        if heads.depth {
            depth.init_params(&mut params);
        }
        if heads.video {
            video.init_params(&mut params);
        }
        if heads.action {
            action.init_params(&mut params);
        }
        let depth_norm = DepthNormParams {
            log_lo: 0.0,
            log_hi: world.d_max.ln(),
            p_low: world.depth_p_low,
            p_high: world.depth_p_high,
            degenerate: false,
        };
        Ok(Self {
            world: world.clone(),
            config: config.clone(),
            heads,
            backbone,
            depth,
            video,
            action,
            params,
            depth_norm,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(&cfg.world, &cfg.model, cfg.train.heads, cfg.train.seed)
    }

    pub fn counters(&self) -> EvalCounts {
        EvalCounts {
            depth: self.depth.evaluations(),
            video: self.video.evaluations(),
            action: self.action.evaluations(),
        }
    }

    fn require(&self, enabled: bool, name: &str) -> Result<()> {
        if enabled {
            Ok(())
        } else {
            Err(Error::Config(format!("this model was built without the {name} expert")))
        }
    }

    pub fn embed(&self, rec: &EpisodeRecord) -> Result<WorldEmbeddings> {
        self.backbone.embed(&self.params, rec.instruction as usize, &rec.frames, &rec.action_ctx)
    }

    /// Planning-only path: backbone plus the action expert.
    pub fn plan(&self, rec: &EpisodeRecord, cfg: SamplerConfig) -> Result<Trajectory> {
        self.require(self.heads.action, "action")?;
        let e = self.embed(rec)?;
        self.action.generate(&self.params, &e.action_emb, cfg)
    }

    pub fn predict_depth(&self, rec: &EpisodeRecord, cfg: SamplerConfig) -> Result<DepthMap> {
        self.require(self.heads.depth, "depth")?;
        let e = self.embed(rec)?;
        self.depth.generate(&self.params, rec.front_frame(), &e.depth_emb, &self.depth_norm, cfg)
    }

    pub fn predict_video(&self, rec: &EpisodeRecord, cfg: SamplerConfig) -> Result<FrameSequence> {
        self.require(self.heads.video, "video")?;
        let e = self.embed(rec)?;
        self.video.generate(&self.params, rec.front_frame(), &e.video_emb, cfg)
    }
}
