use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::Trajectory;
use crate::config::{ModelConfig, WorldConfig};
use crate::flowmatch::{self, SamplerConfig};
use crate::nn::{self, BlockDims};
use crate::numerics::{AttentionMask, Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Trajectory denoiser over `T_a` state tokens `(x/s, y/s, cos, sin)`.
#[derive(Debug)]
pub struct ActionExpert {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub t_a: usize,
    pub dt: f32,
    pub traj_scale: f32,
    pub cond_dim: usize,
    evals: AtomicU64,
}

impl ActionExpert {
    pub fn new(model: &ModelConfig, world: &WorldConfig) -> Result<Self> {
        if !(model.traj_scale > 0.0) {
            return Err(Error::Input("trajectory scale must be positive".into()));
        }
        Ok(Self {
            width: model.action_width,
            blocks: model.action_blocks,
            heads: model.action_heads,
            mlp_ratio: model.mlp_ratio,
            t_a: world.t_a,
            dt: world.dt,
            traj_scale: model.traj_scale,
            cond_dim: model.d_model,
            evals: AtomicU64::new(0),
        })
    }

    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn dims(&self) -> BlockDims {
        BlockDims { width: self.width, heads: self.heads, mlp_ratio: self.mlp_ratio, cond: Some(self.cond_dim) }
    }

    pub fn init_params<T: Scalar>(&self, s: &mut ParamStore<T>) {
        nn::init_linear(s, "action.in", 4, self.width);
        s.init_uniform("action.pos", &[self.t_a, self.width], self.width);
        nn::init_time_mlp(s, "action.time", self.width);
        for i in 0..self.blocks {
            nn::init_block(s, &format!("action.blk{i}"), self.dims());
        }
        nn::init_ln(s, "action.ln_f", self.width);
        nn::init_linear(s, "action.out", self.width, 4);
    }

    pub fn denoise_vars<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        noisy: Var,
        t: f32,
        cond: Var,
    ) -> Result<Var> {
        if g.shape(noisy) != [self.t_a, 4] {
            return Err(Error::Input(format!(
                "action denoiser expects [{} x 4], got {:?}",
                self.t_a,
                g.shape(noisy)
            )));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let x = nn::linear(g, s, "action.in", noisy)?;
        let pos = g.param(s, "action.pos")?;
        let x = g.add(x, pos)?;
        let te = nn::time_embed(g, s, "action.time", t, self.width)?;
        let mut x = g.add_row(x, te)?;
        let mask = Arc::new(AttentionMask::full(self.t_a, self.t_a));
        for i in 0..self.blocks {
            x = nn::block(g, s, &format!("action.blk{i}"), self.dims(), x, &mask, Some(cond))?;
        }
        let x = nn::layer_norm(g, s, "action.ln_f", x)?;
        Ok(nn::linear(g, s, "action.out", x)?)
    }

    pub fn denoise(&self, s: &ParamStore, noisy: &Tensor, t: f32, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(noisy);
        let c = g.input(cond);
        let v = self.denoise_vars(&mut g, s, x, t, c)?;
        Ok(g.value(v).clone())
    }

    /// Samples a trajectory; every heading comes out unit length.
    pub fn generate(&self, s: &ParamStore, cond: &Tensor, cfg: SamplerConfig) -> Result<Trajectory> {
        let x = flowmatch::sample(
            |x: &Tensor, t, c: &Tensor| self.denoise(s, x, t, c),
            cond,
            &[self.t_a, 4],
            cfg,
        )?;
        Trajectory::from_tensor(&x, self.traj_scale, self.dt)
    }
}
