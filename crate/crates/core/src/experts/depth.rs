use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{denormalize_depth, DepthMap, DepthNormParams};
use crate::config::{ModelConfig, WorldConfig};
use crate::flowmatch::{self, SamplerConfig};
use crate::nn::{self, BlockDims};
use crate::numerics::{AttentionMask, Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Pixel-space depth denoiser over `P × P` patches of `[noisy depth, RGB]`.
#[derive(Debug)]
pub struct DepthExpert {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub h: usize,
    pub w: usize,
    pub cond_dim: usize,
    pub d_max: f32,
    evals: AtomicU64,
}

impl DepthExpert {
    pub fn new(model: &ModelConfig, world: &WorldConfig) -> Result<Self> {
        let p = model.depth_patch;
        if p == 0 || world.frame_h % p != 0 || world.frame_w % p != 0 {
            return Err(Error::Input(format!("depth patch {p} must divide the frame size")));
        }
        Ok(Self {
            width: model.depth_width,
            blocks: model.depth_blocks,
            heads: model.depth_heads,
            mlp_ratio: model.mlp_ratio,
            patch: p,
            h: world.frame_h,
            w: world.frame_w,
            cond_dim: model.d_model,
            d_max: world.d_max,
            evals: AtomicU64::new(0),
        })
    }

    /// Denoiser evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn n_patches(&self) -> usize {
        (self.h / self.patch) * (self.w / self.patch)
    }

    fn dims(&self) -> BlockDims {
        BlockDims { width: self.width, heads: self.heads, mlp_ratio: self.mlp_ratio, cond: Some(self.cond_dim) }
    }

    pub fn init_params<T: Scalar>(&self, s: &mut ParamStore<T>) {
        let pp = self.patch * self.patch;
        nn::init_linear(s, "depth.in", pp * 4, self.width);
        s.init_uniform("depth.pos", &[self.n_patches(), self.width], self.width);
        nn::init_time_mlp(s, "depth.time", self.width);
        for i in 0..self.blocks {
            nn::init_block(s, &format!("depth.blk{i}"), self.dims());
        }
        nn::init_ln(s, "depth.ln_f", self.width);
        nn::init_linear(s, "depth.out", self.width, pp);
    }

    /// Packs noisy depth and RGB into `[patches × P·P·4]`.
    fn tokens(&self, noisy: &[f32], rgb: &[f32]) -> Result<Tensor> {
        let n = self.h * self.w;
        if noisy.len() != n || rgb.len() != n * 3 {
            return Err(Error::Input(format!(
                "depth denoiser expects {}x{} depth and RGB, got {} and {} values",
                self.h,
                self.w,
                noisy.len(),
                rgb.len()
            )));
        }
        let mut img = Vec::with_capacity(n * 4);
        for i in 0..n {
            img.push(noisy[i]);
            img.extend_from_slice(&rgb[i * 3..i * 3 + 3]);
        }
        Ok(nn::patchify(&img, self.h, self.w, 4, self.patch))
    }

    /// Target layout used by [`Self::denoise_vars`]: `[patches × P·P]`.
    pub fn patchify_map(&self, map: &[f32]) -> Tensor {
        nn::patchify(map, self.h, self.w, 1, self.patch)
    }

    /// Predicted velocity in patch layout.
    pub fn denoise_vars<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        noisy: &[f32],
        rgb: &[f32],
        t: f32,
        cond: Var,
    ) -> Result<Var> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let x = g.input(&self.tokens(noisy, rgb)?);
        let x = nn::linear(g, s, "depth.in", x)?;
        let pos = g.param(s, "depth.pos")?;
        let x = g.add(x, pos)?;
        let te = nn::time_embed(g, s, "depth.time", t, self.width)?;
        let mut x = g.add_row(x, te)?;
        let mask = Arc::new(AttentionMask::full(self.n_patches(), self.n_patches()));
        for i in 0..self.blocks {
            x = nn::block(g, s, &format!("depth.blk{i}"), self.dims(), x, &mask, Some(cond))?;
        }
        let x = nn::layer_norm(g, s, "depth.ln_f", x)?;
        Ok(nn::linear(g, s, "depth.out", x)?)
    }

    /// Velocity for a noisy normalized map `[H × W]` given RGB `[H × W × 3]`.
    pub fn denoise(&self, s: &ParamStore, noisy: &Tensor, rgb: &[f32], t: f32, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let c = g.input(cond);
        let v = self.denoise_vars(&mut g, s, noisy.data(), rgb, t, c)?;
        let out = nn::unpatchify(g.value(v).data(), self.h, self.w, 1, self.patch);
        Ok(Tensor::new(&[self.h, self.w], out)?)
    }

    /// Samples a normalized map, clamps it to `[-0.5, 0.5]`, and maps it back
    /// to meters with dataset-level bounds, clipped to `(0, d_max]`.
    pub fn generate(
        &self,
        s: &ParamStore,
        rgb: &[f32],
        cond: &Tensor,
        norm: &DepthNormParams,
        cfg: SamplerConfig,
    ) -> Result<DepthMap> {
        let x = flowmatch::sample(
            |x: &Tensor, t, c: &Tensor| self.denoise(s, x, rgb, t, c),
            cond,
            &[self.h, self.w],
            cfg,
        )?;
        let x = x.map(|v| v.clamp(-0.5, 0.5));
        let mut d = denormalize_depth(&x, norm);
        for v in &mut d.data {
            *v = v.clamp(f32::MIN_POSITIVE, self.d_max);
        }
        Ok(d)
    }
}
