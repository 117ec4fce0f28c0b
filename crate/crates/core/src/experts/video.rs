use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{FrameSequence, VideoLatent};
use crate::config::{ModelConfig, VideoContext, WorldConfig};
use crate::flowmatch::{self, SamplerConfig};
use crate::nn::{self, BlockDims};
use crate::numerics::{AttentionMask, Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Future-frame generator working on patch-autoencoder latents.
///
/// Tokens are the clean current-frame latent followed by `horizon` noisy
/// future latents (or, with [`VideoContext::Concat`], only the noisy ones
/// with the current latent folded in); only the noisy ones are denoised.
/// The condition is the video embedding with one extra row from the visual
/// condition projector.
#[derive(Debug)]
pub struct VideoExpert {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub channels: usize,
    pub horizon: usize,
    pub temporal_pos: bool,
    pub residual: bool,
    pub latent_scale: f32,
    pub context: VideoContext,
    pub patch: usize,
    pub cond_dim: usize,
    evals: AtomicU64,
}

impl VideoExpert {
    pub fn new(model: &ModelConfig, world: &WorldConfig) -> Result<Self> {
        let s = model.ae_downsample;
        if s == 0 || world.frame_h % s != 0 || world.frame_w % s != 0 {
            return Err(Error::Input(format!("autoencoder stride {s} must divide the frame size")));
        }
        Ok(Self {
            width: model.video_width,
            blocks: model.video_blocks,
            heads: model.video_heads,
            mlp_ratio: model.mlp_ratio,
            h: world.frame_h,
            w: world.frame_w,
            stride: s,
            channels: model.latent_channels,
            horizon: model.horizon,
            temporal_pos: model.video_temporal_pos,
            residual: model.video_residual,
            latent_scale: model.video_latent_scale,
            context: model.video_context,
            patch: model.patch,
            cond_dim: model.d_model,
            evals: AtomicU64::new(0),
        })
    }

    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    /// Latent grid `(h, w)`.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.h / self.stride, self.w / self.stride)
    }

    fn cells(&self) -> usize {
        let (h, w) = self.latent_hw();
        h * w
    }

    fn dims(&self) -> BlockDims {
        BlockDims { width: self.width, heads: self.heads, mlp_ratio: self.mlp_ratio, cond: Some(self.cond_dim) }
    }

    pub fn init_params<T: Scalar>(&self, s: &mut ParamStore<T>) {
        let ss = self.stride * self.stride * 3;
        nn::init_linear(s, "video.ae.enc", ss, self.channels);
        nn::init_linear(s, "video.ae.dec", self.channels, ss);
        nn::init_linear(s, "video.vis.patch", self.patch * self.patch * 3, self.cond_dim);
        nn::init_linear(s, "video.vis.0", self.cond_dim, self.cond_dim);
        nn::init_linear(s, "video.vis.1", self.cond_dim, self.cond_dim);
        nn::init_linear(s, "video.in", self.channels, self.width);
        let frames = match self.context {
            VideoContext::Prepend => {
                nn::init_linear(s, "video.ctx", self.channels, self.width);
                self.horizon + 1
            }
            VideoContext::Concat => {
                s.init_uniform("video.ctx.w", &[self.channels, self.width], self.channels);
                self.horizon
            }
        };
        s.init_uniform("video.spos", &[self.cells(), self.width], self.width);
        if self.temporal_pos {
            s.init_uniform("video.tpos", &[frames, self.width], self.width);
        }
        nn::init_time_mlp(s, "video.time", self.width);
        for i in 0..self.blocks {
            nn::init_block(s, &format!("video.blk{i}"), self.dims());
        }
        nn::init_ln(s, "video.ln_f", self.width);
        nn::init_linear(s, "video.out", self.width, self.channels);
    }

    /// Frames in autoencoder patch layout, `[frames·cells × s·s·3]`.
    pub fn frame_patches(&self, frames: &[&[f32]]) -> Result<Tensor> {
        let n = self.h * self.w * 3;
        let mut data = Vec::with_capacity(frames.len() * n);
        for f in frames {
            if f.len() != n {
                return Err(Error::Input(format!("frame has {} values, expected {n}", f.len())));
            }
            data.extend_from_slice(nn::patchify(f, self.h, self.w, 3, self.stride).data());
        }
        Ok(Tensor::new(&[frames.len() * self.cells(), self.stride * self.stride * 3], data)?)
    }

    /// Latents `[frames·cells × c]` in `(-1, 1)`.
    pub fn encode_vars<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, frames: &[&[f32]]) -> Result<Var> {
        let x = g.input(&self.frame_patches(frames)?);
        let z = nn::linear(g, s, "video.ae.enc", x)?;
        Ok(g.tanh(z))
    }

    /// Reconstruction in autoencoder patch layout.
    pub fn decode_vars<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, z: Var) -> Result<Var> {
        Ok(nn::linear(g, s, "video.ae.dec", z)?)
    }

    pub fn encode_frames(&self, s: &ParamStore, frames: &FrameSequence) -> Result<VideoLatent> {
        let views: Vec<&[f32]> = (0..frames.frames).map(|i| frames.frame(i)).collect();
        let mut g = Graph::new();
        let z = self.encode_vars(&mut g, s, &views)?;
        let (h, w) = self.latent_hw();
        VideoLatent::from_tensor(g.value(z), frames.frames, h, w)
    }

    /// Decoded frames, clamped to `[0, 1]`.
    pub fn decode_latents(&self, s: &ParamStore, z: &VideoLatent) -> Result<FrameSequence> {
        if z.c != self.channels || (z.h, z.w) != self.latent_hw() {
            return Err(Error::Input("latent shape does not match the autoencoder".into()));
        }
        let mut g = Graph::new();
        let zv = g.input(&z.to_tensor());
        let x = self.decode_vars(&mut g, s, zv)?;
        let per = self.cells() * self.stride * self.stride * 3;
        let mut data = Vec::with_capacity(z.t * self.h * self.w * 3);
        for chunk in g.value(x).data().chunks(per) {
            data.extend(nn::unpatchify(chunk, self.h, self.w, 3, self.stride).into_iter().map(|v| v.clamp(0.0, 1.0)));
        }
        FrameSequence::new(z.t, self.h, self.w, data)
    }

    /// Mean-pooled patch embedding through a two-layer projector, `[1 × d_cond]`.
    pub fn visual_condition_vars<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, frame: &[f32]) -> Result<Var> {
        if frame.len() != self.h * self.w * 3 {
            return Err(Error::Input("visual condition frame has the wrong size".into()));
        }
        let x = g.input(&nn::patchify(frame, self.h, self.w, 3, self.patch));
        let x = nn::linear(g, s, "video.vis.patch", x)?;
        let x = g.mean_rows(x);
        let x = nn::linear(g, s, "video.vis.0", x)?;
        let x = g.gelu(x);
        Ok(nn::linear(g, s, "video.vis.1", x)?)
    }

    pub fn visual_condition(&self, s: &ParamStore, frame: &[f32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.visual_condition_vars(&mut g, s, frame)?;
        Ok(g.value(v).clone().reshape(&[self.cond_dim])?)
    }

    /// Velocity over the noisy future latents `[horizon·cells × c]`.
    pub fn denoise_vars<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        noisy: Var,
        current: Var,
        t: f32,
        cond: Var,
    ) -> Result<Var> {
        let cells = self.cells();
        if g.shape(noisy) != [self.horizon * cells, self.channels] || g.shape(current) != [cells, self.channels] {
            return Err(Error::Input(format!(
                "video denoiser expects {}x{} noisy and {}x{} current latents",
                self.horizon * cells,
                self.channels,
                cells,
                self.channels
            )));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let x = nn::linear(g, s, "video.in", noisy)?;
        let (x, frames, ctx_rows) = match self.context {
            VideoContext::Prepend => {
                let c = nn::linear(g, s, "video.ctx", current)?;
                (g.concat_rows(&[c, x])?, self.horizon + 1, cells)
            }
            VideoContext::Concat => {
                let wc = g.param(s, "video.ctx.w")?;
                let c = g.matmul(current, wc)?;
                let c = g.concat_rows(&vec![c; self.horizon])?;
                (g.add(x, c)?, self.horizon, 0)
            }
        };
        let spos = g.param(s, "video.spos")?;
        let spos = g.concat_rows(&vec![spos; frames])?;
        let mut x = g.add(x, spos)?;
        if self.temporal_pos {
            let table = g.param(s, "video.tpos")?;
            let idx: Vec<usize> = (0..frames).flat_map(|k| std::iter::repeat(k).take(cells)).collect();
            let tpos = g.gather(table, &idx)?;
            x = g.add(x, tpos)?;
        }
        let te = nn::time_embed(g, s, "video.time", t, self.width)?;
        let mut x = g.add_row(x, te)?;
        let n = frames * cells;
        let mask = Arc::new(AttentionMask::full(n, n));
        for i in 0..self.blocks {
            x = nn::block(g, s, &format!("video.blk{i}"), self.dims(), x, &mask, Some(cond))?;
        }
        let x = g.slice_rows(x, ctx_rows, n - ctx_rows)?;
        let x = nn::layer_norm(g, s, "video.ln_f", x)?;
        let out = nn::linear(g, s, "video.out", x)?;
        let skip = g.scale(noisy, crate::flowmatch::skip_coefficient(t, 1.0));
        Ok(g.add(out, skip)?)
    }

    /// `video_emb ⊕ visual_condition` as one key/value matrix.
    pub fn condition(&self, s: &ParamStore, video_emb: &Tensor, frame: &[f32]) -> Result<Tensor> {
        let vis = self.visual_condition(s, frame)?;
        let mut data = video_emb.data().to_vec();
        data.extend_from_slice(vis.data());
        Ok(Tensor::new(&[video_emb.rows_cols().0 + 1, self.cond_dim], data)?)
    }

    pub fn denoise(
        &self,
        s: &ParamStore,
        noisy: &VideoLatent,
        current: &VideoLatent,
        t: f32,
        cond: &Tensor,
    ) -> Result<VideoLatent> {
        let mut g = Graph::new();
        let nv = g.input(&noisy.to_tensor());
        let cv = g.input(&current.to_tensor());
        let c = g.input(cond);
        let v = self.denoise_vars(&mut g, s, nv, cv, t, c)?;
        VideoLatent::from_tensor(g.value(v), noisy.t, noisy.h, noisy.w)
    }

    /// Samples `horizon` future latents and decodes them.
    pub fn generate(
        &self,
        s: &ParamStore,
        current_frame: &[f32],
        video_emb: &Tensor,
        cfg: SamplerConfig,
    ) -> Result<FrameSequence> {
        let cur = FrameSequence::new(1, self.h, self.w, current_frame.to_vec())?;
        let current = self.encode_frames(s, &cur)?;
        let cond = self.condition(s, video_emb, current_frame)?;
        let (h, w) = self.latent_hw();
        let horizon = self.horizon;
        let z = flowmatch::sample(
            |x: &Tensor, t, c: &Tensor| {
                let noisy = VideoLatent::from_tensor(x, horizon, h, w)?;
                Ok(self.denoise(s, &noisy, &current, t, c)?.to_tensor())
            },
            &cond,
            &[horizon * h * w, self.channels],
            cfg,
        )?;
        let mut z = VideoLatent::from_tensor(&z, horizon, h, w)?;
        let per = current.data.len();
        for (i, v) in z.data.iter_mut().enumerate() {
            *v /= self.latent_scale;
            if self.residual {
                *v += current.data[i % per];
            }
        }
        self.decode_latents(s, &z)
    }

    /// Flow-matching data sample for future latents `future` given the
    /// current-frame latent, both as `[cells·frames × c]` rows.
    pub fn target_latents(&self, current: &Tensor, future: &Tensor) -> Result<Tensor> {
        let per = current.len();
        if per == 0 || future.len() % per != 0 {
            return Err(Error::Input("future latents are not a whole number of frames".into()));
        }
        let base = |i: usize| if self.residual { current.data()[i % per] } else { 0.0 };
        let data = future.data().iter().enumerate().map(|(i, v)| (v - base(i)) * self.latent_scale).collect();
        Ok(Tensor::new(future.shape(), data)?)
    }
}
