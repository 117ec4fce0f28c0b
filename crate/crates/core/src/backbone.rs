//! Query-bottleneck transformer. Inputs (instruction, image patches, past ego
//! states) are followed by three groups of learned query tokens; a
//! group-causal mask lets depth queries read the inputs, video queries also
//! read depth queries, and action queries read everything.

use std::sync::Arc;

use crate::config::{ModelConfig, WorldConfig};
use crate::experts::{FrameSequence, Trajectory};
use crate::nn::{self, BlockDims};
use crate::numerics::{AttentionMask, Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Token-stream geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryLayout {
    pub n_input: usize,
    pub n_depth: usize,
    pub n_video: usize,
    pub n_action: usize,
    pub d_model: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    Input,
    Depth,
    Video,
    Action,
}

impl QueryLayout {
    pub fn new(n_input: usize, n_depth: usize, n_video: usize, n_action: usize, d_model: usize) -> Result<Self> {
        if [n_input, n_depth, n_video, n_action, d_model].contains(&0) {
            return Err(Error::Input("query layout counts must all be at least 1".into()));
        }
        Ok(Self { n_input, n_depth, n_video, n_action, d_model })
    }

    pub fn total(&self) -> usize {
        self.n_input + self.n_depth + self.n_video + self.n_action
    }

    pub fn depth_offset(&self) -> usize {
        self.n_input
    }

    pub fn video_offset(&self) -> usize {
        self.n_input + self.n_depth
    }

    pub fn action_offset(&self) -> usize {
        self.n_input + self.n_depth + self.n_video
    }

    pub fn group_of(&self, row: usize) -> Group {
        if row < self.depth_offset() {
            Group::Input
        } else if row < self.video_offset() {
            Group::Depth
        } else if row < self.action_offset() {
            Group::Video
        } else {
            Group::Action
        }
    }
}

/// Inputs see only inputs; each query group sees the inputs, every earlier
/// group, and all of its own group.
pub fn build_group_mask(layout: &QueryLayout) -> AttentionMask {
    let n = layout.total();
    AttentionMask::from_fn(n, n, |i, j| {
        let (gi, gj) = (layout.group_of(i), layout.group_of(j));
        match gi {
            Group::Input => gj == Group::Input,
            _ => gj <= gi,
        }
    })
}

/// Tokens before the first transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub tokens: Tensor,
    pub layout: QueryLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldEmbeddings {
    pub depth_emb: Tensor,
    pub video_emb: Tensor,
    pub action_emb: Tensor,
}

/// Graph handles to the three embedding groups.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    pub depth: Var,
    pub video: Var,
    pub action: Var,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub vocab: usize,
    pub views: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub h_ctx: usize,
    pub traj_scale: f32,
    layout: QueryLayout,
    mask: Arc<AttentionMask>,
}

impl Backbone {
    pub fn new(model: &ModelConfig, world: &WorldConfig) -> Result<Self> {
        let p = model.patch;
        if p == 0 || world.frame_h % p != 0 || world.frame_w % p != 0 {
            return Err(Error::Input(format!(
                "frame {}x{} not divisible by patch {p}",
                world.frame_h, world.frame_w
            )));
        }
        let n_patches = (world.frame_h / p) * (world.frame_w / p);
        let layout = QueryLayout::new(
            1 + world.views * n_patches + world.h_ctx,
            model.n_depth,
            model.n_video,
            model.n_action,
            model.d_model,
        )?;
        Ok(Self {
            d_model: model.d_model,
            blocks: model.blocks,
            heads: model.heads,
            mlp_ratio: model.mlp_ratio,
            patch: p,
            vocab: model.vocab,
            views: world.views,
            frame_h: world.frame_h,
            frame_w: world.frame_w,
            h_ctx: world.h_ctx,
            traj_scale: model.traj_scale,
            mask: Arc::new(build_group_mask(&layout)),
            layout,
        })
    }

    pub fn layout(&self) -> QueryLayout {
        self.layout
    }

    pub fn mask(&self) -> &Arc<AttentionMask> {
        &self.mask
    }

    fn n_patches(&self) -> usize {
        (self.frame_h / self.patch) * (self.frame_w / self.patch)
    }

    fn block_dims(&self) -> BlockDims {
        BlockDims { width: self.d_model, heads: self.heads, mlp_ratio: self.mlp_ratio, cond: None }
    }

    pub fn init_params<T: Scalar>(&self, s: &mut ParamStore<T>) {
        let d = self.d_model;
        let pp = self.patch * self.patch * 3;
        s.init_uniform("bb.text", &[self.vocab, d], 1);
        nn::init_linear(s, "bb.patch", pp, d);
        s.init_uniform("bb.pos", &[self.n_patches(), d], d);
        if self.views > 1 {
            s.init_uniform("bb.view", &[self.views, d], d);
        }
        nn::init_linear(s, "bb.act.0", 4, d);
        nn::init_ln(s, "bb.act.ln", d);
        nn::init_linear(s, "bb.act.1", d, d);
        s.init_uniform("bb.act.pos", &[self.h_ctx, d], d);
        s.init_uniform("bb.q.depth", &[self.layout.n_depth, d], 1);
        s.init_uniform("bb.q.video", &[self.layout.n_video, d], 1);
        s.init_uniform("bb.q.action", &[self.layout.n_action, d], 1);
        for i in 0..self.blocks {
            nn::init_block(s, &format!("bb.blk{i}"), self.block_dims());
        }
    }

    fn check_inputs(&self, instruction: usize, frames: &FrameSequence, ctx: &Trajectory) -> Result<()> {
        if instruction >= self.vocab {
            return Err(Error::Input(format!("instruction {instruction} outside vocabulary of {}", self.vocab)));
        }
        if frames.h != self.frame_h || frames.w != self.frame_w || frames.frames != self.views {
            return Err(Error::Input(format!(
                "expected {} view(s) of {}x{}, got {} of {}x{}",
                self.views, self.frame_h, self.frame_w, frames.frames, frames.h, frames.w
            )));
        }
        if ctx.len() != self.h_ctx {
            return Err(Error::Input(format!("action context has {} states, expected {}", ctx.len(), self.h_ctx)));
        }
        Ok(())
    }

    /// Builds the full pre-transformer token stream on `g`.
    pub fn encode_vars<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        instruction: usize,
        frames: &FrameSequence,
        ctx: &Trajectory,
    ) -> Result<Var> {
        self.check_inputs(instruction, frames, ctx)?;
        let table = g.param(s, "bb.text")?;
        let text = g.gather(table, &[instruction])?;
        let mut parts = vec![text];
        let pos = g.param(s, "bb.pos")?;
        for view in 0..self.views {
            let patches = nn::patchify(frames.frame(view), self.frame_h, self.frame_w, 3, self.patch);
            let x = g.input(&patches);
            let x = nn::linear(g, s, "bb.patch", x)?;
            let mut x = g.add(x, pos)?;
            if self.views > 1 {
                let vt = g.param(s, "bb.view")?;
                let row = g.gather(vt, &[view])?;
                x = g.add_row(x, row)?;
            }
            parts.push(x);
        }
        let a = g.input(&ctx.to_tensor(self.traj_scale));
        let a = nn::linear(g, s, "bb.act.0", a)?;
        let a = nn::layer_norm(g, s, "bb.act.ln", a)?;
        let a = g.gelu(a);
        let a = nn::linear(g, s, "bb.act.1", a)?;
        let apos = g.param(s, "bb.act.pos")?;
        parts.push(g.add(a, apos)?);
        for q in ["bb.q.depth", "bb.q.video", "bb.q.action"] {
            parts.push(g.param(s, q)?);
        }
        Ok(g.concat_rows(&parts)?)
    }

    /// Runs the masked blocks over a stream built by [`Self::encode_vars`].
    pub fn forward_vars<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        stream: Var,
        mask: &Arc<AttentionMask>,
    ) -> Result<EmbeddingVars> {
        let l = self.layout;
        if g.shape(stream) != [l.total(), l.d_model] || mask.rows() != l.total() || mask.cols() != l.total() {
            return Err(Error::Input(format!(
                "stream {:?} / mask {}x{} do not match layout of {} tokens",
                g.shape(stream),
                mask.rows(),
                mask.cols(),
                l.total()
            )));
        }
        let mut x = stream;
        for i in 0..self.blocks {
            x = nn::block(g, s, &format!("bb.blk{i}"), self.block_dims(), x, mask, None)?;
        }
        Ok(EmbeddingVars {
            depth: g.slice_rows(x, l.depth_offset(), l.n_depth)?,
            video: g.slice_rows(x, l.video_offset(), l.n_video)?,
            action: g.slice_rows(x, l.action_offset(), l.n_action)?,
        })
    }

    pub fn encode_inputs(
        &self,
        s: &ParamStore,
        instruction: usize,
        frames: &FrameSequence,
        ctx: &Trajectory,
    ) -> Result<TokenStream> {
        let mut g = Graph::new();
        let v = self.encode_vars(&mut g, s, instruction, frames, ctx)?;
        Ok(TokenStream { tokens: g.value(v).clone(), layout: self.layout })
    }

    pub fn forward(&self, stream: &TokenStream, mask: &AttentionMask, s: &ParamStore) -> Result<WorldEmbeddings> {
        if stream.layout != self.layout {
            return Err(Error::Input("token stream layout differs from the backbone".into()));
        }
        let mut g = Graph::new();
        let x = g.input(&stream.tokens);
        let mask = Arc::new(mask.clone());
        let e = self.forward_vars(&mut g, s, x, &mask)?;
        Ok(WorldEmbeddings {
            depth_emb: g.value(e.depth).clone(),
            video_emb: g.value(e.video).clone(),
            action_emb: g.value(e.action).clone(),
        })
    }

    /// Encode and run in one go.
    pub fn embed(
        &self,
        s: &ParamStore,
        instruction: usize,
        frames: &FrameSequence,
        ctx: &Trajectory,
    ) -> Result<WorldEmbeddings> {
        let mut g = Graph::new();
        let x = self.encode_vars(&mut g, s, instruction, frames, ctx)?;
        let mask = self.mask.clone();
        let e = self.forward_vars(&mut g, s, x, &mask)?;
        Ok(WorldEmbeddings {
            depth_emb: g.value(e.depth).clone(),
            video_emb: g.value(e.video).clone(),
            action_emb: g.value(e.action).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_layout_mask() {
        let l = QueryLayout::new(2, 1, 1, 1, 4).unwrap();
        let rows: Vec<String> = build_group_mask(&l)
            .to_rows()
            .iter()
            .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        assert_eq!(rows, ["11000", "11000", "11100", "11110", "11111"]);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(QueryLayout::new(1, 0, 1, 1, 4).is_err());
    }

    #[test]
    fn offsets() {
        let l = QueryLayout::new(5, 64, 64, 8, 16).unwrap();
        assert_eq!((l.depth_offset(), l.video_offset(), l.action_offset(), l.total()), (5, 69, 133, 141));
    }
}
