//! Joint single-stage training with the weighted sum of the three
//! flow-matching losses, checkpoints, and the ablation matrix.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Heads, RunConfig};
use crate::experts::{normalize_depth, DepthNormParams, FrameSequence};
use crate::flowmatch::{interpolate, standard_normal};
use crate::metrics::{evaluate_split, EvalOptions, Report, Which};
use crate::microworld::{CameraConfig, EpisodeRecord};
use crate::model::WorldActionModel;
use crate::numerics::{Graph, Tensor, Var};
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig};
use crate::{mix_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub l_d: f32,
    pub l_v: f32,
    pub l_a: f32,
    pub l_total: f32,
}

impl LossReport {
    pub fn log_line(&self) -> String {
        format!("step={} Ld={:.6} Lv={:.6} La={:.6} Ltotal={:.6}", self.step, self.l_d, self.l_v, self.l_a, self.l_total)
    }

    pub fn parse_line(line: &str) -> Result<LossReport> {
        let mut f = [None::<&str>; 5];
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad log token `{tok}`")))?;
            let slot = match k {
                "step" => 0,
                "Ld" => 1,
                "Lv" => 2,
                "La" => 3,
                "Ltotal" => 4,
                _ => return Err(Error::Format(format!("unknown log key `{k}`"))),
            };
            f[slot] = Some(v);
        }
        let num = |i: usize| -> Result<f32> {
            f[i].ok_or_else(|| Error::Format("missing log field".into()))?
                .parse()
                .map_err(|_| Error::Format(format!("bad number in `{line}`")))
        };
        Ok(LossReport {
            step: f[0].ok_or_else(|| Error::Format("missing step".into()))?.parse().map_err(|_| Error::Format("bad step".into()))?,
            l_d: num(1)?,
            l_v: num(2)?,
            l_a: num(3)?,
            l_total: num(4)?,
        })
    }
}

/// Weighted sum of the three expert losses.
pub fn combine_losses(lambda: (f32, f32, f32), l_d: f32, l_v: f32, l_a: f32) -> f32 {
    lambda.0 * l_d + lambda.1 * l_v + lambda.2 * l_a
}

/// Per-sample losses as graph nodes plus their values.
struct SampleLoss {
    total: Var,
    l_d: f32,
    l_v: f32,
    l_a: f32,
}

/// Builds the loss graph for one episode.
fn sample_loss(
    model: &WorldActionModel,
    cfg: &RunConfig,
    g: &mut Graph,
    rec: &EpisodeRecord,
    future: Option<&FrameSequence>,
    seed: u64,
) -> Result<SampleLoss> {
    let heads = cfg.train.heads;
    let s = &model.params;
    let bb = &model.backbone;
    let stream = bb.encode_vars(g, s, rec.instruction as usize, &rec.frames, &rec.action_ctx)?;
    let mut emb = bb.forward_vars(g, s, stream, bb.mask())?;
    if cfg.train.stop_gradient {
        emb.depth = g.detach(emb.depth);
        emb.video = g.detach(emb.video);
        emb.action = g.detach(emb.action);
    }
    let mut terms: Vec<Var> = Vec::new();
    let (mut l_d, mut l_v, mut l_a) = (0.0, 0.0, 0.0);

    if heads.depth {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1]));
        let (n, _) = normalize_depth(&rec.depth_map(0), cfg.world.depth_p_low, cfg.world.depth_p_high)?;
        let t: f32 = rng.gen();
        let x1 = standard_normal(n.shape(), &mut rng);
        let fs = interpolate(&n, &x1, t)?;
        let v = model.depth.denoise_vars(g, s, fs.xt.data(), rec.front_frame(), t, emb.depth)?;
        let target = model.depth.patchify_map(fs.v_target.data());
        let l = g.mse(v, &target)?;
        l_d = g.value(l).data()[0];
        terms.push(g.scale(l, cfg.train.lambda_d));
    }

    if heads.video {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2]));
        let future = future.ok_or_else(|| Error::Input("video head needs future frames".into()))?;
        let video = &model.video;
        let mut all: Vec<&[f32]> = vec![rec.front_frame()];
        all.extend((0..future.frames).map(|i| future.frame(i)));
        let z = video.encode_vars(g, s, &all)?;
        let recon = video.decode_vars(g, s, z)?;
        let recon_loss = g.mse(recon, &video.frame_patches(&all)?)?;
        let cells = {
            let (h, w) = video.latent_hw();
            h * w
        };
        let zv = g.value(z).clone();
        let c = video.channels;
        let current = Tensor::new(&[cells, c], zv.data()[..cells * c].to_vec())?;
        let x0 = video.target_latents(&current, &Tensor::new(&[future.frames * cells, c], zv.data()[cells * c..].to_vec())?)?;
        let t: f32 = rng.gen();
        let x1 = standard_normal(x0.shape(), &mut rng);
        let fs = interpolate(&x0, &x1, t)?;
        let noisy = g.input(&fs.xt);
        let ctx = g.constant(current);
        let vis = video.visual_condition_vars(g, s, rec.front_frame())?;
        let cond = g.concat_rows(&[emb.video, vis])?;
        let v = video.denoise_vars(g, s, noisy, ctx, t, cond)?;
        let fm = g.mse(v, &fs.v_target)?;
        let rw = g.scale(recon_loss, cfg.train.recon_weight);
        let l = g.add(fm, rw)?;
        l_v = g.value(l).data()[0];
        terms.push(g.scale(l, cfg.train.lambda_v));
    }

    if heads.action {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
        let x0 = rec.expert.to_tensor(model.config.traj_scale);
        let t: f32 = rng.gen();
        let x1 = standard_normal(x0.shape(), &mut rng);
        let fs = interpolate(&x0, &x1, t)?;
        let noisy = g.input(&fs.xt);
        let v = model.action.denoise_vars(g, s, noisy, t, emb.action)?;
        let l = g.mse(v, &fs.v_target)?;
        l_a = g.value(l).data()[0];
        terms.push(g.scale(l, cfg.train.lambda_a));
    }

    let mut total = *terms.first().ok_or_else(|| Error::Config("no heads enabled".into()))?;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(SampleLoss { total, l_d, l_v, l_a })
}

/// Dataset-level depth bounds: median of per-map percentile bounds.
pub fn dataset_depth_norm(cfg: &RunConfig, data: &[EpisodeRecord]) -> Result<DepthNormParams> {
    let per: Vec<DepthNormParams> = data
        .iter()
        .map(|r| normalize_depth(&r.depth_map(0), cfg.world.depth_p_low, cfg.world.depth_p_high).map(|x| x.1))
        .collect::<Result<_>>()?;
    DepthNormParams::aggregate(&per)
}

pub struct Trainer<'a> {
    pub cfg: RunConfig,
    pub model: WorldActionModel,
    pub opt: AdamW,
    pub step: usize,
    pub log: Vec<LossReport>,
    data: &'a [EpisodeRecord],
    cam: CameraConfig,
    future: Vec<Option<FrameSequence>>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &RunConfig, data: &'a [EpisodeRecord]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Input("training data is empty".into()));
        }
        let mut model = WorldActionModel::from_config(cfg)?;
        model.depth_norm = dataset_depth_norm(cfg, data)?;
        let opt = AdamW::new(adamw_config(cfg), &model.params);
        Ok(Self::assemble(cfg, model, opt, 0, data))
    }

    fn assemble(cfg: &RunConfig, model: WorldActionModel, opt: AdamW, step: usize, data: &'a [EpisodeRecord]) -> Self {
        Self {
            cfg: cfg.clone(),
            model,
            opt,
            step,
            log: Vec::new(),
            data,
            cam: CameraConfig::from_world(&cfg.world),
            future: vec![None; data.len()],
        }
    }

    /// Continues from a checkpoint; the loss curve matches an uninterrupted run.
    pub fn resume(ck: Checkpoint, data: &'a [EpisodeRecord]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("training data is empty".into()));
        }
        let Checkpoint { config, model, opt, step } = ck;
        Ok(Self::assemble(&config, model, opt, step, data))
    }

    /// Episode indices for a step: consecutive slices of a per-epoch shuffle.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.data.len();
        let b = self.cfg.train.batch;
        (0..b)
            .map(|k| {
                let pos = step * b + k;
                let (epoch, off) = (pos / n, pos % n);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[self.cfg.train.seed, epoch as u64])));
                perm[off]
            })
            .collect()
    }

    fn future_frames(&mut self, i: usize) -> Result<()> {
        if self.cfg.train.heads.video && self.future[i].is_none() {
            self.future[i] = Some(self.data[i].future_frames(&self.cam, self.model.config.horizon)?);
        }
        Ok(())
    }

    /// One optimizer update on one batch.
    pub fn step(&mut self) -> Result<LossReport> {
        let idx = self.batch_indices(self.step);
        self.model.params.zero_grad();
        let (mut ld, mut lv, mut la) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &i) in idx.iter().enumerate() {
            self.future_frames(i)?;
            let seed = mix_seed(&[self.cfg.train.seed, self.step as u64, k as u64]);
            let mut g = Graph::new();
            let sl = sample_loss(&self.model, &self.cfg, &mut g, &self.data[i], self.future[i].as_ref(), seed)?;
            for (name, v) in [("depth", sl.l_d), ("video", sl.l_v), ("action", sl.l_a)] {
                if !v.is_finite() {
                    return Err(Error::Numeric { step: self.step, context: format!("{name} loss is {v}") });
                }
            }
            g.backward(sl.total, &mut self.model.params)?;
            ld += sl.l_d as f64;
            lv += sl.l_v as f64;
            la += sl.l_a as f64;
        }
        let b = idx.len() as f32;
        self.model.params.scale_grads(1.0 / b);
        let norm = clip_grad_norm(&mut self.model.params, self.cfg.train.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Numeric { step: self.step, context: "non-finite gradient".into() });
        }
        self.opt.step(&mut self.model.params);
        let t = &self.cfg.train;
        let (l_d, l_v, l_a) = ((ld / b as f64) as f32, (lv / b as f64) as f32, (la / b as f64) as f32);
        let rep = LossReport {
            step: self.step,
            l_d,
            l_v,
            l_a,
            l_total: combine_losses((t.lambda_d, t.lambda_v, t.lambda_a), l_d, l_v, l_a),
        };
        self.step += 1;
        self.log.push(rep);
        Ok(rep)
    }

    /// Runs until `cfg.train.steps`, calling `on_step` after each update.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &LossReport) -> Result<()>) -> Result<()> {
        while self.step < self.cfg.train.steps {
            let r = self.step()?;
            on_step(self, &r)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            model: clone_model(&self.model).expect("model rebuilds from its own config"),
            opt: self.opt.clone(),
            step: self.step,
        }
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        write_checkpoint_parts(w, &self.cfg, &self.model, &self.opt, self.step)
    }

    pub fn into_model(self) -> WorldActionModel {
        self.model
    }

    /// Consumes the trainer; [`Trainer::resume`] continues from the result.
    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint { config: self.cfg, model: self.model, opt: self.opt, step: self.step }
    }
}

fn adamw_config(cfg: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        lr: cfg.train.lr,
        beta1: cfg.train.beta1,
        beta2: cfg.train.beta2,
        eps: 1e-8,
        weight_decay: cfg.train.weight_decay,
    }
}

fn clone_model(m: &WorldActionModel) -> Result<WorldActionModel> {
    let mut c = WorldActionModel::new(&m.world, &m.config, m.heads, m.params.seed())?;
    c.params = m.params.clone();
    c.depth_norm = m.depth_norm;
    Ok(c)
}

/// Everything needed to resume training or run inference.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: WorldActionModel,
    pub opt: AdamW,
    pub step: usize,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WACK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Layout (little endian): magic, u16 version, u32 config length + config
/// text, u32 parameter count, then per parameter (name order) u16 name
/// length + name, u16 rank, u32 dims, f32 values; depth bounds as f32
/// log_lo, log_hi, p_low, p_high and u8 degenerate flag; RNG state as u64
/// seed and u64 step; optimizer u64 step then per parameter f32 first and
/// second moments.
pub fn write_checkpoint_parts<W: Write>(
    mut w: W,
    cfg: &RunConfig,
    model: &WorldActionModel,
    opt: &AdamW,
    step: usize,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = cfg.to_toml_string();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let params = &model.params;
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u16).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dn = model.depth_norm;
    for v in [dn.log_lo, dn.log_hi, dn.p_low, dn.p_high] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(dn.degenerate as u8);
    out.extend_from_slice(&cfg.train.seed.to_le_bytes());
    out.extend_from_slice(&(step as u64).to_le_bytes());
    out.extend_from_slice(&opt.t.to_le_bytes());
    for p in params.iter() {
        let i = params.index_of(&p.name)?;
        for v in opt.m[i].iter().chain(&opt.v[i]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Reader { buf: &buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let n = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(n)?).map_err(|_| Error::Format("config blob is not UTF-8".into()))?;
    let config = RunConfig::from_toml_str(text)?;
    let mut model = WorldActionModel::from_config(&config)?;
    let count = c.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, the configured model has {}",
            model.params.len()
        )));
    }
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let nl = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nl)?).map_err(|_| Error::Format("bad parameter name".into()))?;
        let rank = c.u16()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let size: usize = dims.iter().product();
        let value = Tensor::new(&dims, c.f32s(size)?)?;
        let slot = model
            .params
            .get_mut(name)
            .map_err(|_| Error::Format(format!("unexpected parameter `{name}`")))?;
        if slot.shape() != dims.as_slice() {
            return Err(Error::Format(format!("parameter `{name}` has shape {dims:?}, expected {:?}", slot.shape())));
        }
        *slot = value;
        order.push(model.params.index_of(name)?);
    }
    model.depth_norm = DepthNormParams {
        log_lo: c.f32()?,
        log_hi: c.f32()?,
        p_low: c.f32()?,
        p_high: c.f32()?,
        degenerate: c.take(1)?[0] != 0,
    };
    let _seed = c.u64()?;
    let step = c.u64()? as usize;
    let mut opt = AdamW::new(adamw_config(&config), &model.params);
    opt.t = c.u64()?;
    for &i in &order {
        let len = model.params.by_index(i).value.len();
        opt.m[i] = c.f32s(len)?;
        opt.v[i] = c.f32s(len)?;
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint { config, model, opt, step })
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub heads: Heads,
    pub queries: (usize, usize, usize),
}

impl Variant {
    pub fn new(name: &str, heads: Heads, queries: (usize, usize, usize)) -> Self {
        Self { name: name.to_string(), heads, queries }
    }

    /// Heads ablation rows plus the smaller query budget.
    pub fn standard_matrix() -> Vec<Variant> {
        let mut v = Self::matrix("heads").expect("built-in matrix");
        v.extend(Self::matrix("queries").expect("built-in matrix").into_iter().skip(1));
        v
    }

    /// Named variant sets: `heads` (world-learning ablation), `depth-video`
    /// (depth prior for video), `queries` (query budget), `standard`, `all`,
    /// or a comma-separated list of variant names drawn from these.
    pub fn matrix(name: &str) -> Result<Vec<Variant>> {
        let h = |d, v, a| Heads { depth: d, video: v, action: a };
        let big = (64, 64, 8);
        let full = || Variant::new("full", Heads::ALL, big);
        let set = match name {
            "heads" => vec![
                Variant::new("action-only", h(false, false, true), big),
                Variant::new("depth+action", h(true, false, true), big),
                Variant::new("video+action", h(false, true, true), big),
                full(),
            ],
            "depth-video" => vec![
                Variant::new("video-only", h(false, true, false), big),
                Variant::new("depth+video", h(true, true, false), big),
            ],
            "queries" => vec![full(), Variant::new("full-32/32/4", Heads::ALL, (32, 32, 4))],
            "standard" => Self::standard_matrix(),
            "all" => {
                let mut v = Self::standard_matrix();
                v.extend(Self::matrix("depth-video")?);
                v
            }
            list => {
                let known = Self::matrix("all")?;
                list.split(',')
                    .map(|n| {
                        known
                            .iter()
                            .find(|v| v.name == n.trim())
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("unknown ablation variant or matrix `{n}`")))
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(set)
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.train.heads = self.heads;
        (c.model.n_depth, c.model.n_video, c.model.n_action) = self.queries;
        c
    }
}

/// Per-variant, per-seed evaluation reports.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub variant: Variant,
    pub reports: Vec<Report>,
    pub loss_curves: Vec<Vec<LossReport>>,
}

impl AblationResult {
    /// Mean of a report key over seeds (absent keys are skipped).
    pub fn mean(&self, key: &str) -> Option<f64> {
        let v: Vec<f64> = self.reports.iter().filter_map(|r| r.get(key)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains every variant for every seed under the same budget and evaluates
/// each on `test`.
pub fn run_ablation_matrix(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    train: &[EpisodeRecord],
    test: &[EpisodeRecord],
    mut progress: impl FnMut(&str, u64, &Report),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let mut res = AblationResult { variant: v.clone(), reports: Vec::new(), loss_curves: Vec::new() };
        for &seed in seeds {
            let mut cfg = v.apply(base);
            cfg.train.seed = seed;
            cfg.sampler.seed = seed;
            let mut tr = Trainer::new(&cfg, train)?;
            tr.run(|_, _| Ok(()))?;
            let curve = tr.log.clone();
            let model = tr.into_model();
            let which = Which { plan: v.heads.action, depth: v.heads.depth, video: v.heads.video };
            let rep = evaluate_split(&model, test, &EvalOptions::from_config(&cfg, which))?;
            progress(&v.name, seed, &rep);
            res.reports.push(rep);
            res.loss_curves.push(curve);
        }
        out.push(res);
    }
    Ok(out)
}

/// Plain-text comparison table, one row per variant.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let cols = ["plan.pdms", "plan.nc", "plan.dac", "plan.ttc", "plan.comfort", "plan.ep", "plan.ade", "depth.absrel", "depth.delta1", "video.psnr"];
    let mut s = format!("{:<16}", "variant");
    for c in cols {
        s.push_str(&format!(" {c:>13}"));
    }
    s.push('\n');
    for r in results {
        s.push_str(&format!("{:<16}", r.variant.name));
        for c in cols {
            match r.mean(c) {
                Some(v) => s.push_str(&format!(" {v:>13.4}")),
                None => s.push_str(&format!(" {:>13}", "-")),
            }
        }
        s.push('\n');
    }
    s
}
