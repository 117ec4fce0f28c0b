use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wam_core::backbone::Backbone;
use wam_core::config::{ModelConfig, VideoContext, WorldConfig};
use wam_core::experts::{ActionExpert, DepthExpert, FrameSequence, Trajectory, TrajectoryState, VideoExpert};
use wam_core::numerics::{check_gradients, GradCheckOptions, Graph, NumericsError, ParamStore, Tensor, Var};

const TOL: f32 = 1e-3;

fn small(rng: &mut ChaCha8Rng) -> (ModelConfig, WorldConfig) {
    let mut w = WorldConfig::default();
    w.frame_h = 8;
    w.frame_w = if rng.gen_bool(0.5) { 8 } else { 16 };
    w.h_ctx = rng.gen_range(1..=2);
    w.t_a = rng.gen_range(2..=3);
    let mut m = ModelConfig::default();
    m.d_model = 8;
    m.blocks = 1;
    m.heads = 2;
    m.mlp_ratio = 2;
    m.patch = 4;
    m.vocab = 3;
    m.n_depth = rng.gen_range(1..=2);
    m.n_video = rng.gen_range(1..=2);
    m.n_action = rng.gen_range(1..=2);
    for (width, blocks, heads) in [
        (&mut m.depth_width, &mut m.depth_blocks, &mut m.depth_heads),
        (&mut m.video_width, &mut m.video_blocks, &mut m.video_heads),
        (&mut m.action_width, &mut m.action_blocks, &mut m.action_heads),
    ] {
        *width = 8;
        *blocks = 1;
        *heads = 2;
    }
    m.depth_patch = 4;
    m.ae_downsample = 4;
    m.latent_channels = rng.gen_range(2..=3);
    m.horizon = rng.gen_range(1..=2);
    m.video_residual = rng.gen_bool(0.5);
    m.video_context = if rng.gen_bool(0.5) { VideoContext::Prepend } else { VideoContext::Concat };
    (m, w)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Scalar loss `Σ out ⊙ w` with a fixed random `w`.
fn project(g: &mut Graph<f64>, out: Var, w: &Tensor<f32>) -> Result<Var, NumericsError> {
    let wv = g.input(w);
    let p = g.mul(out, wv)?;
    Ok(g.sum(p))
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { eps: 1e-6, max_elements: Some(6), seed, atol: 1e-5 }
}

#[test]
fn depth_denoiser_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, w) = small(&mut rng);
        let e = DepthExpert::new(&m, &w).unwrap();
        let mut s = ParamStore::<f64>::new(seed);
        e.init_params(&mut s);
        let hw = w.frame_h * w.frame_w;
        let noisy = rand_vec(&mut rng, hw, -0.5, 0.5);
        let rgb = rand_vec(&mut rng, hw * 3, 0.0, 1.0);
        let cond = rand_tensor(&mut rng, &[m.n_depth, m.d_model]);
        let t = rng.gen_range(0.0f32..1.0);
        let n_out = e.n_patches() * m.depth_patch * m.depth_patch;
        let wt = rand_tensor(&mut rng, &[e.n_patches(), n_out / e.n_patches()]);
        let r = check_gradients(
            |g, s| {
                let c = g.input(&cond);
                let out = e.denoise_vars(g, s, &noisy, &rgb, t, c)?;
                project(g, out, &wt)
            },
            &mut s,
            opts(seed),
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {} on {}", r.max_rel_error, r.worst_param);
    }
}

#[test]
fn video_denoiser_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (m, w) = small(&mut rng);
        let e = VideoExpert::new(&m, &w).unwrap();
        let mut s = ParamStore::<f64>::new(seed);
        e.init_params(&mut s);
        let (lh, lw) = e.latent_hw();
        let cells = lh * lw;
        let noisy = rand_tensor(&mut rng, &[m.horizon * cells, m.latent_channels]);
        let current = rand_tensor(&mut rng, &[cells, m.latent_channels]);
        let cond = rand_tensor(&mut rng, &[m.n_video + 1, m.d_model]);
        let t = rng.gen_range(0.0f32..1.0);
        let wt = rand_tensor(&mut rng, &[m.horizon * cells, m.latent_channels]);
        let r = check_gradients(
            |g, s| {
                let (n, c, k) = (g.input(&noisy), g.input(&current), g.input(&cond));
                let out = e.denoise_vars(g, s, n, c, t, k)?;
                project(g, out, &wt)
            },
            &mut s,
            opts(seed),
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {} on {}", r.max_rel_error, r.worst_param);
    }
}

#[test]
fn video_autoencoder_and_visual_condition_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (m, w) = small(&mut rng);
        let e = VideoExpert::new(&m, &w).unwrap();
        let mut s = ParamStore::<f64>::new(seed);
        e.init_params(&mut s);
        let n = w.frame_h * w.frame_w * 3;
        let frames: Vec<Vec<f32>> = (0..2).map(|_| rand_vec(&mut rng, n, 0.0, 1.0)).collect();
        let target = e.frame_patches(&[&frames[0], &frames[1]]).unwrap();
        let wt = rand_tensor(&mut rng, &[1, m.d_model]);
        let r = check_gradients(
            |g, s| {
                let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
                let z = e.encode_vars(g, s, &refs)?;
                let x = e.decode_vars(g, s, z)?;
                let tgt = Tensor::<f64>::new(target.shape(), target.data().iter().map(|&v| v as f64).collect())?;
                let rec = g.mse(x, &tgt)?;
                let vis = e.visual_condition_vars(g, s, &frames[0])?;
                let p = project(g, vis, &wt)?;
                g.add(rec, p)
            },
            &mut s,
            opts(seed),
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {} on {}", r.max_rel_error, r.worst_param);
    }
}

#[test]
fn action_denoiser_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (m, w) = small(&mut rng);
        let e = ActionExpert::new(&m, &w).unwrap();
        let mut s = ParamStore::<f64>::new(seed);
        e.init_params(&mut s);
        let noisy = rand_tensor(&mut rng, &[w.t_a, 4]);
        let cond = rand_tensor(&mut rng, &[m.n_action, m.d_model]);
        let t = rng.gen_range(0.0f32..1.0);
        let wt = rand_tensor(&mut rng, &[w.t_a, 4]);
        let r = check_gradients(
            |g, s| {
                let (n, c) = (g.input(&noisy), g.input(&cond));
                let out = e.denoise_vars(g, s, n, t, c)?;
                project(g, out, &wt)
            },
            &mut s,
            opts(seed),
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {} on {}", r.max_rel_error, r.worst_param);
    }
}

#[test]
fn backbone_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (m, w) = small(&mut rng);
        let b = Backbone::new(&m, &w).unwrap();
        let mut s = ParamStore::<f64>::new(seed);
        b.init_params(&mut s);
        let frames = FrameSequence::new(1, w.frame_h, w.frame_w, rand_vec(&mut rng, w.frame_h * w.frame_w * 3, 0.0, 1.0))
            .unwrap();
        let ctx = Trajectory {
            states: (0..w.h_ctx)
                .map(|k| TrajectoryState { x: -(k as f32 + 1.0) * 3.0, y: 0.1, cos: 1.0, sin: 0.0 })
                .collect(),
            dt: w.dt,
        };
        let instruction = rng.gen_range(0..m.vocab);
        let ws: Vec<Tensor<f32>> = [m.n_depth, m.n_video, m.n_action]
            .iter()
            .map(|&n| rand_tensor(&mut rng, &[n, m.d_model]))
            .collect();
        let r = check_gradients(
            |g, s| {
                let x = b.encode_vars(g, s, instruction, &frames, &ctx)?;
                let e = b.forward_vars(g, s, x, b.mask())?;
                let a = project(g, e.depth, &ws[0])?;
                let v = project(g, e.video, &ws[1])?;
                let c = project(g, e.action, &ws[2])?;
                let av = g.add(a, v)?;
                g.add(av, c)
            },
            &mut s,
            opts(seed),
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {} on {}", r.max_rel_error, r.worst_param);
    }
}
