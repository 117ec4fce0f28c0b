use wam_core::config::Heads;
use wam_core::flowmatch::SamplerConfig;
use wam_core::microworld::{build_dataset, EpisodeRecord, Split};
use wam_core::numerics::{ParamStore, Tensor};
use wam_core::optim::{AdamW, AdamWConfig};
use wam_core::trainer::{read_checkpoint, Trainer};
use wam_core::{RunConfig, WorldActionModel};

fn cfg(heads: Heads) -> RunConfig {
    let mut c = RunConfig::desk();
    c.train.heads = heads;
    c.train.batch = 2;
    c
}

fn data(c: &RunConfig, n: usize) -> Vec<EpisodeRecord> {
    build_dataset(&c.world, n, 5, Split::Train).unwrap().records
}

fn bits(s: &ParamStore) -> Vec<u32> {
    s.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn training_is_deterministic() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 4);
    let run = || {
        let mut t = Trainer::new(&c, &d).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        (t.log.clone(), bits(&t.model.params))
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_preserves_every_output() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 3);
    let mut t = Trainer::new(&c, &d).unwrap();
    t.step().unwrap();
    let mut buf = Vec::new();
    t.write_checkpoint(&mut buf).unwrap();
    let ck = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(ck.step, 1);
    assert_eq!(ck.opt, t.opt);
    assert_eq!(bits(&ck.model.params), bits(&t.model.params));
    let s = SamplerConfig::euler(3, 9);
    let rec = &d[0];
    assert_eq!(ck.model.plan(rec, s).unwrap(), t.model.plan(rec, s).unwrap());
    assert_eq!(ck.model.predict_depth(rec, s).unwrap(), t.model.predict_depth(rec, s).unwrap());
    assert_eq!(ck.model.predict_video(rec, s).unwrap(), t.model.predict_video(rec, s).unwrap());
}

/// Zero gradient on every parameter whose name starts with one of `prefixes`.
fn grads_vanish(s: &ParamStore, prefixes: &[&str]) -> bool {
    s.iter()
        .filter(|p| prefixes.iter().any(|x| p.name.starts_with(x)))
        .all(|p| p.grad.data().iter().all(|&g| g == 0.0))
}

#[test]
fn later_query_groups_get_no_gradient_from_earlier_experts() {
    for (heads, off, on) in [
        (Heads { depth: true, video: false, action: false }, vec!["bb.q.video", "bb.q.action"], "bb.q.depth"),
        (Heads { depth: false, video: true, action: false }, vec!["bb.q.action"], "bb.q.video"),
        (Heads::ACTION, vec![], "bb.q.depth"),
    ] {
        let c = cfg(heads);
        let d = data(&c, 2);
        let mut t = Trainer::new(&c, &d).unwrap();
        t.step().unwrap();
        let s = &t.model.params;
        assert!(grads_vanish(s, &off), "{heads:?}");
        assert!(!grads_vanish(s, &[on]), "{heads:?}");
        for (enabled, prefix) in [(heads.depth, "depth."), (heads.video, "video."), (heads.action, "action.")] {
            assert_eq!(s.count_with_prefix(prefix) > 0, enabled, "{prefix}");
        }
    }
}

#[test]
fn action_weight_enters_linearly() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 2);
    let mut c2 = c.clone();
    c2.train.lambda_a *= 2.0;
    let a = Trainer::new(&c, &d).unwrap().step().unwrap();
    let b = Trainer::new(&c2, &d).unwrap().step().unwrap();
    assert_eq!((a.l_d, a.l_v, a.l_a), (b.l_d, b.l_v, b.l_a));
    assert!((b.l_total - a.l_total - c.train.lambda_a * a.l_a).abs() < 1e-5);
}

#[test]
fn optimizer_matches_a_scalar_loop() {
    let cfg = AdamWConfig { lr: 0.01, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.1 };
    let mut s = ParamStore::new(0);
    let init = [0.5f32, -1.0, 2.0];
    s.insert("w", Tensor::new(&[3], init.to_vec()).unwrap());
    let mut opt = AdamW::new(cfg, &s);
    let (mut w, mut m, mut v) = (init.map(|x| x as f64), [0.0f64; 3], [0.0f64; 3]);
    for t in 1..=25 {
        // Gradient of Σ w² + w.
        let g: Vec<f32> = s.get("w").unwrap().data().iter().map(|&x| 2.0 * x + 1.0).collect();
        s.by_index_mut(0).grad = Tensor::new(&[3], g).unwrap();
        opt.step(&mut s);
        for j in 0..3 {
            let g = 2.0 * w[j] + 1.0;
            m[j] = 0.9 * m[j] + 0.1 * g;
            v[j] = 0.99 * v[j] + 0.01 * g * g;
            let mh = m[j] / (1.0 - 0.9f64.powi(t));
            let vh = v[j] / (1.0 - 0.99f64.powi(t));
            w[j] -= 0.01 * (mh / (vh.sqrt() + 1e-8) + 0.1 * w[j]);
        }
    }
    for (a, b) in s.get("w").unwrap().data().iter().zip(w) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn generated_depth_is_positive_and_bounded() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 3);
    let m = WorldActionModel::from_config(&c).unwrap();
    for (i, rec) in d.iter().enumerate() {
        let depth = m.predict_depth(rec, SamplerConfig::euler(4, i as u64)).unwrap();
        assert!(depth.data.iter().all(|&z| z > 0.0 && z <= c.world.d_max));
    }
}

#[test]
fn planning_touches_only_the_action_expert() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 2);
    let m = WorldActionModel::from_config(&c).unwrap();
    let before = m.counters();
    let plan = m.plan(&d[0], SamplerConfig::euler(5, 0)).unwrap();
    let after = m.counters();
    assert_eq!((after.depth, after.video), (before.depth, before.video));
    assert_eq!(after.action - before.action, 5);
    assert_eq!(plan.len(), c.world.t_a);
    for s in &plan.states {
        assert!(((s.cos * s.cos + s.sin * s.sin) as f64 - 1.0).abs() < 1e-6);
    }
}

#[test]
fn depth_queries_are_permutation_equivariant() {
    let c = cfg(Heads::ALL);
    let d = data(&c, 1);
    let m = WorldActionModel::from_config(&c).unwrap();
    let rec = &d[0];
    let bb = &m.backbone;
    let stream = bb.encode_inputs(&m.params, rec.instruction as usize, &rec.frames, &rec.action_ctx).unwrap();
    let base = bb.forward(&stream, bb.mask(), &m.params).unwrap();
    let (off, n, w) = (stream.layout.depth_offset(), stream.layout.n_depth, stream.layout.d_model);
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut swapped = stream.clone();
    for (dst, &src) in perm.iter().enumerate() {
        let row = stream.tokens.data()[(off + src) * w..(off + src + 1) * w].to_vec();
        swapped.tokens.data_mut()[(off + dst) * w..(off + dst + 1) * w].copy_from_slice(&row);
    }
    let out = bb.forward(&swapped, bb.mask(), &m.params).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        let a = &out.depth_emb.data()[dst * w..(dst + 1) * w];
        let b = &base.depth_emb.data()[src * w..(src + 1) * w];
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-5);
        }
    }
    for (x, y) in out.action_emb.data().iter().zip(base.action_emb.data()) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn two_hundred_steps_reduce_the_loss() {
    let mut c = cfg(Heads::ACTION);
    c.train.batch = 4;
    let d = data(&c, 8);
    let mut t = Trainer::new(&c, &d).unwrap();
    for _ in 0..200 {
        t.step().unwrap();
    }
    let mean = |r: &[wam_core::trainer::LossReport]| r.iter().map(|x| x.l_total).sum::<f32>() / r.len() as f32;
    let (first, last) = (mean(&t.log[..20]), mean(&t.log[180..]));
    assert!(last < 0.8 * first, "{first} -> {last}");
}
