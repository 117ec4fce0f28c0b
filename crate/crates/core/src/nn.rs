//! Parameterized layers shared by the backbone and the experts. Weights live
//! in a [`ParamStore`] under dotted names; each function binds them by prefix.

use std::sync::Arc;

use crate::numerics::{AttentionMask, Graph, NumericsError, ParamStore, Scalar, Tensor, Var};

type R<T> = Result<T, NumericsError>;

pub(crate) fn init_linear<T: Scalar>(s: &mut ParamStore<T>, name: &str, inp: usize, out: usize) {
    s.init_uniform(&format!("{name}.w"), &[inp, out], inp);
    s.init_zeros(&format!("{name}.b"), &[out]);
}

pub(crate) fn linear<T: Scalar>(g: &mut Graph<T>, s: &ParamStore<T>, name: &str, x: Var) -> R<Var> {
    let w = g.param(s, &format!("{name}.w"))?;
    let b = g.param(s, &format!("{name}.b"))?;
    g.linear(x, w, Some(b))
}

pub(crate) fn init_ln<T: Scalar>(s: &mut ParamStore<T>, name: &str, d: usize) {
    s.init_ones(&format!("{name}.g"), &[d]);
    s.init_zeros(&format!("{name}.b"), &[d]);
}

pub(crate) fn layer_norm<T: Scalar>(g: &mut Graph<T>, s: &ParamStore<T>, name: &str, x: Var) -> R<Var> {
    let gain = g.param(s, &format!("{name}.g"))?;
    let bias = g.param(s, &format!("{name}.b"))?;
    g.layer_norm(x, gain, bias)
}

/// Width, head count and optional cross-attention condition width of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockDims {
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub cond: Option<usize>,
}

pub(crate) fn init_block<T: Scalar>(s: &mut ParamStore<T>, p: &str, d: BlockDims) {
    let w = d.width;
    init_ln(s, &format!("{p}.ln1"), w);
    for n in ["q", "k", "v", "o"] {
        init_linear(s, &format!("{p}.attn.{n}"), w, w);
    }
    if let Some(c) = d.cond {
        init_ln(s, &format!("{p}.lnx"), w);
        init_linear(s, &format!("{p}.xattn.q"), w, w);
        init_linear(s, &format!("{p}.xattn.k"), c, w);
        init_linear(s, &format!("{p}.xattn.v"), c, w);
        init_linear(s, &format!("{p}.xattn.o"), w, w);
    }
    init_ln(s, &format!("{p}.ln2"), w);
    init_linear(s, &format!("{p}.mlp.0"), w, w * d.mlp_ratio);
    init_linear(s, &format!("{p}.mlp.1"), w * d.mlp_ratio, w);
}

/// Pre-norm transformer block: masked self-attention, optional
/// cross-attention to `cond`, then a GELU MLP, each with a residual.
pub(crate) fn block<T: Scalar>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    p: &str,
    d: BlockDims,
    x: Var,
    mask: &Arc<AttentionMask>,
    cond: Option<Var>,
) -> R<Var> {
    let h = layer_norm(g, s, &format!("{p}.ln1"), x)?;
    let q = linear(g, s, &format!("{p}.attn.q"), h)?;
    let k = linear(g, s, &format!("{p}.attn.k"), h)?;
    let v = linear(g, s, &format!("{p}.attn.v"), h)?;
    let a = g.attention(q, k, v, mask, d.heads)?;
    let a = linear(g, s, &format!("{p}.attn.o"), a)?;
    let mut x = g.add(x, a)?;

    if let (Some(_), Some(c)) = (d.cond, cond) {
        let h = layer_norm(g, s, &format!("{p}.lnx"), x)?;
        let q = linear(g, s, &format!("{p}.xattn.q"), h)?;
        let k = linear(g, s, &format!("{p}.xattn.k"), c)?;
        let v = linear(g, s, &format!("{p}.xattn.v"), c)?;
        let n = g.shape(q)[0];
        let m = g.shape(k)[0];
        let full = Arc::new(AttentionMask::full(n, m));
        let a = g.attention(q, k, v, &full, d.heads)?;
        let a = linear(g, s, &format!("{p}.xattn.o"), a)?;
        x = g.add(x, a)?;
    } else if d.cond.is_some() {
        return Err(NumericsError::Contract(format!("block `{p}` needs a condition")));
    }

    let h = layer_norm(g, s, &format!("{p}.ln2"), x)?;
    let h = linear(g, s, &format!("{p}.mlp.0"), h)?;
    let h = g.gelu(h);
    let h = linear(g, s, &format!("{p}.mlp.1"), h)?;
    g.add(x, h)
}

/// Sinusoidal features of a flow time `t ∈ [0, 1]`, shape `[1 × dim]`.
pub(crate) fn sinusoid(t: f32, dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10_000f32.ln()) * i as f32 / half as f32).exp();
        let a = 1000.0 * t * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    Tensor::new(&[1, dim], out).expect("row")
}

pub(crate) fn init_time_mlp<T: Scalar>(s: &mut ParamStore<T>, p: &str, dim: usize) {
    init_linear(s, &format!("{p}.0"), dim, dim);
    init_linear(s, &format!("{p}.1"), dim, dim);
}

/// Time embedding row: sinusoid → linear → GELU → linear.
pub(crate) fn time_embed<T: Scalar>(g: &mut Graph<T>, s: &ParamStore<T>, p: &str, t: f32, dim: usize) -> R<Var> {
    let f = g.input(&sinusoid(t, dim));
    let h = linear(g, s, &format!("{p}.0"), f)?;
    let h = g.gelu(h);
    linear(g, s, &format!("{p}.1"), h)
}

/// Splits an `h × w × c` image (row-major, channels last) into non-overlapping
/// `p × p` patches, one row of `p·p·c` values per patch in raster order.
pub fn patchify(img: &[f32], h: usize, w: usize, c: usize, p: usize) -> Tensor<f32> {
    debug_assert_eq!(img.len(), h * w * c);
    let (ph, pw) = (h / p, w / p);
    let mut out = Vec::with_capacity(img.len());
    for by in 0..ph {
        for bx in 0..pw {
            for y in 0..p {
                let row = (by * p + y) * w + bx * p;
                out.extend_from_slice(&img[row * c..(row + p) * c]);
            }
        }
    }
    Tensor::new(&[ph * pw, p * p * c], out).expect("patch count")
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &[f32], h: usize, w: usize, c: usize, p: usize) -> Vec<f32> {
    debug_assert_eq!(patches.len(), h * w * c);
    let pw = w / p;
    let mut out = vec![0.0f32; h * w * c];
    for (i, patch) in patches.chunks(p * p * c).enumerate() {
        let (by, bx) = (i / pw, i % pw);
        for y in 0..p {
            let row = (by * p + y) * w + bx * p;
            out[row * c..(row + p) * c].copy_from_slice(&patch[y * p * c..(y + 1) * p * c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_round_trip() {
        let (h, w, c, p) = (4, 6, 2, 2);
        let img: Vec<f32> = (0..h * w * c).map(|i| i as f32).collect();
        let t = patchify(&img, h, w, c, p);
        assert_eq!(t.shape(), &[6, 8]);
        // First patch holds pixels (0,0), (0,1), (1,0), (1,1).
        assert_eq!(&t.data()[..8], &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(unpatchify(t.data(), h, w, c, p), img);
    }

    #[test]
    fn sinusoid_is_bounded() {
        let e = sinusoid(0.37, 16);
        assert!(e.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(sinusoid(0.0, 4).data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
