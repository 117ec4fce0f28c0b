use super::tensor::gemm_strided;
use super::{NumericsError, Scalar, Tensor};

/// Boolean `[rows × cols]` matrix; `true` means the query row may attend to the key column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![true; rows * cols] }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![false; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self { rows, cols, allowed }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged mask rows");
        Self { rows: rows.len(), cols, allowed: rows.iter().flatten().copied().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.allowed[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Number of rows that permit no key at all.
    pub fn empty_rows(&self) -> usize {
        (0..self.rows).filter(|&i| !self.row(i).iter().any(|&b| b)).count()
    }
}

/// Result of a standalone attention evaluation.
#[derive(Debug, Clone)]
pub struct AttentionOutput<T: Scalar = f32> {
    pub output: Tensor<T>,
    /// Set when at least one row had no allowed key and was emitted as zeros.
    pub empty_row_flag: bool,
}

/// Single-head masked scaled dot-product attention.
///
/// Masked keys are excluded from the softmax normalizer, so they receive a
/// weight of exactly zero. Rows without any allowed key produce a zero row.
pub fn masked_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttentionMask,
) -> Result<AttentionOutput<T>, NumericsError> {
    masked_attention_heads(q, k, v, mask, 1)
}

/// Multi-head variant: the model width is split evenly into `heads` slices.
pub fn masked_attention_heads<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttentionMask,
    heads: usize,
) -> Result<AttentionOutput<T>, NumericsError> {
    let dims = check_attention_shapes(q, k, v, mask, heads)?;
    let fwd = attention_forward(q.data(), k.data(), v.data(), mask, dims);
    Ok(AttentionOutput {
        output: Tensor::new(&[dims.n, dims.d], fwd.out)?,
        empty_row_flag: fwd.empty_rows > 0,
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnDims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub heads: usize,
}

pub(crate) fn check_attention_shapes<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttentionMask,
    heads: usize,
) -> Result<AttnDims, NumericsError> {
    let (n, d) = q.rows_cols();
    let (m, dk) = k.rows_cols();
    let (mv, dv) = v.rows_cols();
    if d == 0 {
        return Err(NumericsError::Shape("attention width must be positive".into()));
    }
    if dk != d || dv != d || mv != m {
        return Err(NumericsError::Shape(format!(
            "attention q [{n}x{d}], k [{m}x{dk}], v [{mv}x{dv}]"
        )));
    }
    if mask.rows() != n || mask.cols() != m {
        return Err(NumericsError::Shape(format!(
            "mask [{}x{}] does not match attention [{n}x{m}]",
            mask.rows(),
            mask.cols()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(NumericsError::Shape(format!("width {d} not divisible into {heads} heads")));
    }
    Ok(AttnDims { n, m, d, heads })
}

pub(crate) struct AttnForward<T> {
    pub out: Vec<T>,
    /// Softmax weights, `[heads × n × m]`.
    pub probs: Vec<T>,
    pub empty_rows: usize,
}

pub(crate) fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    mask: &AttentionMask,
    dims: AttnDims,
) -> AttnForward<T> {
    let AttnDims { n, m, d, heads } = dims;
    let dh = d / heads;
    let scale = T::one() / T::from_f32(dh as f32).sqrt();
    let zero = T::zero();
    let mut probs = vec![zero; heads * n * m];
    let mut out = vec![zero; n * d];
    let mut empty_rows = 0;
    for h in 0..heads {
        let p = &mut probs[h * n * m..(h + 1) * n * m];
        // scores = Q_h K_h^T
        gemm_strided(
            n,
            dh,
            m,
            q[h * dh..].as_ptr(),
            d as isize,
            1,
            k[h * dh..].as_ptr(),
            1,
            d as isize,
            p.as_mut_ptr(),
            m as isize,
            zero,
        );
        for i in 0..n {
            let row = &mut p[i * m..(i + 1) * m];
            let allowed = mask.row(i);
            let mut max = T::neg_infinity();
            for (s, &a) in row.iter().zip(allowed) {
                if a {
                    max = max.max(*s * scale);
                }
            }
            if max == T::neg_infinity() {
                row.iter_mut().for_each(|x| *x = zero);
                if h == 0 {
                    empty_rows += 1;
                }
                continue;
            }
            let mut sum = zero;
            for (s, &a) in row.iter_mut().zip(allowed) {
                if a {
                    *s = (*s * scale - max).exp();
                    sum += *s;
                } else {
                    *s = zero;
                }
            }
            let inv = T::one() / sum;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        // out_h = P V_h
        gemm_strided(
            n,
            m,
            dh,
            p.as_ptr(),
            m as isize,
            1,
            v[h * dh..].as_ptr(),
            d as isize,
            1,
            out[h * dh..].as_mut_ptr(),
            d as isize,
            zero,
        );
    }
    AttnForward { out, probs, empty_rows }
}

/// Accumulates input gradients for one attention call.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    dims: AttnDims,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let AttnDims { n, m, d, heads } = dims;
    let dh = d / heads;
    let scale = T::one() / T::from_f32(dh as f32).sqrt();
    let (zero, one) = (T::zero(), T::one());
    let mut ds = vec![zero; n * m];
    for h in 0..heads {
        let p = &probs[h * n * m..(h + 1) * n * m];
        // dV_h += P^T dO_h
        gemm_strided(
            m,
            n,
            dh,
            p.as_ptr(),
            1,
            m as isize,
            dout[h * dh..].as_ptr(),
            d as isize,
            1,
            dv[h * dh..].as_mut_ptr(),
            d as isize,
            one,
        );
        // dP = dO_h V_h^T
        gemm_strided(
            n,
            dh,
            m,
            dout[h * dh..].as_ptr(),
            d as isize,
            1,
            v[h * dh..].as_ptr(),
            1,
            d as isize,
            ds.as_mut_ptr(),
            m as isize,
            zero,
        );
        for i in 0..n {
            let pr = &p[i * m..(i + 1) * m];
            let dr = &mut ds[i * m..(i + 1) * m];
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (g, &pp) in dr.iter_mut().zip(pr) {
                *g = pp * (*g - dot) * scale;
            }
        }
        // dQ_h += dS K_h
        gemm_strided(
            n,
            m,
            dh,
            ds.as_ptr(),
            m as isize,
            1,
            k[h * dh..].as_ptr(),
            d as isize,
            1,
            dq[h * dh..].as_mut_ptr(),
            d as isize,
            one,
        );
        // dK_h += dS^T Q_h
        gemm_strided(
            m,
            n,
            dh,
            ds.as_ptr(),
            1,
            m as isize,
            q[h * dh..].as_ptr(),
            d as isize,
            1,
            dk[h * dh..].as_mut_ptr(),
            d as isize,
            one,
        );
    }
}
