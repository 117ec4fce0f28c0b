use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamStore, Scalar, Var};

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Upper bound on probed elements per parameter tensor (`None` probes all).
    pub max_elements: Option<usize>,
    /// Seed for choosing which elements to probe when sub-sampling.
    pub seed: u64,
    /// Absolute floor added to `‖fd‖` in the denominator, so parameters whose
    /// true gradient vanishes (e.g. attention key biases) compare on absolute error.
    pub atol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-3, max_elements: None, seed: 0, atol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over parameters of `‖autodiff − fd‖ / (‖fd‖ + atol)` on the probed elements.
    pub max_rel_error: f32,
    /// Parameter achieving the maximum.
    pub worst_param: String,
    pub probed: usize,
}

/// Compares reverse-mode gradients of `f` with central finite differences.
///
/// `f` must build a scalar loss on the graph it is given. Gradient buffers of
/// `store` are overwritten with the autodiff result.
pub fn check_gradients<T, F>(
    f: F,
    store: &mut ParamStore<T>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NumericsError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var, NumericsError>,
{
    if !(opts.eps > 0.0) {
        return Err(NumericsError::Contract(format!("eps must be positive, got {}", opts.eps)));
    }
    let eval = |store: &ParamStore<T>| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(NumericsError::Contract("gradient check needs a scalar loss".into()));
        }
        let x = v.data()[0];
        if !x.is_finite() {
            return Err(NumericsError::NonFinite("loss during gradient check".into()));
        }
        Ok(x.to_f64())
    };

    store.zero_grad();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        g.backward(loss, store)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = (0.0f32, String::new());
    let mut probed = 0;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let idx = store.index_of(&name)?;
        let n = store.by_index(idx).value.len();
        let analytic = store.by_index(idx).grad.clone();
        if !analytic.is_finite() {
            return Err(NumericsError::NonFinite(format!("gradient of `{name}`")));
        }
        let elems: Vec<usize> = match opts.max_elements {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let (mut err2, mut fd2) = (0.0f64, 0.0f64);
        for &e in &elems {
            let orig = store.by_index(idx).value.data()[e];
            let eps = T::from_f64(opts.eps);
            let (hi, lo) = (orig + eps, orig - eps);
            store.by_index_mut(idx).value.data_mut()[e] = hi;
            let plus = eval(store)?;
            store.by_index_mut(idx).value.data_mut()[e] = lo;
            let minus = eval(store)?;
            store.by_index_mut(idx).value.data_mut()[e] = orig;
            // Divide by the step actually taken after rounding.
            let fd = (plus - minus) / (hi.to_f64() - lo.to_f64());
            let a = analytic.data()[e].to_f64();
            err2 += (a - fd) * (a - fd);
            fd2 += fd * fd;
        }
        probed += elems.len();
        let rel = (err2.sqrt() / (fd2.sqrt() + opts.atol)) as f32;
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, name.clone());
        }
    }
    // Leave the analytic gradient in the store for callers that inspect it.
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    Ok(GradCheckReport { max_rel_error: worst.0, worst_param: worst.1, probed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn identity_and_affine_are_exact() {
        let mut store = ParamStore::<f64>::new(3);
        store.init_uniform("p", &[4], 1);
        let r = check_gradients(
            |g, s| {
                let p = g.param(s, "p")?;
                Ok(g.sum(p))
            },
            &mut store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let mut store = ParamStore::<f64>::new(4);
        store.init_uniform("w", &[3, 2], 3);
        store.init_uniform("b", &[2], 3);
        let x = Tensor::<f32>::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.75]).unwrap();
        let r = check_gradients(
            |g, s| {
                let xv = g.input(&x);
                let w = g.param(s, "w")?;
                let b = g.param(s, "b")?;
                let y = g.linear(xv, w, Some(b))?;
                Ok(g.sum(y))
            },
            &mut store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_bad_eps() {
        let mut store = ParamStore::<f64>::new(0);
        store.init_zeros("p", &[1]);
        let r = check_gradients(
            |g, s| {
                let p = g.param(s, "p")?;
                Ok(g.sum(p))
            },
            &mut store,
            GradCheckOptions { eps: 0.0, ..Default::default() },
        );
        assert!(r.is_err());
    }
}
