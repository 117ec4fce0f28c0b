use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters with matching gradient buffers.
///
/// Initialization of each tensor depends only on the store seed and the
/// parameter name, so adding or reordering parameters never perturbs others.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar = f32> {
    seed: u64,
    index: BTreeMap<String, usize>,
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { seed, index: BTreeMap::new(), params: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn name_rng(&self, name: &str) -> ChaCha8Rng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(self.seed ^ h.rotate_left(17))
    }

    /// Inserts (or replaces) a parameter with the given value.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> usize {
        let grad = Tensor::zeros(value.shape());
        if let Some(&i) = self.index.get(name) {
            self.params[i] = Param { name: name.to_string(), value, grad };
            return i;
        }
        let i = self.params.len();
        self.params.push(Param { name: name.to_string(), value, grad });
        self.index.insert(name.to_string(), i);
        i
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let mut rng = self.name_rng(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f32(rng.gen_range(-bound..=bound))).collect();
        self.insert(name, Tensor::new(shape, data).expect("shape product"))
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn init_ones(&mut self, name: &str, shape: &[usize]) -> usize {
        self.insert(name, Tensor::full(shape, T::one()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize, NumericsError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, NumericsError> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, NumericsError> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>, NumericsError> {
        Ok(&self.params[self.index_of(name)?].grad)
    }

    pub fn by_index(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.index.values().map(move |&i| &self.params[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same parameters converted to another element type, gradients zeroed.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            seed: self.seed,
            index: self.index.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: Tensor::zeros(p.value.shape()),
                })
                .collect(),
        }
    }

    /// Sum of parameter element counts for names starting with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_pure_in_seed_and_name() {
        let mut a = ParamStore::<f32>::new(5);
        a.init_uniform("x", &[3, 4], 3);
        a.init_uniform("y", &[2], 2);
        let mut b = ParamStore::<f32>::new(5);
        b.init_uniform("y", &[2], 2);
        b.init_uniform("x", &[3, 4], 3);
        assert_eq!(a.get("x").unwrap(), b.get("x").unwrap());
        assert_eq!(a.get("y").unwrap(), b.get("y").unwrap());
        let mut c = ParamStore::<f32>::new(6);
        c.init_uniform("x", &[3, 4], 3);
        assert_ne!(a.get("x").unwrap(), c.get("x").unwrap());
    }

    #[test]
    fn uniform_bounds_and_grad_shape() {
        let mut s = ParamStore::<f32>::new(1);
        s.init_uniform("w", &[16, 8], 16);
        let w = s.get("w").unwrap();
        assert!(w.data().iter().all(|x| x.abs() <= 0.25));
        assert_eq!(s.grad("w").unwrap().shape(), w.shape());
    }
}
