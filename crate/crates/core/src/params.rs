//! Named learnable parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::Graph;
use crate::tensor::{Real, Tensor};

/// Learnable tensors keyed by dotted name, iterated in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

/// 64-bit FNV-1a, used to derive per-parameter seeds from names.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, mut value: Tensor<T>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid("param_store", format!("duplicate parameter `{name}`")));
        }
        value.requires_grad = true;
        value.grad = None;
        self.entries.insert(name.to_string(), value);
        Ok(())
    }

    /// He-style normal initialisation, `std = sqrt(2 / fan_in)` with
    /// `fan_in = prod(shape[1..])`. The stream is a function of `seed` and
    /// `name` only, so a parameter shared by two configurations starts equal.
    pub fn insert_he_normal(&mut self, name: &str, shape: &[usize], seed: u64) -> Result<()> {
        let fan_in: usize = shape[1..].iter().product();
        let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid("init", format!("{e}")))?;
        let t = Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)));
        self.insert(name, t)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.entries.values_mut().for_each(Tensor::zero_grad);
    }

    /// Add the gradients that `graph` holds for its bound parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) -> Result<()> {
        for (name, &var) in graph.bound_params() {
            let Some(g) = graph.grad(var) else { continue };
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            match &mut entry.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => entry.grad = Some(g.to_vec()),
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    let mut t = v.cast::<U>();
                    t.requires_grad = true;
                    (k.clone(), t)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_sorted() {
        let mut s = ParamStore::<f32>::new();
        s.insert_zeros("b.bias", &[2]).unwrap();
        s.insert_zeros("a.weight", &[2, 1, 1, 1]).unwrap();
        assert!(s.insert_zeros("a.weight", &[1]).is_err());
        assert_eq!(s.names(), ["a.weight", "b.bias"]);
        assert_eq!(s.scalar_count(), 4);
    }

    #[test]
    fn init_depends_on_seed_and_name_only() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        a.insert_he_normal("x.weight", &[4, 2, 3, 3], 7).unwrap();
        b.insert_zeros("other", &[3]).unwrap();
        b.insert_he_normal("x.weight", &[4, 2, 3, 3], 7).unwrap();
        assert_eq!(a.get("x.weight"), b.get("x.weight"));
        let w = a.get("x.weight").unwrap();
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        // fan_in = 18 -> variance 1/9, loose check over 72 draws
        assert!(var > 0.03 && var < 0.3, "{var}");
    }
}
