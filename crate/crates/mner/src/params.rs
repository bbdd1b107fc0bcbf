//! Named parameter storage and gradient maps. Every trainable weight in the
//! model lives in a `ParameterStore` under a stable dotted name; gradients
//! come back keyed the same way.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Zeros,
    /// Uniform on [-r, r].
    Uniform(f64),
    /// Uniform on [-l, l] with l = sqrt(6 / (fan_in + fan_out)).
    ScaledUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
    seed: u64,
}

/// Fill tensors for the given `(name, shape)` list. Deterministic: the same
/// (shapes, scheme, seed) triple always produces identical contents. Names
/// are filled in sorted order from one seeded stream.
pub fn init_parameters(
    shapes: &[(String, Vec<usize>)],
    scheme: InitScheme,
    seed: u64,
) -> Result<ParameterStore> {
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("init_parameters: empty shape map".into()));
    }
    if let InitScheme::Uniform(r) = scheme {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "init_parameters: uniform radius must be positive, got {r}"
            )));
        }
    }
    let mut sorted: Vec<&(String, Vec<usize>)> = shapes.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::DuplicateParameter(w[0].0.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = BTreeMap::new();
    for (name, shape) in sorted {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape: shape.clone(),
                reason: format!("zero-sized shape for parameter {name}"),
            });
        }
        let numel: usize = shape.iter().product();
        let data = match scheme {
            InitScheme::Zeros => vec![0.0; numel],
            InitScheme::Uniform(r) => (0..numel).map(|_| rng.gen_range(-r..=r)).collect(),
            InitScheme::ScaledUniform => {
                let (fan_in, fan_out) = match shape.len() {
                    0 => (1usize, 1usize),
                    1 => (shape[0], 1),
                    _ => (shape[1..].iter().product(), shape[0]),
                };
                let l = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-l..=l)).collect()
            }
        };
        entries.insert(name.clone(), Tensor::new(shape.clone(), data)?);
    }
    Ok(ParameterStore { entries, seed })
}

impl ParameterStore {
    pub fn empty(seed: u64) -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.entries.insert(name.to_string(), t);
        Ok(())
    }

    /// Move every entry of `other` into `self`; shared names are rejected.
    pub fn absorb(&mut self, other: ParameterStore) -> Result<()> {
        for (name, t) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::DuplicateParameter(name));
            }
            self.entries.insert(name, t);
        }
        Ok(())
    }

    /// Names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }
}

/// dLoss/dParam per parameter name; shapes match the owning store pairwise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    entries: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn new() -> Self {
        GradientMap::default()
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.entries.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accumulate `other * scale` into self, creating entries as needed.
    pub fn add_scaled(&mut self, other: &GradientMap, scale: f64) {
        for (name, t) in other.entries.iter() {
            match self.entries.get_mut(name) {
                Some(mine) => {
                    for (a, b) in mine.data_mut().iter_mut().zip(t.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let mut scaled = t.clone();
                    for v in scaled.data_mut() {
                        *v *= scale;
                    }
                    self.entries.insert(name.clone(), scaled);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.entries.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
