use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Location of one named parameter tensor inside the flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.offset..self.offset + self.len]
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
}

/// Registers parameter tensors while a model is being constructed and
/// draws their initial values from one seeded stream.
pub struct ParamBuilder {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder { specs: Vec::new(), values: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Slot {
        let name = name.into();
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        let len = shape.iter().product();
        let slot = Slot { offset: self.values.len(), len };
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat(0.0).take(len)),
            Init::Ones => self.values.extend(std::iter::repeat(1.0).take(len)),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                for _ in 0..len {
                    self.values.push(dist.sample(&mut self.rng));
                }
            }
        }
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), slot });
        slot
    }

    pub fn finish(self) -> ParamSet {
        ParamSet { specs: self.specs, values: self.values }
    }
}

/// All parameters of one model in a single contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Name of the tensor holding flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.specs.iter().find(|s| s.slot.range().contains(&i)).map(|s| s.name.as_str())
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Number of values in tensors whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.specs.iter().filter(|s| s.name.starts_with(prefix)).map(|s| s.slot.len).sum()
    }
}
