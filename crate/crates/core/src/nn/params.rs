//! Named parameter storage shared by every network.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Tensor};

/// Index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// An ordered, named collection of trainable arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(Param { name: name.into(), value });
        id
    }

    /// Total number of scalar coefficients.
    pub fn coefficient_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Bind every parameter onto the graph as a tracked leaf, aligned with
    /// parameter order. On a non-recording graph the tensors are constants.
    pub fn bind(&self, g: &Graph) -> Vec<Tensor> {
        self.entries.iter().map(|p| g.leaf(p.value.clone())).collect()
    }

    /// Replace all values with the same-shaped values of `other`.
    pub fn assign_from(&mut self, other: &ParamSet) {
        assert_eq!(self.len(), other.len(), "param set size mismatch");
        for (dst, src) in self.entries.iter_mut().zip(other.entries.iter()) {
            assert_eq!(dst.value.shape(), src.value.shape(), "param {} shape", dst.name);
            dst.value.assign(&src.value);
        }
    }
}

/// Registers parameters with deterministic random initialization.
pub struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
    scope: Vec<String>,
}

impl ParamBuilder {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { set: ParamSet::default(), rng, scope: Vec::new() }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push(name.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    fn qualify(&self, name: &str) -> String {
        if self.scope.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.scope.join("."), name)
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let values: Vec<f64> =
            (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal) * std).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(shape), values).expect("shape");
        self.set.push(self.qualify(name), arr)
    }

    /// He initialization for a layer with the given fan-in.
    pub fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        self.normal(name, shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.set.push(self.qualify(name), ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.set.push(self.qualify(name), ArrayD::from_elem(IxDyn(shape), 1.0))
    }

    pub fn build(self) -> ParamSet {
        self.set
    }
}
