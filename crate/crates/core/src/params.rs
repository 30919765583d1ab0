//! Named parameter storage shared by the model modules and the optimizer.
//!
//! Parameters live outside any tape; each forward pass binds them onto a
//! fresh [`Tape`](crate::graph::Tape) as differentiable leaves and the
//! optimizer consumes the per-parameter gradients afterwards.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::graph::{Matrix, NodeId, Tape};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in `[-1/fan_in, 1/fan_in]` — small values bounded by the
    /// inverse of the number of input nodes.
    InverseFanIn,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    ScaledUniform,
}

pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    by_name: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.by_name.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Random weight matrix; biases should use [`ParamStore::add`] with zeros.
    pub fn add_weight(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> ParamId {
        let bound = match scheme {
            InitScheme::InverseFanIn => 1.0 / rows as f64,
            InitScheme::ScaledUniform => 1.0 / (rows as f64).sqrt(),
        };
        let value = Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Bind every parameter onto a tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let nodes = self.values.iter().map(|v| tape.leaf(v.clone())).collect();
        BoundParams { nodes }
    }
}

/// Tape nodes for one binding of a [`ParamStore`].
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }
}
