//! Named parameter storage, initialization, and the Adam update rule.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, VarId};

/// All trainable tensors of a model, keyed by dotted path.
/// Insertion order is stable, which keeps updates and checkpoints
/// deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().cloned().collect(),
        }
    }

    fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).unwrap()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            self.tensors
                .insert(name.to_string(), Tensor::from_array(&value))
                .is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .to_array()
    }

    pub fn set(&mut self, name: &str, value: &Array2<f64>) {
        let slot = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        *slot = Tensor::from_array(value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Xavier-uniform init for weight matrices.
    pub fn init_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha20Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.insert(name, value);
    }

    /// Small-normal init used for embedding tables.
    pub fn init_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut ChaCha20Rng) {
        let value = Array2::from_shape_fn((rows, cols), |_| {
            // Box-Muller keeps us off rand_distr for one distribution.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        self.insert(name, value);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Array2::zeros((rows, cols)));
    }

    pub fn init_ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Array2::ones((rows, cols)));
    }
}

/// Binds parameters into a graph as leaves, memoizing per name so each
/// parameter appears exactly once and gradient accumulation is automatic.
pub struct Binder<'a> {
    store: &'a ParamStore,
    bound: IndexMap<String, VarId>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            bound: IndexMap::new(),
        }
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str) -> VarId {
        if let Some(id) = self.bound.get(name) {
            return *id;
        }
        let id = g.leaf(self.store.get(name));
        self.bound.insert(name.to_string(), id);
        id
    }

    /// Gradients per bound parameter name, in bind order.
    pub fn collect_grads(
        &self,
        g: &Graph,
        grads: &crate::graph::Gradients,
    ) -> IndexMap<String, Array2<f64>> {
        let mut out = IndexMap::new();
        for (name, id) in &self.bound {
            let shape = g.value(*id).dim();
            out.insert(name.clone(), grads.wrt(*id, shape));
        }
        out
    }

    pub fn bound_var(&self, name: &str) -> Option<VarId> {
        self.bound.get(name).copied()
    }
}

/// Adam with bias correction. State lives beside the store it updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, Array2<f64>>,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, grad) in grads {
            let mut value = store.get(name);
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| {
                    let z = Tensor::from_array(&Array2::zeros(grad.dim()));
                    (z.clone(), z)
                });
            let mut ma = m.to_array();
            let mut va = v.to_array();
            ma.zip_mut_with(grad, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            va.zip_mut_with(grad, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, m), v) in value.iter_mut().zip(ma.iter()).zip(va.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            *m = Tensor::from_array(&ma);
            *v = Tensor::from_array(&va);
            store.set(name, &value);
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
