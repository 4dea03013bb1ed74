//! Reusable network building blocks: linear maps, multi-head self-attention,
//! transformer encoder layers, dropout masks.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::graph::{Graph, VarId};
use crate::params::{Binder, ParamStore};

const LN_EPS: f64 = 1e-5;

/// y = x·W (+ b). Parameters are registered under `prefix.weight` /
/// `prefix.bias`.
#[derive(Debug, Clone)]
pub struct Linear {
    prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        store.init_xavier(&format!("{prefix}.weight"), in_dim, out_dim, rng);
        if bias {
            store.init_zeros(&format!("{prefix}.bias"), 1, out_dim);
        }
        Self {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
            bias,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: VarId) -> VarId {
        let w = b.bind(g, &format!("{}.weight", self.prefix));
        let y = g.matmul(x, w);
        if self.bias {
            let bias = b.bind(g, &format!("{}.bias", self.prefix));
            g.add_row(y, bias)
        } else {
            y
        }
    }
}

/// Learnable row-wise layer norm under `prefix.gamma` / `prefix.beta`.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    prefix: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        store.init_ones(&format!("{prefix}.gamma"), 1, dim);
        store.init_zeros(&format!("{prefix}.beta"), 1, dim);
        Self {
            prefix: prefix.to_string(),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: VarId) -> VarId {
        let gamma = b.bind(g, &format!("{}.gamma", self.prefix));
        let beta = b.bind(g, &format!("{}.beta", self.prefix));
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Scaled dot-product self-attention with per-head projections and a final
/// output map. Head weight matrices are kept per head so attention maps can
/// be exported raw.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    prefix: String,
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub bias: bool,
}

/// Forward result: fused output plus one l×l row-stochastic matrix per head.
pub struct AttentionOutput {
    pub output: VarId,
    pub weights: Vec<Array2<f64>>,
}

impl MultiHeadAttention {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        bias: bool,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        let head_dim = dim / heads;
        for h in 0..heads {
            store.init_xavier(&format!("{prefix}.q.{h}"), dim, head_dim, rng);
            store.init_xavier(&format!("{prefix}.k.{h}"), dim, head_dim, rng);
            store.init_xavier(&format!("{prefix}.v.{h}"), dim, head_dim, rng);
        }
        store.init_xavier(&format!("{prefix}.out"), dim, dim, rng);
        if bias {
            store.init_zeros(&format!("{prefix}.out_bias"), 1, dim);
        }
        Self {
            prefix: prefix.to_string(),
            dim,
            heads,
            head_dim,
            bias,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: VarId) -> AttentionOutput {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq = b.bind(g, &format!("{}.q.{h}", self.prefix));
            let wk = b.bind(g, &format!("{}.k.{h}", self.prefix));
            let wv = b.bind(g, &format!("{}.v.{h}", self.prefix));
            let q = g.matmul(x, wq);
            let k = g.matmul(x, wk);
            let v = g.matmul(x, wv);
            let kt = g.transpose(k);
            let scores = g.matmul(q, kt);
            let scaled = g.scale(scores, scale);
            let attn = g.row_softmax(scaled);
            weights.push(g.value(attn).clone());
            heads.push(g.matmul(attn, v));
        }
        let concat = g.concat_cols(&heads);
        let wo = b.bind(g, &format!("{}.out", self.prefix));
        let mut out = g.matmul(concat, wo);
        if self.bias {
            let bias = b.bind(g, &format!("{}.out_bias", self.prefix));
            out = g.add_row(out, bias);
        }
        AttentionOutput { output: out, weights }
    }

    /// Parameter names of the projection matrices, for gradient checks and
    /// export tooling.
    pub fn projection_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for h in 0..self.heads {
            names.push(format!("{}.q.{h}", self.prefix));
            names.push(format!("{}.k.{h}", self.prefix));
            names.push(format!("{}.v.{h}", self.prefix));
        }
        names.push(format!("{}.out", self.prefix));
        names
    }
}

/// Post-norm transformer encoder layer: attention and feed-forward blocks,
/// each with a residual connection and layer norm.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attention: MultiHeadAttention,
    ffn_in: Linear,
    ffn_out: Linear,
    norm1: LayerNorm,
    norm2: LayerNorm,
}

impl TransformerLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        Self {
            attention: MultiHeadAttention::init(store, &format!("{prefix}.attn"), dim, heads, true, rng),
            ffn_in: Linear::init(store, &format!("{prefix}.ffn_in"), dim, ffn_dim, true, rng),
            ffn_out: Linear::init(store, &format!("{prefix}.ffn_out"), ffn_dim, dim, true, rng),
            norm1: LayerNorm::init(store, &format!("{prefix}.norm1"), dim),
            norm2: LayerNorm::init(store, &format!("{prefix}.norm2"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: VarId) -> VarId {
        let attn = self.attention.forward(g, b, x);
        let res1 = g.add(x, attn.output);
        let x1 = self.norm1.forward(g, b, res1);
        let h = self.ffn_in.forward(g, b, x1);
        let h = g.relu(h);
        let h = self.ffn_out.forward(g, b, h);
        let res2 = g.add(x1, h);
        self.norm2.forward(g, b, res2)
    }
}

/// Inverted dropout mask: entries are 0 or 1/(1−p). Multiply with the
/// activations during training; skip entirely in evaluation mode.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ChaCha20Rng) -> Array2<f64> {
    assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
    let keep = 1.0 - p;
    Array2::from_shape_fn(shape, |_| {
        if rng.gen_range(0.0..1.0f64) < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn attention_output_shape_and_row_stochastic_weights() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::init(&mut store, "attn", 16, 4, false, &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let x = g.leaf(Array2::from_shape_fn((10, 16), |(i, j)| {
            ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5
        }));
        let out = mha.forward(&mut g, &mut b, x);
        assert_eq!(g.value(out.output).dim(), (10, 16));
        assert_eq!(out.weights.len(), 4);
        for w in &out.weights {
            assert_eq!(w.dim(), (10, 10));
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transformer_layer_preserves_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let mut store = ParamStore::new();
        let layer = TransformerLayer::init(&mut store, "l0", 12, 3, 24, &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let x = g.leaf(Array2::from_shape_fn((5, 12), |(i, j)| (i + j) as f64 * 0.01));
        let y = layer.forward(&mut g, &mut b, x);
        assert_eq!(g.value(y).dim(), (5, 12));
    }

    #[test]
    fn dropout_mask_values_and_determinism() {
        let mut r1 = ChaCha20Rng::seed_from_u64(23);
        let mut r2 = ChaCha20Rng::seed_from_u64(23);
        let m1 = dropout_mask((8, 8), 0.5, &mut r1);
        let m2 = dropout_mask((8, 8), 0.5, &mut r2);
        assert_eq!(m1, m2);
        assert!(m1.iter().all(|&x| x == 0.0 || (x - 2.0).abs() < 1e-12));
    }
}
