//! Reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! A [`Graph`] records operations append-only, so node ids are already a
//! topological order and backward is a single reverse sweep. Everything is
//! `f64`; gradient-check tests rely on the extra precision.

use ndarray::{Array1, Array2, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

enum Op {
    Leaf,
    /// a (r×k) · b (k×c)
    MatMul(VarId, VarId),
    Transpose(VarId),
    /// Elementwise sum, same shape.
    Add(VarId, VarId),
    AddN(Vec<VarId>),
    /// a (l×d) + row (1×d) broadcast over rows.
    AddRow(VarId, VarId),
    /// Elementwise product, same shape.
    Mul(VarId, VarId),
    /// Elementwise product with a constant (dropout masks and the like).
    MulConst(VarId),
    Scale(VarId, f64),
    /// Softmax over each row.
    RowSoftmax(VarId),
    Sigmoid(VarId),
    Relu(VarId),
    /// Row-wise layer norm with learnable gain/shift (both 1×d).
    LayerNorm {
        input: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    },
    ConcatRows(Vec<VarId>),
    ConcatCols(Vec<VarId>),
    /// Row lookup into `table`; duplicate indices accumulate gradient.
    GatherRows { table: VarId, indices: Vec<usize> },
    /// Column-wise max over rows → 1×d. Ties resolve to the first row.
    ColMax(VarId),
    /// Column-wise mean over rows → 1×d.
    ColMean(VarId),
    Exp(VarId),
    Ln(VarId),
    /// cos(input, other) → 1×1 with cos(·, 0) := 0 (zero gradient there).
    CosineConst { input: VarId, other: Array1<f64> },
    /// Numerically stable binary cross-entropy on a 1×1 logit.
    BceWithLogit { logit: VarId, target: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    /// Kept for ops whose backward needs the pre-activation input.
    aux: Option<Array2<f64>>,
}

/// Computation tape. Build one per forward pass and discard it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node. Zero-filled if the
    /// node did not influence the loss.
    pub fn wrt(&self, id: VarId, shape: (usize, usize)) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }

    pub fn get(&self, id: VarId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-1x1 node");
        v[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> VarId {
        self.push_aux(value, op, None)
    }

    fn push_aux(&mut self, value: Array2<f64>, op: Op, aux: Option<Array2<f64>>) -> VarId {
        self.nodes.push(Node { value, op, aux });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_row(&mut self, value: Array1<f64>) -> VarId {
        let n = value.len();
        self.leaf(value.into_shape_with_order((1, n)).unwrap())
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ar, ak) = self.value(a).dim();
        let (bk, bc) = self.value(b).dim();
        assert_eq!(ak, bk, "matmul inner dims {ar}x{ak} vs {bk}x{bc}");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_n(&mut self, terms: &[VarId]) -> VarId {
        assert!(!terms.is_empty(), "add_n on empty slice");
        let mut v = self.value(terms[0]).clone();
        for t in &terms[1..] {
            assert_eq!(self.value(*t).dim(), v.dim(), "add_n shape mismatch");
            v += self.value(*t);
        }
        self.push(v, Op::AddN(terms.to_vec()))
    }

    /// Broadcast-add a 1×d row vector to every row of `a`.
    pub fn add_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (_, d) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, d), "add_row expects 1x{d}");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: VarId, c: &Array2<f64>) -> VarId {
        assert_eq!(self.value(a).dim(), c.dim(), "mul_const shape mismatch");
        let v = self.value(a) * c;
        self.push_aux(v, Op::MulConst(a), Some(c.clone()))
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn row_softmax(&mut self, a: VarId) -> VarId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn layer_norm(&mut self, input: VarId, gamma: VarId, beta: VarId, eps: f64) -> VarId {
        let x = self.value(input);
        let (_, d) = x.dim();
        assert_eq!(self.value(gamma).dim(), (1, d));
        assert_eq!(self.value(beta).dim(), (1, d));
        let mut hat = x.clone();
        for mut row in hat.rows_mut() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        let v = &hat * self.value(gamma) + self.value(beta);
        self.push_aux(v, Op::LayerNorm { input, gamma, beta, eps }, Some(hat))
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let d = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut v = Array2::zeros((rows, d));
        let mut at = 0;
        for p in parts {
            let block = self.value(*p);
            assert_eq!(block.ncols(), d, "concat_rows width mismatch");
            v.slice_mut(ndarray::s![at..at + block.nrows(), ..])
                .assign(block);
            at += block.nrows();
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Array2::zeros((r, cols));
        let mut at = 0;
        for p in parts {
            let block = self.value(*p);
            assert_eq!(block.nrows(), r, "concat_cols height mismatch");
            v.slice_mut(ndarray::s![.., at..at + block.ncols()])
                .assign(block);
            at += block.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, table: VarId, indices: &[usize]) -> VarId {
        let t = self.value(table);
        let d = t.ncols();
        let mut v = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).assign(&t.row(i));
        }
        self.push(
            v,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn col_max(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let (_, d) = x.dim();
        let mut v = Array2::zeros((1, d));
        for c in 0..d {
            v[(0, c)] = x.column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        self.push(v, Op::ColMax(a))
    }

    pub fn col_mean(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let v = x
            .mean_axis(Axis(0))
            .unwrap()
            .into_shape_with_order((1, x.ncols()))
            .unwrap();
        self.push(v, Op::ColMean(a))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    /// Cosine similarity between a 1×w node and a constant vector.
    /// Either side having zero norm yields exactly 0 with zero gradient.
    pub fn cosine_const(&mut self, input: VarId, other: &Array1<f64>) -> VarId {
        let a = self.value(input);
        assert_eq!(a.nrows(), 1, "cosine_const expects a row vector");
        assert_eq!(a.ncols(), other.len(), "cosine_const width mismatch");
        let na = a.row(0).dot(&a.row(0)).sqrt();
        let nb = other.dot(other).sqrt();
        let cos = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.row(0).dot(other) / (na * nb)
        };
        self.push(
            Array2::from_elem((1, 1), cos),
            Op::CosineConst {
                input,
                other: other.clone(),
            },
        )
    }

    /// −[y·ln σ(z) + (1−y)·ln(1−σ(z))] evaluated stably from the logit.
    pub fn bce_with_logit(&mut self, logit: VarId, target: f64) -> VarId {
        let z = self.scalar(logit);
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::BceWithLogit { logit, target },
        )
    }

    /// Backpropagate from a 1×1 loss node.
    pub fn backward(&self, loss: VarId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = gout.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gout);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, gout.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gout.clone());
                    accumulate(&mut grads, *b, gout);
                }
                Op::AddN(terms) => {
                    for t in terms {
                        accumulate(&mut grads, *t, gout.clone());
                    }
                }
                Op::AddRow(a, row) => {
                    let grow = gout
                        .sum_axis(Axis(0))
                        .into_shape_with_order((1, gout.ncols()))
                        .unwrap();
                    accumulate(&mut grads, *a, gout);
                    accumulate(&mut grads, *row, grow);
                }
                Op::Mul(a, b) => {
                    let ga = &gout * self.value(*b);
                    let gb = &gout * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulConst(a) => {
                    let c = node.aux.as_ref().unwrap();
                    accumulate(&mut grads, *a, &gout * c);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, &gout * *s),
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut gin = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = gout.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(y, g)| y * g).sum();
                        for c in 0..y.ncols() {
                            gin[(r, c)] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gin);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, &gout * &(y * &(1.0 - y)));
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &gout * &mask);
                }
                Op::LayerNorm { input, gamma, beta, eps } => {
                    let hat = node.aux.as_ref().unwrap();
                    let x = self.value(*input);
                    let g = self.value(*gamma);
                    let (_, d) = x.dim();
                    let dgamma = (&gout * hat)
                        .sum_axis(Axis(0))
                        .into_shape_with_order((1, d))
                        .unwrap();
                    let dbeta = gout
                        .sum_axis(Axis(0))
                        .into_shape_with_order((1, d))
                        .unwrap();
                    let mut gin = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let row = x.row(r);
                        let mean = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                        let inv = 1.0 / (var + eps).sqrt();
                        // dL/dx̂ for this row
                        let dhat: Vec<f64> =
                            (0..d).map(|c| gout[(r, c)] * g[(0, c)]).collect();
                        let mean_dhat: f64 = dhat.iter().sum::<f64>() / d as f64;
                        let mean_dhat_hat: f64 = (0..d)
                            .map(|c| dhat[c] * hat[(r, c)])
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            gin[(r, c)] =
                                (dhat[c] - mean_dhat - hat[(r, c)] * mean_dhat_hat) * inv;
                        }
                    }
                    accumulate(&mut grads, *input, gin);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        let block = gout.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        accumulate(&mut grads, *p, block);
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        let block = gout.slice(ndarray::s![.., at..at + cols]).to_owned();
                        accumulate(&mut grads, *p, block);
                        at += cols;
                    }
                }
                Op::GatherRows { table, indices } => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (r, &i) in indices.iter().enumerate() {
                        let mut dst = gt.row_mut(i);
                        dst += &gout.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ColMax(a) => {
                    let x = self.value(*a);
                    let mut gin = Array2::zeros(x.dim());
                    for c in 0..x.ncols() {
                        let mut best = 0;
                        for r in 1..x.nrows() {
                            if x[(r, c)] > x[(best, c)] {
                                best = r;
                            }
                        }
                        gin[(best, c)] = gout[(0, c)];
                    }
                    accumulate(&mut grads, *a, gin);
                }
                Op::ColMean(a) => {
                    let x = self.value(*a);
                    let n = x.nrows() as f64;
                    let mut gin = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        for c in 0..x.ncols() {
                            gin[(r, c)] = gout[(0, c)] / n;
                        }
                    }
                    accumulate(&mut grads, *a, gin);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, &gout * &node.value),
                Op::Ln(a) => {
                    let gin = &gout / self.value(*a);
                    accumulate(&mut grads, *a, gin);
                }
                Op::CosineConst { input, other } => {
                    let a = self.value(*input);
                    let na = a.row(0).dot(&a.row(0)).sqrt();
                    let nb = other.dot(other).sqrt();
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let cos = node.value[(0, 0)];
                    let g = gout[(0, 0)];
                    let mut gin = Array2::zeros(a.dim());
                    for c in 0..a.ncols() {
                        gin[(0, c)] = g * (other[c] / (na * nb) - cos * a[(0, c)] / (na * na));
                    }
                    accumulate(&mut grads, *input, gin);
                }
                Op::BceWithLogit { logit, target } => {
                    let z = self.value(*logit)[(0, 0)];
                    let gin = Array2::from_elem((1, 1), gout[(0, 0)] * (sigmoid(z) - target));
                    accumulate(&mut grads, *logit, gin);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: VarId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
