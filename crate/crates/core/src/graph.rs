//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are
//! appended in evaluation order, so the tape is already topologically
//! sorted and [`Graph::backward`] simply walks it in reverse.
//!
//! ```
//! use cup_curriculum::graph::Graph;
//! use cup_curriculum::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, ShapeBuilder};
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        groups: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Relu {
        x: NodeId,
    },
    Gelu {
        x: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Dropout {
        x: NodeId,
        keep: Vec<f64>,
    },
    Transpose {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    SplitHeads {
        x: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    CausalSoftmax {
        x: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<usize>,
}

/// Recorded computation. Single-use: build, evaluate, differentiate, drop.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, if any
    /// path reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, param: Option<usize>) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn vals(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.values()
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false, None)
    }

    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf holding a copy of parameter `id`; its gradient is routed back by
    /// [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: usize) -> NodeId {
        let p = store.get(id);
        let value = Tensor::new(p.tensor.shape().to_vec(), p.tensor.values().to_vec())
            .expect("parameter tensor is well-formed");
        self.push(value, Op::Leaf, true, Some(id))
    }

    /// `(.., k) x (k, n) -> (.., n)`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (self.nodes[a.0].value.rows(), sb[0], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.vals(a), false, self.vals(b), false, &mut out, 0.0);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg, None))
    }

    /// Batched product `(g, m, k) x (g, k, n)`, or `(g, m, k) x (g, n, k)^T`
    /// when `trans_b`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::Shape(format!("bmm {sa:?} x {sb:?}")));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::Shape(format!(
                "bmm inner dims {sa:?} x {sb:?} (trans_b={trans_b})"
            )));
        }
        let mut out = vec![0.0; g * m * n];
        let (av, bv) = (self.vals(a), self.vals(b));
        for gi in 0..g {
            gemm(
                m,
                k,
                n,
                &av[gi * m * k..(gi + 1) * m * k],
                false,
                &bv[gi * k * n..(gi + 1) * k * n],
                trans_b,
                &mut out[gi * m * n..(gi + 1) * m * n],
                0.0,
            );
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![g, m, n], out)?,
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                groups: g,
            },
            rg,
            None,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<f64> = self.vals(a).iter().zip(self.vals(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg, None))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let cols = self.nodes[x.0].value.cols();
        if self.vals(bias).len() != cols {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                self.shape(x),
                self.shape(bias)
            )));
        }
        let b = self.vals(bias);
        let out: Vec<f64> = self
            .vals(x)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow { x, bias }, rg, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("mul {:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<f64> = self.vals(a).iter().zip(self.vals(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg, None))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.vals(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Scale { x, factor }, rg, None)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.vals(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Relu { x }, rg, None)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.vals(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Gelu { x }, rg, None)
    }

    /// Normalizes each row of `x` over its last axis, then applies the affine
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let cols = self.nodes[x.0].value.cols();
        if self.vals(gamma).len() != cols || self.vals(beta).len() != cols {
            return Err(Error::Shape(format!(
                "layer_norm over {cols} features with gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.nodes[x.0].value.rows();
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut rstd = Vec::with_capacity(rows);
        for row in self.vals(x).chunks_exact(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|v| (v - mean) * r));
        }
        let (g, b) = (self.vals(gamma), self.vals(beta));
        let out: Vec<f64> = xhat
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(g.iter().zip(b)).map(|(h, (g, b))| h * g + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
            None,
        ))
    }

    /// Gathers rows of a `(vocab, dim)` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::Shape(format!("embedding table must be 2-D, got {ts:?}")));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("embedding id {bad} >= table size {vocab}")));
        }
        let tv = self.vals(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), dim], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
            None,
        ))
    }

    /// Inverted dropout: in training, zeroes each element with probability `p`
    /// and scales survivors by `1 / (1 - p)`. Outside training (or at `p = 0`)
    /// it returns `x` itself.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, train: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..self.vals(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let out: Vec<f64> = self.vals(x).iter().zip(&keep).map(|(v, k)| v * k).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { x, keep }, rg, None))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose needs 2-D input, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.vals(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { x }, rg, None))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = Tensor::new(shape, self.vals(x).to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg, None))
    }

    /// `(batch * seq, heads * dh) -> (batch * heads, seq, dh)`.
    pub fn split_heads(&mut self, x: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != batch * seq || heads == 0 || !s[1].is_multiple_of(heads) {
            return Err(Error::Shape(format!(
                "split_heads {s:?} into batch {batch} seq {seq} heads {heads}"
            )));
        }
        let dh = s[1] / heads;
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for b in 0..batch {
            for t in 0..seq {
                let src = (b * seq + t) * heads * dh;
                for h in 0..heads {
                    let dst = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&v[src + h * dh..src + (h + 1) * dh]);
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![batch * heads, seq, dh], out)?,
            Op::SplitHeads { x, batch, seq, heads },
            rg,
            None,
        ))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[0] != batch * heads || s[1] != seq {
            return Err(Error::Shape(format!(
                "merge_heads {s:?} from batch {batch} seq {seq} heads {heads}"
            )));
        }
        let dh = s[2];
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for b in 0..batch {
            for t in 0..seq {
                let dst = (b * seq + t) * heads * dh;
                for h in 0..heads {
                    let src = ((b * heads + h) * seq + t) * dh;
                    out[dst + h * dh..dst + (h + 1) * dh].copy_from_slice(&v[src..src + dh]);
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![batch * seq, heads * dh], out)?,
            Op::MergeHeads { x, batch, seq, heads },
            rg,
            None,
        ))
    }

    /// Row softmax over `(g, t, t)` scores where row `i` only sees columns
    /// `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::Shape(format!("causal_softmax needs (g, t, t), got {s:?}")));
        }
        let t = s[1];
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for (row_idx, (src, dst)) in v.chunks_exact(t).zip(out.chunks_exact_mut(t)).enumerate() {
            let visible = row_idx % t + 1;
            let max = src[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..visible {
                let e = (src[j] - max).exp();
                dst[j] = e;
                z += e;
            }
            dst[..visible].iter_mut().for_each(|e| *e /= z);
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(s, out)?, Op::CausalSoftmax { x }, rg, None))
    }

    /// Mean cross-entropy of `(positions, vocab)` logits against target ids,
    /// computed with a max shift for stability.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (rows, vocab) = (self.nodes[logits.0].value.rows(), self.nodes[logits.0].value.cols());
        if targets.len() != rows {
            return Err(Error::Shape(format!("{} targets for {rows} logit rows", targets.len())));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index(format!("target {bad} >= vocab size {vocab}")));
        }
        let mut probs = Vec::with_capacity(rows * vocab);
        let mut total = 0.0;
        for (row, &t) in self.vals(logits).chunks_exact(vocab).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[t];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
            None,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.vals(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum { x }, rg, None)
    }

    /// Reverse pass from a scalar node. Gradients accumulate into the
    /// per-node buffers of this graph; call
    /// [`Graph::accumulate_param_grads`] to route them to parameters.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &upstream);
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into the store's gradient
    /// buffers. Parameters unreachable from the loss are left untouched.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some(pid), Some(g)) = (node.param, grad) {
                let dst = store.get_mut(pid).tensor.grad_mut();
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
    }

    fn backprop_node(&mut self, i: usize, dy: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |id: &NodeId| nodes[id.0].value.values();
        let rg = |id: &NodeId| nodes[id.0].requires_grad;
        macro_rules! acc {
            ($id:expr) => {
                accumulator(nodes, grads, $id)
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.cols();
                if rg(a) {
                    let bv = val(b);
                    let ga = acc!(*a).unwrap();
                    gemm(m, n, k, dy, false, bv, true, ga, 1.0);
                }
                if rg(b) {
                    let av = val(a);
                    let gb = acc!(*b).unwrap();
                    gemm(k, m, n, av, true, dy, false, gb, 1.0);
                }
            }
            Op::BatchMatMul { a, b, trans_b, groups } => {
                let g = *groups;
                let sa = nodes[a.0].value.shape().to_vec();
                let (m, k) = (sa[1], sa[2]);
                let n = dy.len() / (g * m);
                if rg(a) {
                    let bv = val(b);
                    let ga = acc!(*a).unwrap();
                    for gi in 0..g {
                        gemm(
                            m,
                            n,
                            k,
                            &dy[gi * m * n..(gi + 1) * m * n],
                            false,
                            &bv[gi * k * n..(gi + 1) * k * n],
                            !*trans_b,
                            &mut ga[gi * m * k..(gi + 1) * m * k],
                            1.0,
                        );
                    }
                }
                if rg(b) {
                    let av = val(a);
                    let gb = acc!(*b).unwrap();
                    for gi in 0..g {
                        let dyg = &dy[gi * m * n..(gi + 1) * m * n];
                        let ag = &av[gi * m * k..(gi + 1) * m * k];
                        let gbg = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            // b is (n, k): db = dy^T a
                            gemm(n, m, k, dyg, true, ag, false, gbg, 1.0);
                        } else {
                            gemm(k, m, n, ag, true, dyg, false, gbg, 1.0);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if let Some(g) = acc!(id) {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(g) = acc!(*x) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = acc!(*bias) {
                    let cols = g.len();
                    for row in dy.chunks_exact(cols) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = val(a);
                let bv = val(b);
                if let Some(g) = acc!(*a) {
                    for ((g, d), w) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * w;
                    }
                }
                if let Some(g) = acc!(*b) {
                    for ((g, d), w) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * w;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(g) = acc!(*x) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * factor);
                }
            }
            Op::Relu { x } => {
                let xv = val(x);
                if let Some(g) = acc!(*x) {
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        if *v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = val(x);
                if let Some(g) = acc!(*x) {
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d * gelu_grad(*v);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = val(gamma);
                let cols = gv.len();
                if let Some(g) = acc!(*gamma) {
                    for (drow, hrow) in dy.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for j in 0..cols {
                            g[j] += drow[j] * hrow[j];
                        }
                    }
                }
                if let Some(g) = acc!(*beta) {
                    for drow in dy.chunks_exact(cols) {
                        g.iter_mut().zip(drow).for_each(|(g, d)| *g += d);
                    }
                }
                if let Some(g) = acc!(*x) {
                    let inv_n = 1.0 / cols as f64;
                    for (r, ((grow, drow), hrow)) in g
                        .chunks_exact_mut(cols)
                        .zip(dy.chunks_exact(cols))
                        .zip(xhat.chunks_exact(cols))
                        .enumerate()
                    {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..cols {
                            let dh = drow[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..cols {
                            let dh = drow[j] * gv[j];
                            grow[j] += rstd[r] * (dh - inv_n * sum_dh - hrow[j] * inv_n * sum_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(g) = acc!(*table) {
                    let dim = dy.len() / ids.len().max(1);
                    for (row, &id) in dy.chunks_exact(dim).zip(ids) {
                        g[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if let Some(g) = acc!(*x) {
                    for ((g, d), k) in g.iter_mut().zip(dy).zip(keep) {
                        *g += d * k;
                    }
                }
            }
            Op::Transpose { x } => {
                let s = nodes[x.0].value.shape().to_vec();
                let (r, c) = (s[0], s[1]);
                if let Some(g) = acc!(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dy[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(g) = acc!(*x) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
            }
            Op::SplitHeads { x, batch, seq, heads } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                if let Some(g) = acc!(*x) {
                    let dh = g.len() / (batch * seq * heads);
                    for b in 0..batch {
                        for t in 0..seq {
                            let dst = (b * seq + t) * heads * dh;
                            for h in 0..heads {
                                let src = ((b * heads + h) * seq + t) * dh;
                                for j in 0..dh {
                                    g[dst + h * dh + j] += dy[src + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { x, batch, seq, heads } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                if let Some(g) = acc!(*x) {
                    let dh = g.len() / (batch * seq * heads);
                    for b in 0..batch {
                        for t in 0..seq {
                            let src = (b * seq + t) * heads * dh;
                            for h in 0..heads {
                                let dst = ((b * heads + h) * seq + t) * dh;
                                for j in 0..dh {
                                    g[dst + j] += dy[src + h * dh + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::CausalSoftmax { x } => {
                let y = nodes[i].value.values();
                let t = nodes[i].value.cols();
                if let Some(g) = acc!(*x) {
                    for ((grow, drow), yrow) in g.chunks_exact_mut(t).zip(dy.chunks_exact(t)).zip(y.chunks_exact(t)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for j in 0..t {
                            grow[j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let scale = dy[0] / targets.len() as f64;
                if let Some(g) = acc!(*logits) {
                    let vocab = probs.len() / targets.len();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut g[r * vocab..(r + 1) * vocab];
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        for j in 0..vocab {
                            row[j] += scale * p[j];
                        }
                        row[t] -= scale;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(g) = acc!(*x) {
                    g.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
        }
    }
}

fn accumulator<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut [f64]> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let n = nodes[id.0].value.len();
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// `c = op(a) * op(b) + beta * c` for row-major buffers, where `op(a)` is
/// `(m, k)` and `op(b)` is `(k, n)`. A transposed operand is stored in its
/// untransposed layout, i.e. `(k, m)` for `a` and `(n, k)` for `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let av = if trans_a {
        ArrayView2::from_shape((m, k).strides((1, m)), a)
    } else {
        ArrayView2::from_shape((m, k), a)
    }
    .expect("gemm lhs shape");
    let bv = if trans_b {
        ArrayView2::from_shape((k, n).strides((1, k)), b)
    } else {
        ArrayView2::from_shape((k, n), b)
    }
    .expect("gemm rhs shape");
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm output shape");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}
