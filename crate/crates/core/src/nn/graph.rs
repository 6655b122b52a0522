//! Tape-based reverse-mode differentiation over a closed set of layers.
//!
//! A [`Graph`] records one forward pass against a borrowed [`ParamStore`].
//! [`Graph::backward`] consumes the tape; calling it twice is an error.

use rand::Rng;

use super::ops;
use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Constant,
    Param(ParamId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        b_t: bool,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, F),
    Relu(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<F>,
        rstd: Vec<F>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<F>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Upsample {
        x: NodeId,
        factor: usize,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    AdaptivePool {
        x: NodeId,
        bins: usize,
    },
    L2Normalize {
        x: NodeId,
        norms: Vec<F>,
    },
    ConcatRows(Vec<NodeId>),
    StraightThrough(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
    },
    SmoothL1 {
        a: NodeId,
        b: NodeId,
        beta: F,
    },
    TimeDiff(NodeId),
    WeightedSum(Vec<(NodeId, F)>),
    Dropout {
        x: NodeId,
        mask: Vec<F>,
    },
}

struct Node<F: Real> {
    value: Option<Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Result of a backward pass: parameter gradients plus the gradient of the
/// loss with respect to every recorded node.
pub struct Backward<F: Real> {
    pub params: Gradients<F>,
    nodes: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Backward<F> {
    /// Gradient with respect to an intermediate node (`None` when it does not
    /// influence the loss through a differentiable path).
    pub fn node(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<'p, F: Real = f32> {
    store: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    consumed: bool,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn store(&self) -> &'p ParamStore<F> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.store.value(*p),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A non-differentiable input (also used for stop-gradient copies).
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Copies the current value of `x` into a constant node.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// `x[r×in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.cols() != wv.rows() {
            return shape_err(format!("linear: x {:?} w {:?}", xv.shape(), wv.shape()));
        }
        let (rows, d_in, d_out) = (xv.rows(), wv.rows(), wv.cols());
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.len() != d_out {
                    return shape_err(format!("linear bias {:?} for width {d_out}", bv.shape()));
                }
                Some(bv.data())
            }
            None => None,
        };
        let y = ops::linear(xv.data(), rows, wv.data(), d_in, d_out, bias);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(vec![rows, d_out], y)?, Op::Linear { x, w, b }, needs))
    }

    /// `a · b`, or `a · bᵀ` when `b_t`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, b_t: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (kb, n) = if b_t { (bv.cols(), bv.rows()) } else { (bv.rows(), bv.cols()) };
        if k != kb {
            return shape_err(format!("matmul: {:?} x {:?} (b_t={b_t})", av.shape(), bv.shape()));
        }
        let mut y = vec![F::zero(); m * n];
        ops::gemm(m, k, n, av.data(), false, bv.data(), b_t, F::zero(), &mut y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], y)?, Op::MatMul { a, b, b_t }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add: {:?} + {:?}", av.shape(), bv.shape()));
        }
        let mut y = av.clone();
        y.add_assign(bv)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, x: NodeId, s: F) -> NodeId {
        let mut y = self.value(x).clone();
        y.scale(s);
        let needs = self.needs(x);
        self.push(y, Op::Scale(x, s), needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.max(F::zero())).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| ops::gelu(*v)).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(y, Op::Gelu(x), needs)
    }

    /// Layer normalisation over the last dimension of a 2-D tensor.
    pub fn layernorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return shape_err(format!("layernorm width {d} vs affine {:?}", self.value(gamma).shape()));
        }
        let (y, mean, rstd) = ops::layernorm(xv.data(), d, self.value(gamma).data(), self.value(beta).data());
        let shape = xv.shape().to_vec();
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            needs,
        ))
    }

    /// Row lookup `table[ids]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (vocab, d) = (tv.rows(), tv.cols());
        let mut y = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return shape_err(format!("embedding id {id} >= table size {vocab}"));
            }
            y.extend_from_slice(tv.row(id));
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], y)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Causal multi-head attention on already-projected `q, k, v: [t×d]`.
    pub fn causal_attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.shape().len() != 2 {
            return shape_err(format!(
                "attention q {:?} k {:?} v {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            ));
        }
        let (t, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return shape_err(format!("model width {d} not divisible by {heads} heads"));
        }
        let (out, probs) = ops::causal_attention(qv.data(), kv.data(), vv.data(), t, d, heads);
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Tensor::new(vec![t, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            needs,
        ))
    }

    /// 1-D convolution of `x[c_in×t]` with `w[c_out×c_in×k]`, zero padding `pad`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2 || wv.shape().len() != 3 {
            return shape_err(format!("conv1d: x {:?} w {:?}", xv.shape(), wv.shape()));
        }
        let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, wc_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wc_in != c_in {
            return shape_err(format!("conv1d: {c_in} input channels, weight expects {wc_in}"));
        }
        let Some(t_out) = ops::conv_out_len(t, k, stride, pad) else {
            return shape_err(format!("conv1d: length {t} (pad {pad}) shorter than kernel {k}"));
        };
        let bias = match b {
            Some(b) if self.value(b).len() != c_out => {
                return shape_err(format!("conv1d bias {:?} for {c_out} channels", self.value(b).shape()))
            }
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let (y, _) = ops::conv1d(xv.data(), c_in, t, wv.data(), c_out, k, bias, stride, pad);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::new(vec![c_out, t_out], y)?,
            Op::Conv1d { x, w, b, stride, pad },
            needs,
        ))
    }

    /// Nearest-neighbour upsampling along time of `x[c×t]`.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || factor == 0 {
            return shape_err(format!("upsample: x {:?} factor {factor}", xv.shape()));
        }
        let (c, t) = (xv.rows(), xv.cols());
        let mut y = Vec::with_capacity(c * t * factor);
        for ch in 0..c {
            for v in xv.row(ch) {
                y.extend(std::iter::repeat(*v).take(factor));
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, t * factor], y)?, Op::Upsample { x, factor }, needs))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).transpose();
        let needs = self.needs(x);
        self.push(y, Op::Transpose(x), needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape(x), needs))
    }

    /// Average-pools `x[c×t]` into `[c×bins]` contiguous time windows.
    pub fn adaptive_pool(&mut self, x: NodeId, bins: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || bins == 0 || xv.cols() == 0 {
            return shape_err(format!("adaptive_pool: x {:?} bins {bins}", xv.shape()));
        }
        let (c, t) = (xv.rows(), xv.cols());
        let mut y = vec![F::zero(); c * bins];
        for ch in 0..c {
            let row = xv.row(ch);
            for bin in 0..bins {
                let (s, e) = ops::adaptive_bin(t, bins, bin);
                let sum: F = row[s..e].iter().copied().sum();
                y[ch * bins + bin] = sum / F::from_f64((e - s) as f64);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, bins], y)?, Op::AdaptivePool { x, bins }, needs))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut y = xv.data().to_vec();
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mut y[i * c..(i + 1) * c];
            let n = row.iter().map(|v| *v * *v).sum::<F>().sqrt().max(F::from_f64(1e-12));
            for v in row.iter_mut() {
                *v = *v / n;
            }
            norms.push(n);
        }
        let y = Tensor::new(xv.shape().to_vec(), y).expect("same shape");
        let needs = self.needs(x);
        self.push(y, Op::L2Normalize { x, norms }, needs)
    }

    /// Stacks 2-D tensors (or 1-D rows) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return shape_err("concat_rows of nothing".into());
        };
        let width = |v: &Tensor<F>| if v.shape().len() == 1 { (1, v.len()) } else { (v.rows(), v.cols()) };
        let c = width(self.value(*first)).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            let (pr, pc) = width(v);
            if pc != c {
                return shape_err(format!("concat_rows: width {pc} vs {c}"));
            }
            rows += pr;
            data.extend_from_slice(v.data());
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Forward value `quantized`, gradient routed unchanged to `z`.
    pub fn straight_through(&mut self, z: NodeId, quantized: Tensor<F>) -> Result<NodeId> {
        if self.value(z).shape() != quantized.shape() {
            return shape_err(format!(
                "straight_through: {:?} vs {:?}",
                self.value(z).shape(),
                quantized.shape()
            ));
        }
        let needs = self.needs(z);
        Ok(self.push(quantized, Op::StraightThrough(z), needs))
    }

    /// Mean token cross-entropy over rows with a target; `None` rows are masked.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (r, v) = (lv.rows(), lv.cols());
        if targets.len() != r {
            return shape_err(format!("cross_entropy: {r} rows, {} targets", targets.len()));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::Data("cross_entropy with every target masked".into()));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0f64;
        for (i, t) in targets.iter().enumerate() {
            let row = &mut probs[i * v..(i + 1) * v];
            ops::softmax_in_place(row);
            if let Some(t) = t {
                if *t >= v {
                    return shape_err(format!("target {t} outside {v} classes"));
                }
                loss -= row[*t].as_f64().max(1e-45).ln();
            }
        }
        let value = Tensor::scalar(F::from_f64(loss / count as f64));
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Mean smooth-L1 distance between equally shaped tensors.
    pub fn smooth_l1(&mut self, a: NodeId, b: NodeId, beta: F) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.is_empty() {
            return shape_err(format!("smooth_l1: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| ops::smooth_l1(*x - *y, beta).0.as_f64())
            .sum();
        let value = Tensor::scalar(F::from_f64(total / av.len() as f64));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::SmoothL1 { a, b, beta }, needs))
    }

    /// First differences along time of `x[c×t]`, giving `[c×(t-1)]`.
    pub fn time_diff(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (c, t) = (xv.rows(), xv.cols());
        if xv.shape().len() != 2 || t < 2 {
            return shape_err(format!("time_diff needs at least two steps, got {:?}", xv.shape()));
        }
        let mut y = Vec::with_capacity(c * (t - 1));
        for ch in 0..c {
            let row = xv.row(ch);
            y.extend(row.windows(2).map(|w| w[1] - w[0]));
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, t - 1], y)?, Op::TimeDiff(x), needs))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, F)]) -> Result<NodeId> {
        let mut total = F::zero();
        for (id, w) in terms {
            let v = self.value(*id);
            if v.len() != 1 {
                return shape_err(format!("weighted_sum term has shape {:?}", v.shape()));
            }
            total += *w * v.item();
        }
        let needs = terms.iter().any(|(id, _)| self.needs(*id));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), needs))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = F::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<F> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(y, Op::Dropout { x, mask }, needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<Backward<F>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.value(loss).shape()));
        }
        if !self.needs(loss) {
            return Err(Error::Data("loss does not depend on any parameter (detached graph)".into()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), F::one()));
        let mut param_grads: Vec<Option<Tensor<F>>> = vec![None; self.store.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            if let Op::Param(pid) = self.nodes[i].op {
                match &mut param_grads[pid.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g.clone()),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Backward {
            params: Gradients::from_vec(param_grads),
            nodes: grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, g: Tensor<F>) -> Result<()> {
        if !self.needs(id) {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, d_in, d_out) = (xv.rows(), wv.rows(), wv.cols());
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); rows * d_in];
                    ops::gemm(rows, d_out, d_in, gd, false, wv.data(), true, F::zero(), &mut dx);
                    self.accumulate(grads, *x, Tensor::new(vec![rows, d_in], dx)?)?;
                }
                if self.needs(*w) {
                    let mut dw = vec![F::zero(); d_in * d_out];
                    ops::gemm(d_in, rows, d_out, xv.data(), true, gd, false, F::zero(), &mut dw);
                    self.accumulate(grads, *w, Tensor::new(vec![d_in, d_out], dw)?)?;
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![F::zero(); d_out];
                        for r in 0..rows {
                            for (d, gv) in db.iter_mut().zip(&gd[r * d_out..(r + 1) * d_out]) {
                                *d += *gv;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        self.accumulate(grads, *b, Tensor::new(shape, db)?)?;
                    }
                }
            }
            Op::MatMul { a, b, b_t } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = g.cols();
                if self.needs(*a) {
                    // dA = dY · Bᵀ  (or dY · B when B was used transposed)
                    let mut da = vec![F::zero(); m * k];
                    ops::gemm(m, n, k, gd, false, bv.data(), !*b_t, F::zero(), &mut da);
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?)?;
                }
                if self.needs(*b) {
                    let db = if *b_t {
                        // B is [n×k]: dB = dYᵀ · A
                        let mut db = vec![F::zero(); n * k];
                        ops::gemm(n, m, k, gd, true, av.data(), false, F::zero(), &mut db);
                        db
                    } else {
                        let mut db = vec![F::zero(); k * n];
                        ops::gemm(k, m, n, av.data(), true, gd, false, F::zero(), &mut db);
                        db
                    };
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Scale(x, s) => {
                let mut dx = g.clone();
                dx.scale(*s);
                self.accumulate(grads, *x, dx)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(v, gv)| if *v > F::zero() { *gv } else { F::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = xv.data().iter().zip(gd).map(|(v, gv)| ops::gelu_grad(*v) * *gv).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let d = xv.cols();
                let rows = xv.rows();
                let mut dx = vec![F::zero(); rows * d];
                let mut dgamma = vec![F::zero(); d];
                let mut dbeta = vec![F::zero(); d];
                let inv_d = F::from_f64(1.0 / d as f64);
                for r in 0..rows {
                    let xr = &xv.data()[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut sum_dxhat = F::zero();
                    let mut sum_dxhat_xhat = F::zero();
                    for j in 0..d {
                        let xhat = (xr[j] - mu) * rs;
                        let dxhat = gr[j] * gam[j];
                        dgamma[j] += gr[j] * xhat;
                        dbeta[j] += gr[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (xr[j] - mu) * rs;
                        let dxhat = gr[j] * gam[j];
                        dx[r * d + j] = rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                let gshape = self.value(*gamma).shape().to_vec();
                self.accumulate(grads, *gamma, Tensor::new(gshape, dgamma)?)?;
                let bshape = self.value(*beta).shape().to_vec();
                self.accumulate(grads, *beta, Tensor::new(bshape, dbeta)?)?;
            }
            Op::Embedding { table, ids } => {
                if self.needs(*table) {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut dt = Tensor::zeros(tv.shape().to_vec());
                    for (r, id) in ids.iter().enumerate() {
                        for (dst, src) in dt.row_mut(*id).iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *dst += *src;
                        }
                    }
                    self.accumulate(grads, *table, dt)?;
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (t, d) = (qv.rows(), qv.cols());
                let (dq, dk, dv) =
                    ops::causal_attention_backward(qv.data(), kv.data(), vv.data(), probs, gd, t, d, *heads);
                self.accumulate(grads, *q, Tensor::new(vec![t, d], dq)?)?;
                self.accumulate(grads, *k, Tensor::new(vec![t, d], dk)?)?;
                self.accumulate(grads, *v, Tensor::new(vec![t, d], dv)?)?;
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let t_out = g.cols();
                let ck = c_in * k;
                if self.needs(*w) {
                    let cols = ops::im2col(xv.data(), c_in, t, k, *stride, *pad, t_out);
                    let mut dw = vec![F::zero(); c_out * ck];
                    ops::gemm(c_out, t_out, ck, gd, false, &cols, true, F::zero(), &mut dw);
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?)?;
                }
                if self.needs(*x) {
                    let mut dcols = vec![F::zero(); ck * t_out];
                    ops::gemm(ck, c_out, t_out, wv.data(), true, gd, false, F::zero(), &mut dcols);
                    let mut dx = vec![F::zero(); c_in * t];
                    ops::col2im(&dcols, c_in, t, k, *stride, *pad, t_out, &mut dx);
                    self.accumulate(grads, *x, Tensor::new(vec![c_in, t], dx)?)?;
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let db = (0..c_out).map(|co| gd[co * t_out..(co + 1) * t_out].iter().copied().sum()).collect();
                        let shape = self.value(*b).shape().to_vec();
                        self.accumulate(grads, *b, Tensor::new(shape, db)?)?;
                    }
                }
            }
            Op::Upsample { x, factor } => {
                let xv = self.value(*x);
                let (c, t) = (xv.rows(), xv.cols());
                let mut dx = vec![F::zero(); c * t];
                for ch in 0..c {
                    for s in 0..t {
                        let base = ch * t * factor + s * factor;
                        dx[ch * t + s] = gd[base..base + factor].iter().copied().sum();
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![c, t], dx)?)?;
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose())?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(shape)?)?;
            }
            Op::AdaptivePool { x, bins } => {
                let xv = self.value(*x);
                let (c, t) = (xv.rows(), xv.cols());
                let mut dx = vec![F::zero(); c * t];
                for ch in 0..c {
                    for bin in 0..*bins {
                        let (s, e) = ops::adaptive_bin(t, *bins, bin);
                        let share = gd[ch * bins + bin] / F::from_f64((e - s) as f64);
                        for d in &mut dx[ch * t + s..ch * t + e] {
                            *d += share;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![c, t], dx)?)?;
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.as_ref().expect("normalize output");
                let (r, c) = (y.rows(), y.cols());
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = &gd[i * c..(i + 1) * c];
                    let dot: F = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                    for j in 0..c {
                        dx[i * c + j] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::new(shape, dx)?)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    let shape = pv.shape().to_vec();
                    self.accumulate(grads, *p, Tensor::new(shape, gd[offset..offset + n].to_vec())?)?;
                    offset += n;
                }
            }
            Op::StraightThrough(z) => {
                self.accumulate(grads, *z, g.clone())?;
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let count = targets.iter().filter(|t| t.is_some()).count();
                let scale = gd[0] / F::from_f64(count as f64);
                let mut dl = vec![F::zero(); lv.len()];
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        let row = &mut dl[i * v..(i + 1) * v];
                        for (d, p) in row.iter_mut().zip(&probs[i * v..(i + 1) * v]) {
                            *d = *p * scale;
                        }
                        row[*t] -= scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), dl)?)?;
            }
            Op::SmoothL1 { a, b, beta } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = gd[0] / F::from_f64(av.len() as f64);
                let da: Vec<F> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| ops::smooth_l1(*x - *y, *beta).1 * scale)
                    .collect();
                if self.needs(*b) {
                    let db = da.iter().map(|v| -*v).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?)?;
                }
                self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?)?;
            }
            Op::TimeDiff(x) => {
                let xv = self.value(*x);
                let (c, t) = (xv.rows(), xv.cols());
                let mut dx = vec![F::zero(); c * t];
                for ch in 0..c {
                    for s in 0..t - 1 {
                        let gv = gd[ch * (t - 1) + s];
                        dx[ch * t + s + 1] += gv;
                        dx[ch * t + s] -= gv;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![c, t], dx)?)?;
            }
            Op::WeightedSum(terms) => {
                for (id, w) in terms {
                    self.accumulate(grads, *id, Tensor::scalar(gd[0] * *w))?;
                }
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(a, m)| *a * *m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?)?;
            }
        }
        Ok(())
    }
}
