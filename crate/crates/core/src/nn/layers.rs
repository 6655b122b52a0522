//! Parameter-owning wrappers around the graph ops.

use rand::Rng;

use super::{Graph, NodeId, ParamId, ParamStore, Real, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self::with_std(store, name, d_in, d_out, bias, 1.0 / (d_in as f64).sqrt(), rng)
    }

    pub fn with_std<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::randn(vec![d_in, d_out], std, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        // He initialisation; every conv in this crate feeds a ReLU or a linear head.
        let std = (2.0 / (c_in * kernel) as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::randn(vec![c_out, c_in, kernel], std, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![c_out]));
        Self {
            w,
            b,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv1d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![d], F::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![d])),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layernorm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        vocab: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            table: store.add(format!("{name}.table"), Tensor::randn(vec![vocab, dim], std, rng)),
            vocab,
            dim,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, ids: &[usize]) -> Result<NodeId> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}
