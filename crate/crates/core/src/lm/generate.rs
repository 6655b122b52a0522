//! Incremental decoding with a key/value cache, top-k sampling and
//! segment-constrained token masks.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::nn::layers::{LayerNorm, Linear};
use crate::nn::{ops, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    /// `1` is greedy decoding.
    pub top_k: usize,
    pub max_new_tokens: usize,
    /// Restrict sampling to the task's output segment plus its end token.
    pub constrained: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 40,
            max_new_tokens: 128,
            constrained: true,
        }
    }
}

impl GenerationConfig {
    pub fn greedy() -> Self {
        Self {
            top_k: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) || self.top_k == 0 {
            return Err(Error::Config("temperature must be positive and top_k at least 1".into()));
        }
        Ok(())
    }
}

/// Legal continuation of one task response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    /// Ids of the task's output segment.
    pub output: Range<usize>,
    /// Gait ids allowed as the first emitted token (gait predicted by the model).
    pub gait: Option<Range<usize>>,
    /// The task end token.
    pub stop: usize,
}

impl Constraint {
    /// Whether `id` may be emitted after `emitted` tokens, `outputs` of which are output tokens.
    pub fn allows(&self, id: usize, emitted: usize, outputs: usize) -> bool {
        if id == self.stop {
            return outputs > 0;
        }
        self.output.contains(&id) || (emitted == 0 && self.gait.as_ref().is_some_and(|g| g.contains(&id)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutput {
    /// Emitted ids, excluding the end token.
    pub tokens: Vec<usize>,
    /// Whether the end token was produced.
    pub terminated: bool,
}

/// Cached keys and values per layer.
#[derive(Clone, Debug)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn w<'a>(s: &'a ParamStore<f32>, l: &Linear) -> (&'a [f32], Option<&'a [f32]>) {
    (s.value(l.w).data(), l.b.map(|b| s.value(b).data()))
}

fn apply(s: &ParamStore<f32>, l: &Linear, x: &[f32]) -> Vec<f32> {
    let (wt, b) = w(s, l);
    ops::linear(x, 1, wt, l.d_in, l.d_out, b)
}

fn norm(s: &ParamStore<f32>, ln: &LayerNorm, x: &[f32]) -> Vec<f32> {
    ops::layernorm(x, x.len(), s.value(ln.gamma).data(), s.value(ln.beta).data()).0
}

impl LanguageModel {
    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.cfg.layers],
            values: vec![Vec::new(); self.cfg.layers],
            len: 0,
        }
    }

    /// Appends `token` to the cache and returns next-token logits.
    pub fn step(&self, cache: &mut KvCache, token: usize) -> Result<Vec<f32>> {
        let (d, heads) = (self.cfg.d_model, self.cfg.heads);
        if cache.len >= self.cfg.context {
            return Err(Error::Generation(format!("context of {} tokens exhausted", self.cfg.context)));
        }
        if token >= self.cfg.vocab_size {
            return Err(Error::TokenRange {
                id: token,
                segment: "vocabulary".into(),
            });
        }
        let s = &self.store;
        let tok = s.value(self.tok.table);
        let pos = s.value(self.pos.table);
        let mut x: Vec<f32> = tok.row(token).iter().zip(pos.row(cache.len)).map(|(a, b)| a + b).collect();
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let t = cache.len + 1;
        for (li, b) in self.blocks.iter().enumerate() {
            let h = norm(s, &b.ln1, &x);
            let q = apply(s, &b.q, &h);
            cache.keys[li].extend(apply(s, &b.k, &h));
            cache.values[li].extend(apply(s, &b.v, &h));
            let (keys, vals) = (&cache.keys[li], &cache.values[li]);
            let mut att = vec![0.0f32; d];
            let mut scores = vec![0.0f32; t];
            for hd in 0..heads {
                let off = hd * dh;
                let qh = &q[off..off + dh];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + off..j * d + off + dh];
                    *sc = qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                ops::softmax_in_place(&mut scores);
                let out = &mut att[off..off + dh];
                for (j, p) in scores.iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(&vals[j * d + off..j * d + off + dh]) {
                        *o += p * v;
                    }
                }
            }
            let o = apply(s, &b.proj, &att);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            let h = norm(s, &b.ln2, &x);
            let mut f = apply(s, &b.fc1, &h);
            for v in &mut f {
                *v = ops::gelu(*v);
            }
            let f = apply(s, &b.fc2, &f);
            for (xi, fi) in x.iter_mut().zip(&f) {
                *xi += fi;
            }
        }
        cache.len += 1;
        let h = norm(s, &self.ln_f, &x);
        let logits = apply(s, &self.head, &h);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generation logits".into()));
        }
        Ok(logits)
    }

    /// Samples a response after `prompt` until `constraint.stop` or a length limit.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        prompt: &[usize],
        constraint: &Constraint,
        gen: &GenerationConfig,
        rng: &mut R,
    ) -> Result<GenerationOutput> {
        gen.validate()?;
        if prompt.is_empty() || prompt.len() >= self.cfg.context {
            return Err(Error::Generation(format!(
                "prompt of {} tokens does not fit a context of {}",
                prompt.len(),
                self.cfg.context
            )));
        }
        let mut cache = self.new_cache();
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.step(&mut cache, t)?;
        }
        let mut tokens = Vec::new();
        let mut outputs = 0;
        let mut terminated = false;
        while tokens.len() < gen.max_new_tokens {
            let legal = |id: usize| !gen.constrained || constraint.allows(id, tokens.len(), outputs);
            let next = sample(&logits, gen, legal, rng)?;
            if next == constraint.stop {
                terminated = true;
                break;
            }
            tokens.push(next);
            if constraint.output.contains(&next) {
                outputs += 1;
            }
            if cache.len() >= self.cfg.context {
                break;
            }
            logits = self.step(&mut cache, next)?;
        }
        Ok(GenerationOutput { tokens, terminated })
    }
}

/// Top-k / temperature sampling over ids accepted by `legal`.
pub(crate) fn sample<R: Rng + ?Sized>(logits: &[f32], gen: &GenerationConfig, legal: impl Fn(usize) -> bool, rng: &mut R) -> Result<usize> {
    let mut cands: Vec<(usize, f32)> = logits.iter().copied().enumerate().filter(|(i, _)| legal(*i)).collect();
    if cands.is_empty() {
        return Err(Error::Generation("no legal token to emit".into()));
    }
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(gen.top_k);
    if cands.len() == 1 {
        return Ok(cands[0].0);
    }
    let max = cands[0].1 as f64;
    let weights: Vec<f64> = cands.iter().map(|(_, l)| ((*l as f64 - max) / gen.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for ((id, _), wgt) in cands.iter().zip(&weights) {
        if u < *wgt {
            return Ok(*id);
        }
        u -= wgt;
    }
    Ok(cands[cands.len() - 1].0)
}
