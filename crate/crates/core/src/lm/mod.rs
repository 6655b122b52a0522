//! Decoder-only transformer over the unified vocabulary.

mod generate;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generate::{Constraint, GenerationConfig, GenerationOutput, KvCache};
pub use train::{sequence_targets, LmStepLog, LmTrainConfig};

use crate::error::{Error, Result};
use crate::nn::layers::{Embedding, LayerNorm, Linear};
use crate::nn::{blob, Graph, NodeId, ParamStore};

/// Which next-token targets contribute to the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    #[default]
    FullSequence,
    /// Only targets after the task start token.
    ResponseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    pub dropout: f64,
    pub loss_scope: LossScope,
    /// Hidden width of the feed-forward block as a multiple of `d_model`.
    pub ff_mult: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1693,
            d_model: 256,
            layers: 4,
            heads: 4,
            context: 192,
            dropout: 0.0,
            loss_scope: LossScope::FullSequence,
            ff_mult: 4,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.context < 2 {
            return Err(Error::Config("language model sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.ff_mult == 0 {
            return Err(Error::Config("dropout must lie in [0, 1) and ff_mult be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Transformer weights plus layer handles.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    cfg: LmConfig,
    store: ParamStore<f32>,
    tok: Embedding,
    pos: Embedding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

const INIT_STD: f64 = 0.02;

impl LanguageModel {
    pub fn new(cfg: LmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = cfg.d_model;
        let resid_std = INIT_STD / (2.0 * cfg.layers as f64).sqrt();
        let tok = Embedding::new(&mut s, "tok", cfg.vocab_size, d, INIT_STD, &mut rng);
        let pos = Embedding::new(&mut s, "pos", cfg.context, d, INIT_STD, &mut rng);
        let blocks = (0..cfg.layers)
            .map(|i| {
                let n = |p: &str| format!("block{i}.{p}");
                let ff = cfg.ff_mult * d;
                Block {
                    ln1: LayerNorm::new(&mut s, &n("ln1"), d),
                    q: Linear::with_std(&mut s, &n("q"), d, d, true, INIT_STD, &mut rng),
                    k: Linear::with_std(&mut s, &n("k"), d, d, true, INIT_STD, &mut rng),
                    v: Linear::with_std(&mut s, &n("v"), d, d, true, INIT_STD, &mut rng),
                    proj: Linear::with_std(&mut s, &n("proj"), d, d, true, resid_std, &mut rng),
                    ln2: LayerNorm::new(&mut s, &n("ln2"), d),
                    fc1: Linear::with_std(&mut s, &n("fc1"), d, ff, true, INIT_STD, &mut rng),
                    fc2: Linear::with_std(&mut s, &n("fc2"), ff, d, true, resid_std, &mut rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(&mut s, "ln_f", d);
        let head = Linear::with_std(&mut s, "head", d, cfg.vocab_size, true, INIT_STD, &mut rng);
        Ok(Self {
            cfg,
            store: s,
            tok,
            pos,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() || ids.len() > self.cfg.context {
            return Err(Error::Shape(format!("sequence length {} outside 1..={}", ids.len(), self.cfg.context)));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::TokenRange {
                id: bad,
                segment: "vocabulary".into(),
            });
        }
        Ok(())
    }

    /// Logits `[T x V]` for `ids` recorded in `g`.
    pub fn forward<R: rand::Rng + ?Sized>(&self, g: &mut Graph<'_, f32>, ids: &[usize], mut dropout_rng: Option<&mut R>) -> Result<NodeId> {
        self.check_ids(ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let t = self.tok.forward(g, ids)?;
        let p = self.pos.forward(g, &positions)?;
        let mut x = g.add(t, p)?;
        let p_drop = self.cfg.dropout;
        let mut drop = |g: &mut Graph<'_, f32>, n: NodeId| match dropout_rng.as_deref_mut() {
            Some(r) if p_drop > 0.0 => g.dropout(n, p_drop, r),
            _ => n,
        };
        for b in &self.blocks {
            let h = b.ln1.forward(g, x)?;
            let q = b.q.forward(g, h)?;
            let k = b.k.forward(g, h)?;
            let v = b.v.forward(g, h)?;
            let a = g.causal_attention(q, k, v, self.cfg.heads)?;
            let o = b.proj.forward(g, a)?;
            let o = drop(g, o);
            x = g.add(x, o)?;
            let h = b.ln2.forward(g, x)?;
            let f = b.fc1.forward(g, h)?;
            let f = g.gelu(f);
            let f = b.fc2.forward(g, f)?;
            let f = drop(g, f);
            x = g.add(x, f)?;
        }
        let x = self.ln_f.forward(g, x)?;
        self.head.forward(g, x)
    }

    /// Full-sequence logits without recording gradients for later use.
    pub fn logits(&self, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward::<ChaCha8Rng>(&mut g, ids, None)?;
        let v = g.value(out);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }

    /// Mean next-token cross-entropy of one sequence under `scope`.
    pub fn sequence_loss(&self, ids: &[usize], response_start: usize, scope: LossScope) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let (inputs, targets) = sequence_targets(ids, response_start, scope)?;
        let logits = self.forward::<ChaCha8Rng>(&mut g, inputs, None)?;
        let loss = g.cross_entropy(logits, &targets)?;
        Ok(g.value(loss).item() as f64)
    }

    /// Writes `lm_config.json` and the `lm` weight blob into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::save(dir, "lm", &self.store)?;
        crate::io::write_json(&dir.join("lm_config.json"), &self.cfg)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: LmConfig = crate::io::read_json(&dir.join("lm_config.json"))?;
        Self::load_with_config(dir, cfg)
    }

    pub fn load_with_config(dir: &Path, cfg: LmConfig) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        let saved = blob::load(dir, "lm")?;
        if saved.len() != m.store.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {} tensors, model expects {}",
                saved.len(),
                m.store.len()
            )));
        }
        m.store.load_values_from(&saved)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> LmConfig {
        LmConfig {
            vocab_size: 40,
            d_model: 16,
            layers: 2,
            heads: 2,
            context: 24,
            ..LmConfig::default()
        }
    }

    #[test]
    fn initial_loss_near_uniform() {
        let m = LanguageModel::new(tiny(), 1).unwrap();
        let ids: Vec<usize> = (0..20).map(|i| (i * 7) % 40).collect();
        let loss = m.sequence_loss(&ids, 0, LossScope::FullSequence).unwrap();
        assert!((loss - 40f64.ln()).abs() < 0.1, "{loss}");
    }

    #[test]
    fn cached_step_matches_full_forward() {
        let m = LanguageModel::new(tiny(), 2).unwrap();
        let ids = [3usize, 9, 1, 39, 0, 12, 12, 5];
        let full = m.logits(&ids).unwrap();
        let mut cache = m.new_cache();
        for (t, &id) in ids.iter().enumerate() {
            let step = m.step(&mut cache, id).unwrap();
            for (a, b) in step.iter().zip(&full[t]) {
                assert!((a - b).abs() < 1e-4, "pos {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn logits_are_causal() {
        let m = LanguageModel::new(tiny(), 3).unwrap();
        let a = m.logits(&[1, 2, 3, 4, 5]).unwrap();
        let b = m.logits(&[1, 2, 3, 30, 31]).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], b[t]);
        }
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn greedy_generation_is_deterministic_and_constrained() {
        let m = LanguageModel::new(tiny(), 4).unwrap();
        let c = Constraint {
            output: 10..20,
            gait: None,
            stop: 21,
        };
        let g = GenerationConfig {
            max_new_tokens: 10,
            ..GenerationConfig::greedy()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = m.generate(&[1, 2, 3], &c, &g, &mut r1).unwrap();
        let b = m.generate(&[1, 2, 3], &c, &g, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(!a.tokens.is_empty());
        assert!(a.tokens.iter().all(|t| (10..20).contains(t)));
        let sampled = GenerationConfig {
            max_new_tokens: 10,
            top_k: 40,
            ..GenerationConfig::default()
        };
        for seed in 0..5 {
            let out = m.generate(&[1], &c, &sampled, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(out.tokens.iter().all(|t| (10..20).contains(t)));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = LanguageModel::new(tiny(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = LanguageModel::load(dir.path()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.logits(&[4, 5, 6]).unwrap(), m.logits(&[4, 5, 6]).unwrap());
        let other = LanguageModel::new(LmConfig { layers: 1, ..tiny() }, 0).unwrap();
        assert!(LanguageModel::load_with_config(dir.path(), other.config().clone()).is_err());
    }

    #[test]
    fn training_memorises_a_sequence() {
        let mut m = LanguageModel::new(tiny(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids: Vec<usize> = (0..12).map(|_| rng.gen_range(0..40)).collect();
        let data = vec![crate::template::RenderedSample {
            task: "t".into(),
            ids,
            response_start: 0,
        }];
        let tc = LmTrainConfig {
            steps: 150,
            batch_size: 1,
            optim: crate::nn::OptimConfig {
                initial_lr: 3e-3,
                total_steps: 150,
                ..Default::default()
            },
            ..LmTrainConfig::default()
        };
        let before = m.mean_loss(&data).unwrap();
        m.train(&data, &tc, |_| true).unwrap();
        let after = m.mean_loss(&data).unwrap();
        assert!(after < 0.2 * before, "{before} -> {after}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = LanguageModel::new(tiny(), 0).unwrap();
        assert!(m.logits(&[]).is_err());
        assert!(m.logits(&[40]).is_err());
        assert!(m.logits(&vec![0; 25]).is_err());
        assert!(LanguageModel::new(LmConfig { heads: 3, ..tiny() }, 0).is_err());
    }
}
