//! Next-token training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LanguageModel, LossScope};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Graph, OptimConfig};
use crate::template::RenderedSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmStepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub tokens: usize,
}

/// Model inputs and shifted targets; masked targets are `None`.
pub fn sequence_targets(ids: &[usize], response_start: usize, scope: LossScope) -> Result<(&[usize], Vec<Option<usize>>)> {
    if ids.len() < 2 {
        return Err(Error::Data("a training sequence needs at least two tokens".into()));
    }
    let targets = ids[1..]
        .iter()
        .enumerate()
        .map(|(i, &t)| match scope {
            LossScope::ResponseOnly if i + 1 < response_start => None,
            _ => Some(t),
        })
        .collect();
    Ok((&ids[..ids.len() - 1], targets))
}

impl LanguageModel {
    /// Mean per-sequence loss over `data` under the configured scope.
    pub fn mean_loss(&self, data: &[RenderedSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("no sequences to score".into()));
        }
        let mut total = 0.0;
        for s in data {
            total += self.sequence_loss(&s.ids, s.response_start, self.cfg.loss_scope)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Optimises next-token cross-entropy; `on_step` sees each step's log and
    /// may stop training early by returning `false`.
    pub fn train<C: FnMut(&LmStepLog) -> bool>(&mut self, data: &[RenderedSample], tc: &LmTrainConfig, mut on_step: C) -> Result<Vec<LmStepLog>> {
        if data.is_empty() || tc.batch_size == 0 {
            return Err(Error::Data("language model training needs sequences and a positive batch".into()));
        }
        tc.optim.validate()?;
        if let Some(s) = data.iter().find(|s| s.ids.len() > self.cfg.context + 1) {
            return Err(Error::Config(format!(
                "a {} sequence has {} tokens, context is {}",
                s.task,
                s.ids.len(),
                self.cfg.context
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        let mut logs = Vec::with_capacity(tc.steps);
        let scope = self.cfg.loss_scope;
        for step in 1..=tc.steps {
            let mut batch = Vec::with_capacity(tc.batch_size);
            for _ in 0..tc.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&data[order[cursor]]);
                cursor += 1;
            }
            let mut g = Graph::new(&self.store);
            let mut terms = Vec::with_capacity(batch.len());
            let mut tokens = 0;
            let w = 1.0 / batch.len() as f32;
            for s in &batch {
                let (inputs, targets) = sequence_targets(&s.ids, s.response_start, scope)?;
                tokens += targets.iter().filter(|t| t.is_some()).count();
                let logits = self.forward(&mut g, inputs, Some(&mut rng))?;
                terms.push((g.cross_entropy(logits, &targets)?, w));
            }
            let loss_node = g.weighted_sum(&terms)?;
            let loss = g.value(loss_node).item() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("language model loss at step {step}")));
            }
            let grads = g.backward(loss_node)?.params;
            grads.check_finite()?;
            drop(g);
            let lr = adam_step(self.store_mut(), &grads, &tc.optim, step)?;
            let log = LmStepLog { step, lr, loss, tokens };
            let keep_going = on_step(&log);
            logs.push(log);
            if !keep_going {
                break;
            }
        }
        Ok(logs)
    }
}
