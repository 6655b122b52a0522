use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{CaptionedTrajectory, Embodiment, Trajectory};
use crate::nn::layers::{Conv1d, Embedding, Linear};
use crate::nn::{adam_step, blob, Graph, NodeId, OptimConfig, ParamStore, Tensor};
use crate::tokenizer::Normalizer;

const MIN_FRAMES: usize = 4;
const BYTES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub byte_dim: usize,
    /// Temporal bins kept after pooling.
    pub bins: usize,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            hidden: 64,
            byte_dim: 32,
            bins: 4,
            temperature: 0.1,
            steps: 600,
            batch_size: 32,
            optim: OptimConfig {
                initial_lr: 1e-3,
                total_steps: 600,
                ..OptimConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLog {
    pub step: usize,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureManifest {
    config: FeatureConfig,
    embodiment: Embodiment,
}

/// Paired motion and text encoders mapping into a shared unit-norm feature space.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    embodiment: Embodiment,
    normalizer: Normalizer,
    store: ParamStore<f32>,
    motion: [Conv1d; 3],
    motion_head: Linear,
    bytes: Embedding,
    text: [Conv1d; 2],
    text_head: Linear,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig, embodiment: Embodiment, normalizer: Normalizer, seed: u64) -> Result<Self> {
        if cfg.feature_dim == 0 || cfg.hidden == 0 || cfg.byte_dim == 0 || cfg.bins == 0 || !(cfg.temperature > 0.0) {
            return Err(Error::Config("feature extractor sizes and temperature must be positive".into()));
        }
        if normalizer.mean.len() != embodiment.dim() {
            return Err(Error::Shape(format!("normalizer width {} vs {}", normalizer.mean.len(), embodiment.dim())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (h, dim) = (cfg.hidden, embodiment.dim());
        let motion = [
            Conv1d::new(&mut s, "motion.conv0", dim, h, 3, 1, 1, &mut rng),
            Conv1d::new(&mut s, "motion.conv1", h, h, 4, 2, 1, &mut rng),
            Conv1d::new(&mut s, "motion.conv2", h, h, 3, 1, 1, &mut rng),
        ];
        let motion_head = Linear::new(&mut s, "motion.head", h * cfg.bins, cfg.feature_dim, true, &mut rng);
        let bytes = Embedding::new(&mut s, "text.bytes", BYTES, cfg.byte_dim, 1.0, &mut rng);
        let text = [
            Conv1d::new(&mut s, "text.conv0", cfg.byte_dim, h, 3, 1, 1, &mut rng),
            Conv1d::new(&mut s, "text.conv1", h, h, 3, 1, 1, &mut rng),
        ];
        let text_head = Linear::new(&mut s, "text.head", h * cfg.bins, cfg.feature_dim, true, &mut rng);
        Ok(Self {
            cfg,
            embodiment,
            normalizer,
            store: s,
            motion,
            motion_head,
            bytes,
            text,
            text_head,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn embodiment(&self) -> Embodiment {
        self.embodiment
    }

    fn pooled_head(&self, g: &mut Graph<'_, f32>, mut h: NodeId, head: &Linear) -> Result<NodeId> {
        h = g.adaptive_pool(h, self.cfg.bins)?;
        h = g.reshape(h, &[1, self.cfg.hidden * self.cfg.bins])?;
        let f = head.forward(g, h)?;
        Ok(g.l2_normalize(f))
    }

    fn motion_node(&self, g: &mut Graph<'_, f32>, traj: &Trajectory) -> Result<NodeId> {
        if traj.embodiment != self.embodiment {
            return Err(Error::Embodiment(format!(
                "feature extractor for {} given {}",
                self.embodiment, traj.embodiment
            )));
        }
        traj.validate()?;
        let x = self.normalizer.to_channels(&traj.poses, traj.len().max(MIN_FRAMES));
        let mut h = g.constant(x);
        for c in &self.motion {
            h = c.forward(g, h)?;
            h = g.relu(h);
        }
        self.pooled_head(g, h, &self.motion_head)
    }

    fn text_node(&self, g: &mut Graph<'_, f32>, text: &str) -> Result<NodeId> {
        let ids: Vec<usize> = text.trim().bytes().map(usize::from).collect();
        if ids.is_empty() {
            return Err(Error::Data("cannot embed empty text".into()));
        }
        let e = self.bytes.forward(g, &ids)?;
        let mut h = g.transpose(e);
        for c in &self.text {
            h = c.forward(g, h)?;
            h = g.relu(h);
        }
        self.pooled_head(g, h, &self.text_head)
    }

    pub fn motion_features(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let n = self.motion_node(&mut g, traj)?;
        Ok(g.value(n).data().iter().map(|v| *v as f64).collect())
    }

    pub fn text_features(&self, text: &str) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let n = self.text_node(&mut g, text)?;
        Ok(g.value(n).data().iter().map(|v| *v as f64).collect())
    }

    /// Symmetric InfoNCE loss of a batch, recorded in `g`.
    fn batch_loss(&self, g: &mut Graph<'_, f32>, batch: &[&CaptionedTrajectory]) -> Result<NodeId> {
        let mut m = Vec::with_capacity(batch.len());
        let mut t = Vec::with_capacity(batch.len());
        for it in batch {
            m.push(self.motion_node(g, &it.trajectory)?);
            t.push(self.text_node(g, &it.caption)?);
        }
        let m = g.concat_rows(&m)?;
        let t = g.concat_rows(&t)?;
        let sim = g.matmul(m, t, true)?;
        let logits = g.scale(sim, (1.0 / self.cfg.temperature) as f32);
        let targets: Vec<Option<usize>> = (0..batch.len()).map(Some).collect();
        let by_motion = g.cross_entropy(logits, &targets)?;
        let lt = g.transpose(logits);
        let by_text = g.cross_entropy(lt, &targets)?;
        g.weighted_sum(&[(by_motion, 0.5), (by_text, 0.5)])
    }

    /// Fits the normaliser and trains both encoders contrastively on `corpus`.
    pub fn train<C: FnMut(&FeatureLog)>(corpus: &[CaptionedTrajectory], cfg: &FeatureConfig, mut on_step: C) -> Result<Self> {
        if cfg.batch_size < 2 || corpus.len() < cfg.batch_size {
            return Err(Error::Data(format!(
                "feature extractor needs at least {} pairs, got {}",
                cfg.batch_size.max(2),
                corpus.len()
            )));
        }
        let embodiment = corpus[0].trajectory.embodiment;
        let trajs: Vec<Trajectory> = corpus.iter().map(|c| c.trajectory.clone()).collect();
        let normalizer = Normalizer::fit(&trajs, embodiment.dim())?;
        let mut model = Self::new(cfg.clone(), embodiment, normalizer, cfg.seed)?;
        cfg.optim.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut cursor = order.len();
        for step in 1..=cfg.steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&corpus[order[cursor]]);
                cursor += 1;
            }
            let mut g = Graph::new(&model.store);
            let loss = model.batch_loss(&mut g, &batch)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("feature extractor loss at step {step}")));
            }
            let grads = g.backward(loss)?.params;
            drop(g);
            adam_step(&mut model.store, &grads, &cfg.optim, step)?;
            on_step(&FeatureLog { step, loss: value });
        }
        Ok(model)
    }

    /// Writes `extractor.json` and the `features` weight blob into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut store = self.store.clone();
        let d = self.normalizer.mean.len();
        store.add("norm.mean", Tensor::new(vec![d], self.normalizer.mean.clone())?);
        store.add("norm.std", Tensor::new(vec![d], self.normalizer.std.clone())?);
        blob::save(dir, "features", &store)?;
        crate::io::write_json(
            &dir.join("extractor.json"),
            &FeatureManifest {
                config: self.cfg.clone(),
                embodiment: self.embodiment,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: FeatureManifest = crate::io::read_json(&dir.join("extractor.json"))?;
        let saved = blob::load(dir, "features")?;
        let get = |name: &str| {
            saved
                .find(name)
                .map(|id| saved.value(id).clone().into_data())
                .ok_or_else(|| Error::Mismatch(format!("feature blob lacks {name}")))
        };
        let normalizer = Normalizer {
            mean: get("norm.mean")?,
            std: get("norm.std")?,
        };
        let mut model = Self::new(m.config, m.embodiment, normalizer, 0)?;
        model.store.load_values_from(&saved)?;
        Ok(model)
    }
}
