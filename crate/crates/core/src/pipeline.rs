//! Bundled checkpoints, instruction dataset assembly and end-to-end task wiring.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Constraint, GenerationConfig, LanguageModel, LmConfig};
use crate::motion::{mirror_on, CaptionedTrajectory, Embodiment, Gait, Trajectory};
use crate::template::{self, build_training_set, InstructionSample, RenderedSample, TaskRegistry};
use crate::tokenizer::VqVae;
use crate::vocab::{GridCell, Segment, UnifiedVocabulary};

const MANIFEST: &str = "manifest.json";
const ROBOT_DIR: &str = "robot_tokenizer";
const HUMAN_DIR: &str = "human_tokenizer";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    vocabulary: UnifiedVocabulary,
    tasks: TaskRegistry,
    lm: LmConfig,
    robot_tokenizer: Option<String>,
    human_tokenizer: Option<String>,
}

/// Everything needed to run every task: vocabulary, tasks, tokenizers and the model.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub vocab: UnifiedVocabulary,
    pub tasks: TaskRegistry,
    pub robot: Option<VqVae>,
    pub human: Option<VqVae>,
    pub lm: LanguageModel,
}

/// Raw result of one task generation, in global ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskOutput {
    pub gait: Option<usize>,
    pub output: Vec<usize>,
    pub terminated: bool,
    /// Emitted tokens outside the output segment (only possible when unconstrained).
    pub discarded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionOutput {
    pub trajectory: Trajectory,
    /// Codebook indices local to the output segment.
    pub codes: Vec<usize>,
    pub gait: Option<Gait>,
    pub terminated: bool,
}

fn need<'a>(t: Option<&'a VqVae>, what: &str) -> Result<&'a VqVae> {
    t.ok_or_else(|| Error::Config(format!("{what} samples need a {what} tokenizer")))
}

fn check_tokenizer(vocab: &UnifiedVocabulary, tok: &VqVae, segment: Segment, robot: bool) -> Result<()> {
    let cfg = tok.config();
    if cfg.embodiment.is_robot() != robot || (!robot && !cfg.embodiment.is_human()) {
        return Err(Error::Mismatch(format!("{segment} tokenizer has embodiment {}", cfg.embodiment)));
    }
    if cfg.codebook_size != vocab.size(segment) {
        return Err(Error::Mismatch(format!(
            "{segment} codebook has {} entries, vocabulary segment has {}",
            cfg.codebook_size,
            vocab.size(segment)
        )));
    }
    Ok(())
}

impl Bundle {
    pub fn new(
        vocab: UnifiedVocabulary,
        tasks: TaskRegistry,
        robot: Option<VqVae>,
        human: Option<VqVae>,
        lm: LanguageModel,
    ) -> Result<Self> {
        let b = Self {
            vocab,
            tasks,
            robot,
            human,
            lm,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        self.tasks.validate(&self.vocab)?;
        if self.lm.config().vocab_size != self.vocab.len() {
            return Err(Error::Mismatch(format!(
                "model vocabulary {} differs from the unified vocabulary {}",
                self.lm.config().vocab_size,
                self.vocab.len()
            )));
        }
        if let Some(t) = &self.robot {
            check_tokenizer(&self.vocab, t, Segment::Robot, true)?;
        }
        if let Some(t) = &self.human {
            check_tokenizer(&self.vocab, t, Segment::Human, false)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(t) = &self.robot {
            t.save(&dir.join(ROBOT_DIR))?;
        }
        if let Some(t) = &self.human {
            t.save(&dir.join(HUMAN_DIR))?;
        }
        self.lm.save(dir)?;
        let manifest = BundleManifest {
            format_version: FORMAT_VERSION,
            vocabulary: self.vocab.clone(),
            tasks: self.tasks.clone(),
            lm: self.lm.config().clone(),
            robot_tokenizer: self.robot.as_ref().map(|_| ROBOT_DIR.to_string()),
            human_tokenizer: self.human.as_ref().map(|_| HUMAN_DIR.to_string()),
        };
        crate::io::write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: BundleManifest = crate::io::read_json(&dir.join(MANIFEST))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Mismatch(format!("unsupported bundle format {}", m.format_version)));
        }
        let robot = m.robot_tokenizer.map(|p| VqVae::load(&dir.join(p))).transpose()?;
        let human = m.human_tokenizer.map(|p| VqVae::load(&dir.join(p))).transpose()?;
        let lm = LanguageModel::load_with_config(dir, m.lm)?;
        Self::new(m.vocabulary, m.tasks, robot, human, lm)
    }

    pub fn tokenizer(&self, segment: Segment) -> Result<&VqVae> {
        let t = match segment {
            Segment::Robot => self.robot.as_ref(),
            Segment::Human => self.human.as_ref(),
            _ => None,
        };
        t.ok_or_else(|| Error::Config(format!("bundle has no {segment} tokenizer")))
    }

    /// Legal response tokens for `task`; gait may open the response when `predict_gait`.
    pub fn constraint(&self, task: &str, predict_gait: bool) -> Result<Constraint> {
        let spec = self.tasks.get(task)?;
        Ok(Constraint {
            output: self.vocab.range(spec.output),
            gait: (predict_gait && spec.gait_allowed).then(|| self.vocab.range(Segment::Gait)),
            stop: self.vocab.special_id(&spec.end)?,
        })
    }

    /// Renders the prompt, samples a response and splits off the gait token.
    ///
    /// With `gait = None` on a gait-bearing task the model predicts it.
    pub fn run<R: Rng + ?Sized>(
        &self,
        task: &str,
        input: &[usize],
        gait: Option<Gait>,
        gen: &GenerationConfig,
        rng: &mut R,
    ) -> Result<TaskOutput> {
        let spec = self.tasks.get(task)?;
        let gait_id = gait.map(|g| self.vocab.gait_id(g)).transpose()?;
        let prompt = template::render_prompt(&self.tasks, &self.vocab, task, input, gait_id)?;
        let constraint = self.constraint(task, gait.is_none())?;
        let out = self.lm.generate(&prompt, &constraint, gen, rng)?;
        let mut tokens = out.tokens.as_slice();
        let mut predicted = None;
        if spec.gait_allowed && gait.is_none() {
            if let Some((&first, rest)) = tokens.split_first() {
                if self.vocab.is_in(first, Segment::Gait) {
                    predicted = Some(first);
                    tokens = rest;
                }
            }
        }
        let output: Vec<usize> = tokens.iter().copied().filter(|&t| constraint.output.contains(&t)).collect();
        if output.is_empty() {
            return Err(Error::Generation(format!("task {task:?} produced no valid output tokens")));
        }
        Ok(TaskOutput {
            gait: gait_id.or(predicted),
            discarded: tokens.len() - output.len(),
            output,
            terminated: out.terminated,
        })
    }

    fn motion_output(&self, segment: Segment, out: TaskOutput) -> Result<MotionOutput> {
        let codes = out
            .output
            .iter()
            .map(|&id| self.vocab.local(id, segment))
            .collect::<Result<Vec<_>>>()?;
        let trajectory = self.tokenizer(segment)?.decode_tokens(&codes, None)?;
        let gait = out.gait.map(|g| self.vocab.gait_of(g)).transpose()?;
        Ok(MotionOutput {
            trajectory,
            codes,
            gait,
            terminated: out.terminated,
        })
    }

    /// Text-conditioned motion for `task` (text-to-robot, text-to-human or question answering).
    pub fn text_to_motion<R: Rng + ?Sized>(
        &self,
        task: &str,
        text: &str,
        gait: Option<Gait>,
        gen: &GenerationConfig,
        rng: &mut R,
    ) -> Result<MotionOutput> {
        let spec = self.tasks.get(task)?;
        if spec.inputs != [Segment::Text] || !matches!(spec.output, Segment::Robot | Segment::Human) {
            return Err(Error::Template(format!("task {task:?} does not map text to motion")));
        }
        let out = self.run(task, &self.vocab.encode_text(text)?, gait, gen, rng)?;
        self.motion_output(spec.output, out)
    }

    /// Caption for a robot or human trajectory.
    pub fn motion_to_text<R: Rng + ?Sized>(&self, traj: &Trajectory, gen: &GenerationConfig, rng: &mut R) -> Result<String> {
        let segment = match traj.embodiment {
            Embodiment::Robot => Segment::Robot,
            Embodiment::Human { .. } => Segment::Human,
            Embodiment::Custom { .. } => return Err(Error::Embodiment(format!("cannot caption {}", traj.embodiment))),
        };
        let codes = self.tokenizer(segment)?.encode_trajectory(traj)?;
        self.caption_codes(segment, &codes, gen, rng)
    }

    /// Caption for already tokenized motion (local codebook indices).
    pub fn caption_codes<R: Rng + ?Sized>(&self, segment: Segment, codes: &[usize], gen: &GenerationConfig, rng: &mut R) -> Result<String> {
        let input = codes
            .iter()
            .map(|&c| self.vocab.to_global(segment, c))
            .collect::<Result<Vec<_>>>()?;
        let out = self.run(template::CAPTION, &input, None, gen, rng)?;
        Ok(self.vocab.decode_text_lossy(&out.output)?.trim().to_string())
    }

    /// Robot trajectory intended to end in `cell`.
    pub fn goal<R: Rng + ?Sized>(
        &self,
        cell: GridCell,
        gait: Option<Gait>,
        gen: &GenerationConfig,
        rng: &mut R,
    ) -> Result<MotionOutput> {
        let token = self.vocab.grid_token(cell)?;
        let out = self.run(template::GOAL, &[token], gait, gen, rng)?;
        self.motion_output(Segment::Robot, out)
    }
}

/// Source corpora for instruction data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpora {
    pub robot: Vec<CaptionedTrajectory>,
    pub human: Vec<CaptionedTrajectory>,
    /// Human motions captioned by the question they answer.
    pub qa: Vec<CaptionedTrajectory>,
}

/// Per-task instruction samples from tokenized corpora.
///
/// Robot items yield text-to-robot, caption and (with a goal cell) goal-reach
/// samples; human items yield text-to-human and caption samples; question items
/// yield question-answer samples. `mirror` adds reflected copies.
pub fn instruction_pools(
    vocab: &UnifiedVocabulary,
    robot: Option<&VqVae>,
    human: Option<&VqVae>,
    corpora: &Corpora,
    mirror: bool,
) -> Result<BTreeMap<String, Vec<InstructionSample>>> {
    let mut pools: BTreeMap<String, Vec<InstructionSample>> = BTreeMap::new();
    let mut push = |s: InstructionSample| pools.entry(s.task.clone()).or_default().push(s);
    let expand = |items: &[CaptionedTrajectory]| -> Result<Vec<CaptionedTrajectory>> {
        let mut out = items.to_vec();
        if mirror {
            for it in items {
                out.push(mirror_on(it, vocab.grid())?);
            }
        }
        Ok(out)
    };
    if !corpora.robot.is_empty() {
        let tok = need(robot, "robot")?;
        for it in expand(&corpora.robot)? {
            let codes = tok.encode_trajectory(&it.trajectory)?;
            push(InstructionSample::text_to_robot(vocab, &it.caption, it.gait, &codes)?);
            push(InstructionSample::caption(vocab, Segment::Robot, &codes, &it.caption)?);
            if let Some(cell) = it.goal_cell {
                push(InstructionSample::goal(vocab, cell, it.gait, &codes)?);
            }
        }
    }
    for (items, qa) in [(&corpora.human, false), (&corpora.qa, true)] {
        if items.is_empty() {
            continue;
        }
        let tok = need(human, "human")?;
        for it in expand(items)? {
            let codes = tok.encode_trajectory(&it.trajectory)?;
            if qa {
                push(InstructionSample::question_to_human(vocab, &it.caption, &codes)?);
            } else {
                push(InstructionSample::text_to_human(vocab, &it.caption, &codes)?);
                push(InstructionSample::caption(vocab, Segment::Human, &codes, &it.caption)?);
            }
        }
    }
    Ok(pools)
}

/// Mixture settings for the rendered training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub sequences: usize,
    /// Relative share per task name; tasks without samples must have zero weight.
    pub weights: BTreeMap<String, f64>,
    pub mirror: bool,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            sequences: 20_000,
            weights: TaskRegistry::default().names().map(|n| (n.to_string(), 1.0)).collect(),
            mirror: false,
            seed: 0,
        }
    }
}

/// Rendered multi-task training sequences; errors if any exceeds `context`.
pub fn build_dataset(
    registry: &TaskRegistry,
    vocab: &UnifiedVocabulary,
    pools: &BTreeMap<String, Vec<InstructionSample>>,
    mix: &MixConfig,
    context: usize,
) -> Result<Vec<RenderedSample>> {
    let data = build_training_set(registry, vocab, pools, &mix.weights, mix.sequences, mix.seed)?;
    if let Some(s) = data.iter().find(|s| s.ids.len() > context) {
        return Err(Error::Config(format!(
            "a rendered {} sequence has {} tokens but the context holds {}",
            s.task,
            s.ids.len(),
            context
        )));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_human_corpus, generate_robot_corpus, HumanSynthConfig, SynthConfig};
    use crate::tokenizer::VqConfig;
    use crate::vocab::{build_vocabulary, VocabConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_bundle() -> Bundle {
        let vocab_cfg = VocabConfig {
            robot_codebook: 16,
            human_codebook: 16,
            ..VocabConfig::default()
        };
        let vocab = build_vocabulary(&vocab_cfg).unwrap();
        let robot = VqVae::new(
            VqConfig {
                codebook_size: 16,
                code_dim: 8,
                hidden: 16,
                ..VqConfig::robot()
            },
            0.1,
            0,
        )
        .unwrap();
        let human = VqVae::new(
            VqConfig {
                codebook_size: 16,
                code_dim: 8,
                hidden: 16,
                ..VqConfig::human(5)
            },
            0.1,
            0,
        )
        .unwrap();
        let lm = LanguageModel::new(
            LmConfig {
                vocab_size: vocab.len(),
                d_model: 16,
                layers: 1,
                heads: 2,
                context: 200,
                ..LmConfig::default()
            },
            0,
        )
        .unwrap();
        Bundle::new(vocab, TaskRegistry::default(), Some(robot), Some(human), lm).unwrap()
    }

    #[test]
    fn pools_cover_every_task() {
        let b = small_bundle();
        let corpora = Corpora {
            robot: generate_robot_corpus(&SynthConfig {
                n_samples: 6,
                ..SynthConfig::default()
            })
            .unwrap(),
            human: generate_human_corpus(&HumanSynthConfig {
                n_samples: 4,
                ..HumanSynthConfig::default()
            })
            .unwrap(),
            qa: crate::motion::generate_qa_corpus(&HumanSynthConfig {
                n_samples: 3,
                ..HumanSynthConfig::default()
            })
            .unwrap(),
        };
        let pools = instruction_pools(&b.vocab, b.robot.as_ref(), b.human.as_ref(), &corpora, true).unwrap();
        assert_eq!(pools["t2rm"].len(), 12);
        assert_eq!(pools["goal"].len(), 12);
        assert_eq!(pools["caption"].len(), 20);
        assert_eq!(pools["t2hm"].len(), 8);
        assert_eq!(pools["qa"].len(), 6);
        let mix = MixConfig {
            sequences: 50,
            ..MixConfig::default()
        };
        let data = build_dataset(&b.tasks, &b.vocab, &pools, &mix, 200).unwrap();
        assert_eq!(data.len(), 50);
        assert!(build_dataset(&b.tasks, &b.vocab, &pools, &mix, 10).is_err());
        let none = instruction_pools(&b.vocab, None, None, &corpora, false);
        assert!(none.is_err());
    }

    #[test]
    fn bundle_round_trip_and_pipelines() {
        let b = small_bundle();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = Bundle::load(dir.path()).unwrap();
        let g = GenerationConfig {
            max_new_tokens: 6,
            ..GenerationConfig::greedy()
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let a = b.goal(GridCell { col: 3, row: 4 }, None, &g, &mut r).unwrap();
        let c = back.goal(GridCell { col: 3, row: 4 }, None, &g, &mut r).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.trajectory.embodiment, Embodiment::Robot);
        assert_eq!(a.trajectory.len(), a.codes.len() * 4);
        let h = b.text_to_motion(template::TEXT_TO_HUMAN, "a person waves", None, &g, &mut r).unwrap();
        assert!(h.trajectory.embodiment.is_human() && h.gait.is_none());
        let given = b.text_to_motion(template::TEXT_TO_ROBOT, "walk", Some(Gait::Bound), &g, &mut r).unwrap();
        assert_eq!(given.gait, Some(Gait::Bound));
        let text = b.motion_to_text(&a.trajectory, &g, &mut r).unwrap();
        assert!(text.chars().count() <= 6);
        assert!(b.text_to_motion(template::CAPTION, "x", None, &g, &mut r).is_err());
    }

    #[test]
    fn mismatched_tokenizer_is_rejected() {
        let b = small_bundle();
        let err = Bundle::new(b.vocab.clone(), b.tasks.clone(), b.human.clone(), None, b.lm.clone());
        assert!(err.is_err());
        let lm = LanguageModel::new(
            LmConfig {
                vocab_size: 100,
                d_model: 8,
                layers: 1,
                heads: 1,
                ..LmConfig::default()
            },
            0,
        )
        .unwrap();
        assert!(Bundle::new(b.vocab.clone(), b.tasks.clone(), None, None, lm).is_err());
    }
}
