//! End-to-end evaluation protocols over a trained bundle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bleu, diversity, fid_report, mm_dist, multimodality, r_precision, random_code_rollout, rouge_l, success_rate,
    FeatureExtractor, MetricReport,
};
use crate::error::{Error, Result};
use crate::lm::GenerationConfig;
use crate::motion::{CaptionedTrajectory, Embodiment, Trajectory};
use crate::pipeline::Bundle;
use crate::template;
use crate::vocab::{GridCell, Segment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Sampling settings for motion generation.
    pub generation: GenerationConfig,
    /// Decoding settings for captions.
    pub caption_generation: GenerationConfig,
    pub goals: usize,
    pub n_per_goal: usize,
    pub prompts: usize,
    pub multimodality_prompts: usize,
    pub multimodality_samples: usize,
    pub diversity_pairs: usize,
    pub resamples: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            caption_generation: GenerationConfig::greedy(),
            goals: 25,
            n_per_goal: 40,
            prompts: 100,
            multimodality_prompts: 10,
            multimodality_samples: 20,
            diversity_pairs: 100,
            resamples: 1000,
        }
    }
}

/// Independent, order-free generator stream per `(a, b)`.
pub fn rollout_rng(seed: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((a as u64) << 32) | b as u64);
    rng
}

/// The `n` most frequent goal cells of `corpus`, ties broken by cell index.
pub fn frequent_goal_cells(bundle: &Bundle, corpus: &[CaptionedTrajectory], n: usize) -> Result<Vec<GridCell>> {
    let grid = bundle.vocab.grid();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for c in corpus.iter().filter_map(|c| c.goal_cell) {
        *counts.entry(grid.index(c)?).or_insert(0) += 1;
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(i, _)| grid.cell(i)).collect()
}

/// Goal success of the model and of random code sequences on frequent training goals.
pub fn goal_suite(bundle: &Bundle, corpus: &[CaptionedTrajectory], cfg: &SuiteConfig, seed: u64) -> Result<Vec<MetricReport>> {
    let goals = frequent_goal_cells(bundle, corpus, cfg.goals)?;
    if goals.is_empty() {
        return Err(Error::Data("corpus has no goal cells".into()));
    }
    let grid = bundle.vocab.grid().clone();
    let model = success_rate(
        &grid,
        &goals,
        cfg.n_per_goal,
        |g, k| {
            let gi = grid.index(g)?;
            Ok(bundle.goal(g, None, &cfg.generation, &mut rollout_rng(seed, gi, k))?.trajectory)
        },
        seed,
    )?;
    let tok = bundle.tokenizer(Segment::Robot)?;
    let lens: Vec<usize> = corpus
        .iter()
        .filter(|c| c.trajectory.embodiment.is_robot())
        .map(|c| tok.config().tokens_for(c.trajectory.len()))
        .collect();
    let (lo, hi) = (
        lens.iter().copied().min().unwrap_or(1).max(1),
        lens.iter().copied().max().unwrap_or(1).max(1),
    );
    let baseline = success_rate(
        &grid,
        &goals,
        cfg.n_per_goal,
        |g, k| random_code_rollout(tok, lo..hi + 1, &mut rollout_rng(seed ^ 0xba5e, grid.index(g)?, k)),
        seed,
    )?;
    let mut base = baseline.report;
    base.metric = "success_pct_random_codes".into();
    Ok(vec![model.report, base])
}

fn task_for(e: Embodiment) -> Result<&'static str> {
    match e {
        Embodiment::Robot => Ok(template::TEXT_TO_ROBOT),
        Embodiment::Human { .. } => Ok(template::TEXT_TO_HUMAN),
        Embodiment::Custom { .. } => Err(Error::Embodiment(format!("no text-to-motion task for {e}"))),
    }
}

/// Pairs each item with a different one (a random derangement).
fn shuffled_refs(refs: &[String], seed: u64) -> Vec<String> {
    let mut idx: Vec<usize> = (0..refs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![String::new(); refs.len()];
    for (p, &i) in idx.iter().enumerate() {
        out[i] = refs[idx[(p + 1) % idx.len()]].clone();
    }
    out
}

/// Text-to-motion quality: feature metrics, multimodality and caption back-translation.
pub fn text_to_motion_suite(
    bundle: &Bundle,
    corpus: &[CaptionedTrajectory],
    extractor: &FeatureExtractor,
    cfg: &SuiteConfig,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    let items = &corpus[..cfg.prompts.min(corpus.len())];
    let Some(first) = items.first() else {
        return Err(Error::Data("text-to-motion suite needs prompts".into()));
    };
    let task = task_for(first.trajectory.embodiment)?;
    let mut generated: Vec<Trajectory> = Vec::with_capacity(items.len());
    let mut back = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let m = bundle.text_to_motion(task, &it.caption, None, &cfg.generation, &mut rollout_rng(seed, i, 0))?;
        let seg = if m.trajectory.embodiment.is_robot() { Segment::Robot } else { Segment::Human };
        back.push(bundle.caption_codes(seg, &m.codes, &cfg.caption_generation, &mut rollout_rng(seed, i, 1))?);
        generated.push(m.trajectory);
    }
    let refs: Vec<String> = items.iter().map(|c| c.caption.clone()).collect();
    let real: Vec<Vec<f64>> = corpus.iter().map(|c| extractor.motion_features(&c.trajectory)).collect::<Result<_>>()?;
    let gen_f: Vec<Vec<f64>> = generated.iter().map(|t| extractor.motion_features(t)).collect::<Result<_>>()?;
    let text_f: Vec<Vec<f64>> = refs.iter().map(|t| extractor.text_features(t)).collect::<Result<_>>()?;
    let mut out = vec![fid_report(&real, &gen_f, cfg.resamples, seed)?];
    out.push(diversity(&gen_f, cfg.diversity_pairs.min(gen_f.len() / 2), seed)?);
    if gen_f.len() >= super::R_PRECISION_POOL {
        out.extend(r_precision(&gen_f, &text_f, seed)?.top);
    }
    out.push(mm_dist(&gen_f, &text_f, seed)?);
    let mm_prompts: Vec<usize> = (0..cfg.multimodality_prompts.min(items.len())).collect();
    out.push(multimodality(
        &mm_prompts,
        cfg.multimodality_samples,
        |&i, k| {
            let m = bundle.text_to_motion(task, &items[i].caption, None, &cfg.generation, &mut rollout_rng(seed ^ 0x33, i, k))?;
            extractor.motion_features(&m.trajectory)
        },
        seed,
    )?);
    out.push(bleu(&back, &refs, 1)?);
    out.push(bleu(&back, &refs, 4)?);
    out.push(rouge_l(&back, &refs)?);
    let mut shuffled = bleu(&back, &shuffled_refs(&refs, seed), 1)?;
    shuffled.metric = "bleu@1_shuffled_captions".into();
    out.push(shuffled);
    Ok(out)
}

/// Motion-to-text overlap with the reference captions.
pub fn caption_suite(bundle: &Bundle, corpus: &[CaptionedTrajectory], cfg: &SuiteConfig, seed: u64) -> Result<Vec<MetricReport>> {
    let items = &corpus[..cfg.prompts.min(corpus.len())];
    if items.is_empty() {
        return Err(Error::Data("caption suite needs samples".into()));
    }
    let cands = items
        .iter()
        .enumerate()
        .map(|(i, c)| bundle.motion_to_text(&c.trajectory, &cfg.caption_generation, &mut rollout_rng(seed, i, 2)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<String> = items.iter().map(|c| c.caption.clone()).collect();
    Ok(vec![bleu(&cands, &refs, 1)?, bleu(&cands, &refs, 4)?, rouge_l(&cands, &refs)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffled_references_have_no_fixed_point() {
        let refs: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        let s = shuffled_refs(&refs, 3);
        assert!(refs.iter().zip(&s).all(|(a, b)| a != b));
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, refs);
    }

    #[test]
    fn rollout_streams_differ() {
        use rand::Rng;
        let a: u64 = rollout_rng(1, 0, 1).gen();
        let b: u64 = rollout_rng(1, 1, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, rollout_rng(1, 0, 1).gen::<u64>());
    }
}
