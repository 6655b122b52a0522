use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::MetricReport;
use super::stats::{bootstrap_ci, euclidean, mean};
use crate::error::{Error, Result};

/// Candidates per retrieval query (one ground truth plus distractors).
pub const R_PRECISION_POOL: usize = 32;

const RESAMPLES: usize = 1000;

fn with_ci(name: &str, samples: &[f64], seed: u64) -> Result<MetricReport> {
    let ci = if samples.len() >= 2 {
        bootstrap_ci(samples, mean, RESAMPLES, seed)?
    } else {
        0.0
    };
    MetricReport::new(name, mean(samples), ci)
}

/// Mean distance over `n_pairs` disjoint random pairs.
pub fn diversity(features: &[Vec<f64>], n_pairs: usize, seed: u64) -> Result<MetricReport> {
    if n_pairs == 0 || features.len() < 2 * n_pairs {
        return Err(Error::Data(format!(
            "diversity over {n_pairs} pairs needs {} features, got {}",
            2 * n_pairs,
            features.len()
        )));
    }
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let d: Vec<f64> = idx[..2 * n_pairs]
        .chunks(2)
        .map(|p| euclidean(&features[p[0]], &features[p[1]]))
        .collect();
    Ok(with_ci("diversity", &d, seed)?.with("pairs", n_pairs))
}

/// Mean distance within disjoint consecutive pairs of each group, averaged over groups.
pub fn multimodality_of_groups(groups: &[Vec<Vec<f64>>], seed: u64) -> Result<MetricReport> {
    if groups.is_empty() {
        return Err(Error::Data("multimodality needs at least one prompt".into()));
    }
    let mut per_prompt = Vec::with_capacity(groups.len());
    for g in groups {
        if g.len() < 2 {
            return Err(Error::Data("multimodality needs at least two samples per prompt".into()));
        }
        let d: Vec<f64> = g.chunks_exact(2).map(|p| euclidean(&p[0], &p[1])).collect();
        per_prompt.push(mean(&d));
    }
    Ok(with_ci("multimodality", &per_prompt, seed)?
        .with("prompts", groups.len())
        .with("samples_per_prompt", groups[0].len()))
}

/// Generates `samples` features per prompt with `generate(prompt, k)` and scores them.
pub fn multimodality<P>(
    prompts: &[P],
    samples: usize,
    mut generate: impl FnMut(&P, usize) -> Result<Vec<f64>>,
    seed: u64,
) -> Result<MetricReport> {
    let groups = prompts
        .iter()
        .map(|p| (0..samples).map(|k| generate(p, k)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    multimodality_of_groups(&groups, seed)
}

/// Top-1/2/3 retrieval accuracy of matched conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct RPrecision {
    pub top: [MetricReport; 3],
}

/// For each output, ranks its condition against random distractor conditions by distance.
pub fn r_precision(outputs: &[Vec<f64>], conditions: &[Vec<f64>], seed: u64) -> Result<RPrecision> {
    if outputs.len() != conditions.len() {
        return Err(Error::Data("outputs and conditions must pair up".into()));
    }
    if conditions.len() < R_PRECISION_POOL {
        return Err(Error::Data(format!(
            "R-precision needs {R_PRECISION_POOL} candidates, got {}",
            conditions.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = [vec![], vec![], vec![]];
    for (i, out) in outputs.iter().enumerate() {
        let truth = euclidean(out, &conditions[i]);
        let mut closer = 0;
        let mut chosen = std::collections::HashSet::new();
        while chosen.len() < R_PRECISION_POOL - 1 {
            let j = rng.gen_range(0..conditions.len());
            if j != i && chosen.insert(j) && euclidean(out, &conditions[j]) < truth {
                closer += 1;
            }
        }
        for (k, h) in hits.iter_mut().enumerate() {
            h.push(if closer <= k { 1.0 } else { 0.0 });
        }
    }
    let mk = |k: usize| -> Result<MetricReport> {
        Ok(with_ci(&format!("r_precision@{}", k + 1), &hits[k], seed)?.with("pool", R_PRECISION_POOL).with("queries", outputs.len()))
    };
    Ok(RPrecision {
        top: [mk(0)?, mk(1)?, mk(2)?],
    })
}

/// Mean distance between each output and its condition.
pub fn mm_dist(outputs: &[Vec<f64>], conditions: &[Vec<f64>], seed: u64) -> Result<MetricReport> {
    if outputs.is_empty() || outputs.len() != conditions.len() {
        return Err(Error::Data("outputs and conditions must pair up".into()));
    }
    let d: Vec<f64> = outputs.iter().zip(conditions).map(|(a, b)| euclidean(a, b)).collect();
    Ok(with_ci("mm_dist", &d, seed)?.with("pairs", d.len()))
}
