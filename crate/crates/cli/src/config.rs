//! Serializable run configurations, one per command.

use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use kinetok::eval::suite::SuiteConfig;
use kinetok::eval::FeatureConfig;
use kinetok::lm::{GenerationConfig, LmConfig, LmTrainConfig};
use kinetok::motion::{HumanSynthConfig, SynthConfig};
use kinetok::pipeline::MixConfig;
use kinetok::tokenizer::{VqConfig, VqTrainConfig};
use kinetok::vocab::VocabConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Invalid flag combination or value detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    #[default]
    Robot,
    Human,
    Qa,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub kind: CorpusKind,
    pub robot: SynthConfig,
    pub human: HumanSynthConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerRun {
    /// Architecture; defaults to the preset for the corpus embodiment.
    pub tokenizer: Option<VqConfig>,
    pub train: VqTrainConfig,
    /// Trailing corpus items held out for the reported reconstruction loss.
    pub holdout: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmRun {
    /// Codebook sizes are taken from the supplied tokenizers.
    pub vocab: VocabConfig,
    /// `vocab_size` is set from the vocabulary.
    pub lm: LmConfig,
    pub mix: MixConfig,
    pub train: LmTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateRun {
    pub generation: GenerationConfig,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GenerateRun {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            samples: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateRun {
    pub suite: SuiteConfig,
    pub features: FeatureConfig,
    pub seed: u64,
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Writes the resolved configuration next to the command's outputs.
pub fn save<T: Serialize>(path: &Path, cfg: &T) -> anyhow::Result<()> {
    kinetok::io::write_json(path, cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_round_trip_and_reject_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut run = LmRun::default();
        run.train.steps = 7;
        save(&p, &run).unwrap();
        assert_eq!(load::<LmRun>(Some(&p)).unwrap(), run);
        std::fs::write(&p, r#"{"trian": {}}"#).unwrap();
        let err = load::<LmRun>(Some(&p)).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert_eq!(load::<SynthRun>(None).unwrap(), SynthRun::default());
    }
}
