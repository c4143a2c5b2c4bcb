//! Dataset generation.

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::{apply_condition, phrase_question, sample_scene, Category, Condition, SceneState};
use crate::chain::CausalChain;
use crate::ingest::{self, CorpusStats, IngestError};
use crate::rng::{derive_seed, substream};

pub const MANIFEST_VERSION: u32 = 1;

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub version: u32,
    pub sample_id: String,
    pub category: Category,
    pub question: String,
    /// Paths relative to the split directory.
    pub init_image: String,
    pub answer_image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<CausalChain>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_state: Option<SceneState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_state: Option<SceneState>,
}

/// Category shares in `Category::ALL` order.
pub fn default_mix() -> [f64; 5] {
    [0.05, 0.22, 0.16, 0.40, 0.17]
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub mix: [f64; 5],
    pub chain_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 2000,
            seed: 0,
            mix: default_mix(),
            chain_fraction: 3809.0 / 17524.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.mix.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad(format!("category_mix must be probabilities summing to 1, got {:?}", self.mix));
        }
        if !(0.0..=1.0).contains(&self.chain_fraction) {
            return bad(format!("chain_fraction must lie in [0, 1], got {}", self.chain_fraction));
        }
        Ok(())
    }

    pub fn chain_count(&self) -> usize {
        (self.n as f64 * self.chain_fraction).round() as usize
    }
}

pub type DatasetSummary = CorpusStats;

/// The record for sample `index` of a dataset seeded with `seed`.
pub fn sample_record(seed: u64, index: usize, category: Category, with_chain: bool) -> SampleRecord {
    let sample_seed = derive_seed(seed, &format!("dataset.sample.{index}"));
    let (init, cond) = sample_scene(sample_seed, category);
    let (answer, chain) = apply_condition(&init, &cond).expect("sampled conditions apply");
    let id = format!("s{index:06}");
    SampleRecord {
        version: MANIFEST_VERSION,
        question: phrase_question(&cond).expect("sampled rules exist"),
        init_image: format!("images/{id}_init.png"),
        answer_image: format!("images/{id}_answer.png"),
        sample_id: id,
        category,
        chain: with_chain.then_some(chain),
        seed: sample_seed,
        condition: Some(cond),
        init_state: Some(init),
        answer_state: Some(answer),
    }
}

/// All records of a dataset, without touching the disk.
pub fn make_records(cfg: &DatasetConfig) -> Result<Vec<SampleRecord>, IngestError> {
    cfg.validate()?;
    let mut cat_rng = substream(cfg.seed, "dataset.category");
    let dist = WeightedIndex::new(cfg.mix).map_err(|e| IngestError::InvalidConfig(e.to_string()))?;
    let categories: Vec<Category> = (0..cfg.n).map(|_| Category::ALL[dist.sample(&mut cat_rng)]).collect();
    let mut chain_rng = substream(cfg.seed, "dataset.chains");
    let mut with_chain = vec![false; cfg.n];
    for i in rand::seq::index::sample(&mut chain_rng, cfg.n, cfg.chain_count()) {
        with_chain[i] = true;
    }
    Ok((0..cfg.n)
        .map(|i| sample_record(cfg.seed, i, categories[i], with_chain[i]))
        .collect())
}

/// Generate `cfg.n` samples into `dir` (manifest, images, vocabulary).
pub fn make_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<DatasetSummary, IngestError> {
    let records = make_records(cfg)?;
    ingest::write_dataset(dir, &records)?;
    Ok(ingest::stats(&records))
}
