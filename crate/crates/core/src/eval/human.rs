//! Human plausibility judgments and their tallies.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::IngestError;
use crate::microworld::Category;

/// One rater's verdict on one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub rater: String,
    pub sample_id: String,
    /// Method name to plausibility flag.
    pub plausible: BTreeMap<String, bool>,
    pub best: Option<String>,
    /// Order the unlabeled candidates were shown in, and its shuffle seed.
    #[serde(default)]
    pub shown_order: Vec<String>,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl JudgmentRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        if let Some(b) = &self.best {
            if self.plausible.get(b) != Some(&true) {
                return Err(EvalError::InvalidRecord(format!(
                    "rater {} picked {b} for {} without marking it plausible",
                    self.rater, self.sample_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HumanScores {
    pub acc: f64,
    pub chosen_rate: f64,
}

/// Acc and ChosenRate per method over all (rater, sample) records.
pub fn tally_human(records: &[JudgmentRecord]) -> Result<BTreeMap<String, HumanScores>, EvalError> {
    let mut flags: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        r.validate()?;
        for (m, &ok) in &r.plausible {
            flags.entry(m.clone()).or_default().0 += ok as usize;
        }
        if let Some(b) = &r.best {
            flags.entry(b.clone()).or_default().1 += 1;
        }
    }
    let n = records.len().max(1) as f64;
    Ok(flags
        .into_iter()
        .map(|(m, (ok, best))| {
            (
                m,
                HumanScores {
                    acc: ok as f64 / n,
                    chosen_rate: best as f64 / n,
                },
            )
        })
        .collect())
}

/// [`tally_human`] restricted to the records of each category.
pub fn tally_by_category(
    records: &[JudgmentRecord],
    categories: &BTreeMap<String, Category>,
) -> Result<BTreeMap<Category, BTreeMap<String, HumanScores>>, EvalError> {
    let mut grouped: BTreeMap<Category, Vec<JudgmentRecord>> = BTreeMap::new();
    for r in records {
        if let Some(&c) = categories.get(&r.sample_id) {
            grouped.entry(c).or_default().push(r.clone());
        }
    }
    grouped.into_iter().map(|(c, rs)| Ok((c, tally_human(&rs)?))).collect()
}

/// Reads one JSON record per line; a missing file holds no records.
pub fn read_judgments(path: &Path) -> Result<Vec<JudgmentRecord>, EvalError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| EvalError::Ingest(IngestError::io(path, e)))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: JudgmentRecord = serde_json::from_str(line).map_err(|e| {
            EvalError::Ingest(IngestError::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Appends one validated record as a JSON line.
pub fn append_judgment(path: &Path, record: &JudgmentRecord) -> Result<(), EvalError> {
    record.validate()?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| EvalError::Ingest(IngestError::io(path, e)))?;
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| EvalError::Ingest(IngestError::io(path, e)))
}
