use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::microworld::{Category, SampleRecord};

/// Question-length, chain-length and category distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub question_lengths: BTreeMap<usize, usize>,
    pub mean_question_length: f64,
    pub chain_lengths: BTreeMap<usize, usize>,
    pub mean_chain_length: f64,
    pub chains: usize,
    pub categories: BTreeMap<Category, usize>,
}

pub fn stats(records: &[SampleRecord]) -> CorpusStats {
    let mut question_lengths = BTreeMap::new();
    let mut chain_lengths = BTreeMap::new();
    let mut categories: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    let (mut words, mut nodes) = (0usize, 0usize);
    for r in records {
        let n = r.question.split_whitespace().count();
        words += n;
        *question_lengths.entry(n).or_insert(0) += 1;
        if let Some(c) = &r.chain {
            nodes += c.nodes.len();
            *chain_lengths.entry(c.nodes.len()).or_insert(0) += 1;
        }
        *categories.get_mut(&r.category).unwrap() += 1;
    }
    let chains: usize = chain_lengths.values().sum();
    CorpusStats {
        samples: records.len(),
        question_lengths,
        mean_question_length: words as f64 / records.len().max(1) as f64,
        chain_lengths,
        mean_chain_length: nodes as f64 / chains.max(1) as f64,
        chains,
        categories,
    }
}

impl CorpusStats {
    /// Most frequent chain length (smallest on ties).
    pub fn chain_length_mode(&self) -> Option<usize> {
        self.chain_lengths
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let bar = |n: usize, total: usize| "#".repeat((40 * n).div_ceil(total.max(1)));
        writeln!(s, "samples: {}  with chains: {}", self.samples, self.chains).unwrap();
        writeln!(s, "\nquestion length (words), mean {:.2}", self.mean_question_length).unwrap();
        for (k, v) in &self.question_lengths {
            writeln!(s, "  {k:>3} {v:>6} {}", bar(*v, self.samples)).unwrap();
        }
        writeln!(s, "\nchain length (nodes), mean {:.2}", self.mean_chain_length).unwrap();
        for (k, v) in &self.chain_lengths {
            writeln!(s, "  {k:>3} {v:>6} {}", bar(*v, self.chains)).unwrap();
        }
        writeln!(s, "\ncategories").unwrap();
        for (c, v) in &self.categories {
            let share = *v as f64 / self.samples.max(1) as f64;
            writeln!(s, "  {:<18} {v:>6} {share:>6.3}", c.name()).unwrap();
        }
        s
    }
}
