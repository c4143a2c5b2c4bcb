use rand::seq::SliceRandom;

use super::IngestError;
use crate::microworld::SampleRecord;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    /// Put every chain-annotated sample in the training split.
    pub chains_in_train: bool,
}

/// Seeded shuffle, then partition into (train, val, test).
pub fn split(
    records: &[SampleRecord],
    spec: &SplitSpec,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>), IngestError> {
    let total = spec.train + spec.val + spec.test;
    if total != records.len() {
        return Err(IngestError::CountMismatch {
            spec: total,
            actual: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut substream(spec.seed, "ingest.split"));
    if spec.chains_in_train {
        let chains = records.iter().filter(|r| r.chain.is_some()).count();
        if chains > spec.train {
            return Err(IngestError::ChainsExceedTrain {
                chains,
                train: spec.train,
            });
        }
        order.sort_by_key(|&i| records[i].chain.is_none());
    }
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| records[i].clone()).collect();
    Ok((
        take(0..spec.train),
        take(spec.train..spec.train + spec.val),
        take(spec.train + spec.val..total),
    ))
}
