//! Evaluation: embedding similarity, threshold AUC, FID, state decoding
//! and human-judgment tallies, with per-category breakdowns.

mod decode;
mod embedder;
mod human;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub use decode::{decode_state, state_match_rate, state_matches, DecodedState};
pub use embedder::{attributes, Embedder, EmbedderConfig, EMBED_DIM};
pub use human::{append_judgment, read_judgments, tally_by_category, tally_human, HumanScores, JudgmentRecord};
pub use metrics::{auc, cosine, cosines, fid, sim_avg, sim_best_at_k, threshold_grid, FID_EPS};
pub use report::{
    category_columns, render_category_table, render_method_table, render_report, EvalReport,
    MethodReport, MetricRow, TOTAL,
};

use crate::diffusion::{self, Sampler};
use crate::heads::Paradigm;
use crate::ingest::IngestError;
use crate::microworld::{render, Category, Image, SceneState};
use crate::models::{Components, ModelError};
use crate::pixels::{stack, tensor_to_image};
use crate::trainer::Example;
use crate::Scalar;

/// Candidates per sample for the best-of-K metrics.
pub const DEFAULT_K: usize = 9;
/// Points of the threshold grid used for AUC.
pub const GRID_POINTS: usize = 101;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("embedding set of size {0} is too small (need at least 2)")]
    SetTooSmall(usize),
    #[error("invalid judgment record: {0}")]
    InvalidRecord(String),
    #[error("evaluator embedder not found at {0}")]
    EmbedderMissing(PathBuf),
    #[error("corrupt embedder file: {0}")]
    CorruptEmbedder(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A test sample with the candidates one method generated for it.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub sample_id: String,
    pub category: Category,
    pub init_state: SceneState,
    pub answer_state: SceneState,
    pub init_image: Image,
    pub gt_image: Image,
    pub candidates: Vec<Image>,
}

impl EvalSample {
    /// From an example with stored scene states.
    pub fn from_example<T: Scalar>(ex: &Example<T>, candidates: Vec<Image>) -> Option<Self> {
        let (i, a) = (ex.record.init_state.clone()?, ex.record.answer_state.clone()?);
        Some(EvalSample {
            sample_id: ex.id().to_string(),
            category: ex.category(),
            init_image: tensor_to_image(&ex.init),
            gt_image: tensor_to_image(&ex.answer),
            init_state: i,
            answer_state: a,
            candidates,
        })
    }
}

/// Candidate images `[sample][seed]`: seed `s` drives the sampler noise of
/// candidate `s`.
pub fn generate_candidates<T: Scalar>(
    comps: &Components<T>,
    paradigm: Paradigm,
    examples: &[Example<T>],
    seeds: &[u64],
    steps: usize,
    sampler: Sampler,
    batch: usize,
) -> Result<Vec<Vec<Image>>, EvalError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let init = stack(&chunk.iter().map(|e| &e.init).collect::<Vec<_>>());
        let qs: Vec<_> = chunk.iter().map(|e| &e.question).collect();
        let (cx, cm, _) = comps.guidance(paradigm, &init, &qs)?;
        let mut per: Vec<Vec<Image>> = vec![Vec::with_capacity(seeds.len()); chunk.len()];
        for &seed in seeds {
            let row_seeds = vec![seed; chunk.len()];
            let imgs = diffusion::sample(&comps.store, &comps.denoiser, &comps.schedule, &init, &cx, &cm, &row_seeds, steps, sampler)
                .map_err(ModelError::from)?;
            for (i, p) in per.iter_mut().enumerate() {
                p.push(tensor_to_image(&imgs.narrow(0, i, 1).reshape(&[64, 64, 3])));
            }
        }
        out.extend(per);
    }
    Ok(out)
}

struct Scored {
    category: Category,
    cos: Vec<f64>,
    init_cos: Vec<f64>,
    matches: Vec<bool>,
    gt_feat: Vec<f64>,
    cand_feats: Vec<Vec<f64>>,
}

fn aggregate(items: &[&Scored], grid: &[f64]) -> Result<MetricRow, EvalError> {
    let k = items[0].cos.len();
    let n = items.len();
    let avgs: Vec<f64> = items.iter().map(|s| metrics::mean(&s.cos)).collect();
    let bests: Vec<f64> = items.iter().map(|s| metrics::best(&s.cos)).collect();
    let gts: Vec<Vec<f64>> = items.iter().map(|s| s.gt_feat.clone()).collect();
    let cands: Vec<Vec<f64>> = items.iter().flat_map(|s| s.cand_feats.iter().cloned()).collect();
    let fid = match metrics::fid(&cands, &gts, FID_EPS) {
        Ok(v) => Some(v),
        Err(EvalError::SetTooSmall(_)) => None,
        Err(e) => return Err(e),
    };
    let hits = items.iter().flat_map(|s| &s.matches).filter(|&&m| m).count();
    Ok(MetricRow {
        n,
        sim_avg: avgs.iter().sum::<f64>() / n as f64,
        sim_best: bests.iter().sum::<f64>() / n as f64,
        auc_avg: auc(&avgs, grid)?,
        auc_best: auc(&bests, grid)?,
        fid,
        state_match_rate: hits as f64 / (n * k) as f64,
        init_similarity: items.iter().flat_map(|s| &s.init_cos).sum::<f64>() / (n * k) as f64,
        acc: None,
        chosen_rate: None,
    })
}

/// Metrics of one method over its samples: the total column and one
/// column per category present.
pub fn score_method<T: Scalar>(
    embedder: &Embedder<T>,
    method: &str,
    samples: &[EvalSample],
    grid: &[f64],
) -> Result<MethodReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::ShapeMismatch("no samples to score".into()));
    }
    let k = samples[0].candidates.len();
    if k == 0 || samples.iter().any(|s| s.candidates.len() != k) {
        return Err(EvalError::ShapeMismatch("every sample needs the same nonzero number of candidates".into()));
    }
    let mut scored = Vec::with_capacity(samples.len());
    for s in samples {
        let mut images: Vec<&Image> = vec![&s.gt_image, &s.init_image];
        images.extend(s.candidates.iter());
        let (embs, feats) = embedder.embed_with_features(&images);
        scored.push(Scored {
            category: s.category,
            cos: embs[2..].iter().map(|e| cosine(e, &embs[0])).collect(),
            init_cos: embs[2..].iter().map(|e| cosine(e, &embs[1])).collect(),
            matches: s.candidates.iter().map(|c| state_matches(&decode_state(c).state, &s.init_state, &s.answer_state)).collect(),
            gt_feat: feats[0].clone(),
            cand_feats: feats[2..].to_vec(),
        });
    }
    let mut categories = BTreeMap::new();
    categories.insert(TOTAL.to_string(), aggregate(&scored.iter().collect::<Vec<_>>(), grid)?);
    for c in Category::ALL {
        let items: Vec<&Scored> = scored.iter().filter(|s| s.category == c).collect();
        if !items.is_empty() {
            categories.insert(c.short().to_string(), aggregate(&items, grid)?);
        }
    }
    Ok(MethodReport {
        method: method.to_string(),
        categories,
    })
}

/// Ground-truth renders as the candidates of a perfect method.
pub fn oracle_samples<T: Scalar>(examples: &[Example<T>], k: usize) -> Vec<EvalSample> {
    examples
        .iter()
        .filter_map(|e| {
            let a = e.record.answer_state.as_ref()?;
            EvalSample::from_example(e, vec![render(a); k])
        })
        .collect()
}
