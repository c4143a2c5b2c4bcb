//! Joint optimization of the diffusion, contrastive and chain-decoding
//! losses, with seeded data order and checkpoints.

mod checkpoint;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use vqai_tensor::optim::{clip_global_norm, Adam};
use vqai_tensor::{Graph, ParamId, Scalar, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};

use crate::chain::{linearize, sample_contrast_nodes, CausalChain, ChainNode, DEFAULT_TEMPLATE};
use crate::config::{ConfigError, RunConfig};
use crate::diffusion::{diffusion_loss, draw_noise};
use crate::encoders::{masked_mean, Features, TokenSequence};
use crate::heads::{ccpc_loss, GuidanceContext, Paradigm};
use crate::ingest::{read_manifest, IngestError, MANIFEST_FILE};
use crate::microworld::{apply_condition, render, sample_scene, Category, SampleRecord};
use crate::models::{Components, ModelError};
use crate::pixels::{image_to_tensor, stack};
use crate::rng::substream;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} on samples {}", samples.join(", "))]
    NonFiniteLoss { step: u64, samples: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// A training or evaluation sample with its images as tensors.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub record: SampleRecord,
    /// `[64, 64, 3]` in [-1, 1].
    pub init: Tensor<T>,
    pub answer: Tensor<T>,
    pub question: TokenSequence,
    /// Tokens of the linearized chain, when annotated.
    pub chain_text: Option<TokenSequence>,
}

impl<T: Scalar> Example<T> {
    /// Builds an example from a record whose scene states are stored,
    /// rendering the images in memory.
    pub fn from_record(record: SampleRecord, comps: &Components<T>) -> Result<Self, TrainError> {
        let (Some(i), Some(a)) = (&record.init_state, &record.answer_state) else {
            return Err(TrainError::Model(ModelError::InvalidConfig(format!(
                "sample {} has no scene states to render",
                record.sample_id
            ))));
        };
        let init = image_to_tensor(&render(i)).map_err(|e| ModelError::Encoder(e.into()))?;
        let answer = image_to_tensor(&render(a)).map_err(|e| ModelError::Encoder(e.into()))?;
        Self::with_images(record, init, answer, comps)
    }

    fn with_images(record: SampleRecord, init: Tensor<T>, answer: Tensor<T>, comps: &Components<T>) -> Result<Self, TrainError> {
        let question = comps.tokenize(&record.question)?;
        let chain_text = match &record.chain {
            Some(c) => Some(comps.tokenize(&linearize(c, DEFAULT_TEMPLATE).map_err(ModelError::from)?)?),
            None => None,
        };
        Ok(Example {
            record,
            init,
            answer,
            question,
            chain_text,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.sample_id
    }

    pub fn category(&self) -> Category {
        self.record.category
    }

    pub fn chain(&self) -> Option<&CausalChain> {
        self.record.chain.as_ref()
    }
}

fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>, TrainError> {
    let img = image::open(path)
        .map_err(|e| IngestError::Image {
            path: path.into(),
            message: e.to_string(),
        })?
        .to_rgb8();
    image_to_tensor(&img).map_err(|e| {
        TrainError::Ingest(IngestError::Image {
            path: path.into(),
            message: e.to_string(),
        })
    })
}

/// Reads a split directory: manifest plus the PNG files it references.
pub fn load_examples<T: Scalar>(dir: &Path, comps: &Components<T>) -> Result<Vec<Example<T>>, TrainError> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(TrainError::DatasetMissing(manifest));
    }
    read_manifest(&manifest)?
        .into_iter()
        .map(|r| {
            let init = load_png(&dir.join(&r.init_image))?;
            let answer = load_png(&dir.join(&r.answer_image))?;
            Example::with_images(r, init, answer, comps)
        })
        .collect()
}

/// Distinct chain nodes of `examples`, followed by those of the rule
/// engine's own catalogue; the fallback negative pool.
pub fn node_pool<T>(examples: &[Example<T>]) -> Vec<ChainNode> {
    let mut seen = std::collections::BTreeSet::new();
    let mut pool = Vec::new();
    let own = examples.iter().filter_map(|e| e.record.chain.as_ref()).flat_map(|c| c.nodes.iter());
    for n in own.chain(node_catalogue().iter()) {
        if seen.insert(n.phrase()) {
            pool.push(n.clone());
        }
    }
    pool
}

/// Nodes of the chains of a fixed set of sampled scenes.
pub fn node_catalogue() -> &'static [ChainNode] {
    static CATALOGUE: std::sync::OnceLock<Vec<ChainNode>> = std::sync::OnceLock::new();
    CATALOGUE.get_or_init(|| {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for seed in 0..200 {
            for &c in &Category::ALL {
                let (s, cond) = sample_scene(seed, c);
                let (_, chain) = apply_condition(&s, &cond).expect("sampled conditions apply");
                for n in chain.nodes {
                    if seen.insert(n.phrase()) {
                        out.push(n);
                    }
                }
            }
        }
        out
    })
}

/// Per-step losses; unweighted terms, with `total` the weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub diffusion: f64,
    pub ccpc: f64,
    pub mccs: f64,
}

/// Graph nodes of one step's loss.
pub struct LossTerms {
    pub total: Var,
    pub diffusion: Var,
    pub ccpc: Option<Var>,
    pub mccs: Option<Var>,
}

fn rows<T: Scalar>(g: &Graph<T>, ctx: &GuidanceContext<T>, idx: &[usize]) -> GuidanceContext<T> {
    let parts: Vec<Var> = idx.iter().map(|&i| g.narrow(ctx.x, 0, i, 1)).collect();
    let masks: Vec<Tensor<T>> = idx.iter().map(|&i| ctx.mask.narrow(0, i, 1)).collect();
    Features {
        x: g.concat(&parts, 0),
        mask: Tensor::concat(&masks.iter().collect::<Vec<_>>(), 0),
    }
}

/// `L = L_diff + λ_ccpc L_ccpc + λ_mccs L_mccs` on one batch. The chain
/// terms average over chain-annotated samples only and are absent when the
/// batch has none or their weight is zero.
pub fn total_loss<T: Scalar, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    g: &Graph<T>,
    comps: &Components<T>,
    batch: &[&Example<T>],
    cfg: &RunConfig,
    pool: &[ChainNode],
    noise_rng: &mut R1,
    neg_rng: &mut R2,
) -> Result<LossTerms, TrainError> {
    let b = batch.len();
    let (lc, lm) = cfg.effective_lambdas();
    let init_t = stack(&batch.iter().map(|e| &e.init).collect::<Vec<_>>());
    let answer_t = stack(&batch.iter().map(|e| &e.answer).collect::<Vec<_>>());
    let init = g.constant(init_t.clone());
    let questions: Vec<&TokenSequence> = batch.iter().map(|e| &e.question).collect();
    let answers: Vec<&TokenSequence> = batch.iter().map(|e| e.chain_text.as_ref().unwrap_or(&e.question)).collect();
    let annotated: Vec<usize> = (0..b).filter(|&i| batch[i].chain_text.is_some()).collect();

    let p = cfg.paradigm;
    let needs_latent = matches!(p, Paradigm::Lgd | Paradigm::LgdPlus) || (p == Paradigm::Agd && (lc > 0.0 || lm > 0.0) && !annotated.is_empty());
    let latent = if needs_latent {
        Some(comps.lgd_latent(g, init, &questions)?)
    } else {
        None
    };
    let ctx = match p {
        Paradigm::Qgd => comps.translated_text(g, &questions)?,
        Paradigm::Agd => comps.translated_text(g, &answers)?,
        Paradigm::Lgd => latent.clone().unwrap(),
        Paradigm::LgdPlus => {
            let lat = latent.as_ref().unwrap();
            let txt = comps.translated_text(g, &answers)?;
            Features {
                x: g.concat(&[lat.x, txt.x], 1),
                mask: Tensor::concat(&[&lat.mask, &txt.mask], 1),
            }
        }
    };
    let (ts, eps) = draw_noise::<T, _>(b, &comps.schedule, noise_rng);
    let l_diff = diffusion_loss(g, &comps.denoiser, &comps.schedule, &answer_t, &init_t, &ctx, &ts, &eps).map_err(ModelError::from)?;

    let mut total = l_diff;
    let mut l_ccpc = None;
    let mut l_mccs = None;
    if let (Some(lat), false) = (&latent, annotated.is_empty()) {
        if lc > 0.0 {
            let chains: Vec<Option<&CausalChain>> = batch.iter().map(|e| e.record.chain.as_ref()).collect();
            let mut plans = Vec::new();
            let mut phrases = Vec::new();
            for &i in &annotated {
                let (pos, neg) = sample_contrast_nodes(&chains, i, comps.cfg.ccpc.negatives, pool, neg_rng).map_err(ModelError::from)?;
                if pos.is_empty() {
                    continue;
                }
                for n in pos.iter().chain(&neg) {
                    phrases.push(comps.tokenize(&n.phrase())?);
                }
                plans.push((i, pos.len(), neg.len()));
            }
            if !plans.is_empty() {
                let refs: Vec<&TokenSequence> = phrases.iter().collect();
                let emb = comps.node_embeddings(g, &refs)?;
                let anchors = masked_mean(g, lat.x, &lat.mask);
                let d = comps.cfg.d_ctx;
                let mut off = 0;
                let mut terms = Vec::new();
                for &(i, np, nn) in &plans {
                    let a = g.reshape(g.narrow(anchors, 0, i, 1), &[d]);
                    let pos = g.narrow(emb, 0, off, np);
                    let neg = g.narrow(emb, 0, off + np, nn);
                    terms.push(g.reshape(ccpc_loss(g, a, pos, neg, comps.cfg.ccpc.tau).map_err(ModelError::from)?, &[1]));
                    off += np + nn;
                }
                let l = g.mean(g.concat(&terms, 0));
                total = g.add(total, g.scale(l, T::lit(lc)));
                l_ccpc = Some(l);
            }
        }
        if lm > 0.0 {
            let sub = rows(g, lat, &annotated);
            let targets: Vec<&TokenSequence> = annotated.iter().map(|&i| batch[i].chain_text.as_ref().unwrap()).collect();
            let l = comps.mccs.loss(g, &sub, &targets).map_err(ModelError::from)?;
            total = g.add(total, g.scale(l, T::lit(lm)));
            l_mccs = Some(l);
        }
    }
    Ok(LossTerms {
        total,
        diffusion: l_diff,
        ccpc: l_ccpc,
        mccs: l_mccs,
    })
}

/// Fresh, untrained checkpoint for `cfg`.
pub fn initial_checkpoint<T: Scalar>(cfg: &RunConfig) -> Result<Checkpoint<T>, TrainError> {
    cfg.validate()?;
    let components = Components::new(&cfg.model, cfg.seed)?;
    let adam = Adam::new(&components.store, cfg.learning_rate);
    Ok(Checkpoint {
        components,
        adam,
        step: 0,
        run: cfg.clone(),
        history: Vec::new(),
    })
}

/// Number of optimizer steps `cfg` asks for on `n` examples.
pub fn planned_steps(cfg: &RunConfig, n: usize) -> u64 {
    let per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let all = per_epoch * cfg.epochs as u64;
    if cfg.max_steps > 0 {
        all.min(cfg.max_steps as u64)
    } else {
        all
    }
}

/// Hooks called during [`train`].
pub trait Observer<T> {
    fn on_step(&mut self, _record: &LossRecord) {}
    fn on_checkpoint(&mut self, _ckpt: &Checkpoint<T>) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct Silent;
impl<T> Observer<T> for Silent {}

/// Trains from a fresh initialization. Data order, noise and negatives come
/// from the `trainer.order`, `trainer.noise` and `trainer.negatives`
/// streams of `cfg.seed`; weights from `trainer.init`.
pub fn train<T: Scalar>(cfg: &RunConfig, examples: &[Example<T>], observer: &mut dyn Observer<T>) -> Result<Checkpoint<T>, TrainError> {
    let mut ck = initial_checkpoint::<T>(cfg)?;
    let steps = planned_steps(cfg, examples.len());
    if steps == 0 {
        return Ok(ck);
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let pool = node_pool(examples);
    let mut order_rng = substream(cfg.seed, "trainer.order");
    let mut noise_rng = substream(cfg.seed, "trainer.noise");
    let mut neg_rng = substream(cfg.seed, "trainer.negatives");
    let denoiser: Vec<ParamId> = ck.components.group("denoiser.");
    let frozen = move |id: ParamId| !denoiser.contains(&id);
    let freeze = cfg.freeze_encoders;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    'outer: loop {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            let comps = &ck.components;
            let g = if freeze {
                Graph::new(&comps.store).with_frozen(&frozen)
            } else {
                Graph::new(&comps.store)
            };
            let terms = total_loss(&g, comps, &batch, cfg, &pool, &mut noise_rng, &mut neg_rng)?;
            let rec = LossRecord {
                step: ck.step + 1,
                total: g.item(terms.total).as_f64(),
                diffusion: g.item(terms.diffusion).as_f64(),
                ccpc: terms.ccpc.map_or(0.0, |v| g.item(v).as_f64()),
                mccs: terms.mccs.map_or(0.0, |v| g.item(v).as_f64()),
            };
            if !rec.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: rec.step,
                    samples: batch.iter().map(|e| e.id().to_string()).collect(),
                });
            }
            let mut grads = g.backward(terms.total).into_params();
            drop(g);
            clip_global_norm(&mut grads, cfg.grad_clip);
            ck.adam.update(&mut ck.components.store, &grads);
            ck.step += 1;
            ck.history.push(rec);
            observer.on_step(&rec);
            if cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every as u64 == 0 && ck.step < steps {
                observer.on_checkpoint(&ck)?;
            }
            if ck.step >= steps {
                break 'outer;
            }
        }
    }
    let (start, end) = ema_trend(&ck.history, 0.05);
    log::info!("diffusion loss EMA {start:.4} -> {end:.4} over {} steps", ck.step);
    observer.on_checkpoint(&ck)?;
    Ok(ck)
}

/// Exponential moving average of the diffusion loss after the first step
/// and after the last one.
pub fn ema_trend(history: &[LossRecord], alpha: f64) -> (f64, f64) {
    let mut ema = None;
    let mut first = f64::NAN;
    for (i, r) in history.iter().enumerate() {
        let e = match ema {
            None => r.diffusion,
            Some(prev) => alpha * r.diffusion + (1.0 - alpha) * prev,
        };
        if i == 0 {
            first = e;
        }
        ema = Some(e);
    }
    (first, ema.unwrap_or(f64::NAN))
}
