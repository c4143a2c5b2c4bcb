//! Latent space translation, the predictive-coding head, the contrastive
//! causal objective and the causal-chain text decoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use vqai_tensor::nn::{init_normal, Block, LayerNorm, Linear};
use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var, IGNORE_INDEX};

use crate::encoders::{Features, TokenSequence, BOS, EOS, PAD};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HeadError {
    #[error("no positive nodes")]
    EmptyPositives,
    #[error("no negative nodes")]
    EmptyNegatives,
    #[error("sample has no chain label")]
    NoChainLabel,
    #[error("expected width {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("paradigm {0} needs answer text")]
    MissingAnswerText(Paradigm),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Paradigm {
    #[serde(rename = "qgd")]
    Qgd,
    #[serde(rename = "agd")]
    Agd,
    #[serde(rename = "lgd")]
    Lgd,
    #[serde(rename = "lgd+")]
    LgdPlus,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::Qgd, Paradigm::Agd, Paradigm::Lgd, Paradigm::LgdPlus];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Qgd => "QGD",
            Paradigm::Agd => "AGD",
            Paradigm::Lgd => "LGD",
            Paradigm::LgdPlus => "LGD+",
        }
    }

    /// Whether guidance is built from answer text.
    pub fn uses_answer_text(self) -> bool {
        matches!(self, Paradigm::Agd | Paradigm::LgdPlus)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "qgd" => Ok(Paradigm::Qgd),
            "agd" => Ok(Paradigm::Agd),
            "lgd" => Ok(Paradigm::Lgd),
            "lgd+" | "lgd_plus" | "lgdplus" => Ok(Paradigm::LgdPlus),
            _ => Err(format!("unknown paradigm `{s}` (expected qgd, agd, lgd or lgd+)")),
        }
    }
}

/// Guidance for the denoiser's cross-attention: `[B, L, d_ctx]` plus mask.
pub type GuidanceContext<T> = Features<T>;

/// Latent space translation: one affine map shared across positions.
#[derive(Clone, Debug)]
pub struct Lst {
    pub linear: Linear,
}

impl Lst {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, d_ctx: usize, rng: &mut R) -> Self {
        Lst {
            linear: Linear::new(store, name, d, d_ctx, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, f: &Features<T>) -> Result<GuidanceContext<T>, HeadError> {
        let d = *g.shape(f.x).last().unwrap();
        if d != self.linear.in_dim {
            return Err(HeadError::DimensionMismatch {
                expected: self.linear.in_dim,
                actual: d,
            });
        }
        Ok(Features {
            x: self.linear.forward(g, f.x),
            mask: f.mask.clone(),
        })
    }
}

/// Residual predictive-coding head `x + W2 gelu(W1 x)`.
#[derive(Clone, Debug)]
pub struct PcHead {
    pub up: Linear,
    pub down: Linear,
}

impl PcHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        PcHead {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng),
            down: Linear::with_std(store, &format!("{name}.down"), hidden, d, 0.1 / (hidden as f64).sqrt(), true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, c: &GuidanceContext<T>) -> GuidanceContext<T> {
        let h = self.down.forward(g, g.gelu(self.up.forward(g, c.x)));
        Features {
            x: g.add(c.x, h),
            mask: c.mask.clone(),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.up, &self.down]
            .iter()
            .flat_map(|l| std::iter::once(l.w).chain(l.b))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcpcConfig {
    pub tau: f64,
    pub negatives: usize,
}

impl Default for CcpcConfig {
    fn default() -> Self {
        CcpcConfig {
            tau: 0.07,
            negatives: 15,
        }
    }
}

/// Rows of `x` (`[N, d]`) scaled to unit length.
pub fn l2_normalize<T: Scalar>(g: &Graph<T>, x: Var) -> Var {
    let n = g.shape(x)[0];
    let sq = g.add_scalar(g.sum_axis(g.sqr(x), 1), T::lit(1e-12));
    let inv = g.exp(g.scale(g.log(sq), T::lit(-0.5)));
    g.mul(x, g.reshape(inv, &[n, 1]))
}

/// Contrastive loss of one anchor `[d]` against positives `[P, d]` and
/// negatives `[M, d]` (already projected):
/// mean over p of `-log(e^{s(a,p)/tau} / (e^{s(a,p)/tau} + sum_n e^{s(a,n)/tau}))`
/// where `s` is the dot product of unit-length vectors.
pub fn ccpc_loss<T: Scalar>(g: &Graph<T>, anchor: Var, positives: Var, negatives: Var, tau: f64) -> Result<Var, HeadError> {
    let (ps, ns) = (g.shape(positives), g.shape(negatives));
    if ps[0] == 0 {
        return Err(HeadError::EmptyPositives);
    }
    if ns[0] == 0 {
        return Err(HeadError::EmptyNegatives);
    }
    let d = *g.shape(anchor).last().unwrap();
    for w in [ps[1], ns[1]] {
        if w != d {
            return Err(HeadError::DimensionMismatch { expected: d, actual: w });
        }
    }
    let (p, m) = (ps[0], ns[0]);
    let a = g.reshape(l2_normalize(g, g.reshape(anchor, &[1, d])), &[d, 1]);
    let (positives, negatives) = (l2_normalize(g, positives), l2_normalize(g, negatives));
    let inv_tau = T::lit(1.0 / tau);
    let pos = g.scale(g.matmul(positives, a), inv_tau);
    let neg = g.reshape(g.scale(g.matmul(negatives, a), inv_tau), &[1, m]);
    let neg = g.add(g.constant(Tensor::zeros(&[p, m])), neg);
    let logits = g.concat(&[pos, neg], 1);
    Ok(g.cross_entropy(logits, &vec![0; p]))
}

/// Projection applied to chain-node embeddings before scoring.
#[derive(Clone, Debug)]
pub struct CcpcHead {
    pub proj: Linear,
}

impl CcpcHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, d_ctx: usize, rng: &mut R) -> Self {
        CcpcHead {
            proj: Linear::new(store, name, d, d_ctx, rng),
        }
    }
}

/// Small autoregressive decoder that reads the guidance context.
#[derive(Clone, Debug)]
pub struct MccsDecoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub out: Linear,
    pub dim: usize,
    pub max_len: usize,
    pub vocab: usize,
}

/// Teacher-forcing inputs and targets for a padded batch.
fn teacher_forcing(targets: &[&TokenSequence], len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(targets.len() * len);
    let mut labels = Vec::with_capacity(targets.len() * len);
    for t in targets {
        for j in 0..len {
            inputs.push(match j {
                0 => BOS,
                _ => t.ids.get(j - 1).copied().unwrap_or(PAD),
            });
            labels.push(match j.cmp(&t.len()) {
                std::cmp::Ordering::Less => t.ids[j],
                std::cmp::Ordering::Equal => EOS,
                std::cmp::Ordering::Greater => IGNORE_INDEX,
            });
        }
    }
    (inputs, labels)
}

impl MccsDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        d_ctx: usize,
        layers: usize,
        heads: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Self {
        MccsDecoder {
            embed: store.add(format!("{name}.embed"), init_normal(&[vocab, dim], 1.0, rng)),
            pos: store.add(format!("{name}.pos"), init_normal(&[max_len + 1, dim], 0.5, rng)),
            blocks: (0..layers)
                .map(|i| Block::new(store, &format!("{name}.block{i}"), dim, heads, Some(d_ctx), rng))
                .collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), dim),
            out: Linear::new(store, &format!("{name}.out"), dim, vocab, rng),
            dim,
            max_len,
            vocab,
        }
    }

    /// Logits `[B*L, V]` for input ids laid out `[B, L]`.
    pub fn logits<T: Scalar>(&self, g: &Graph<T>, ctx: &GuidanceContext<T>, ids: &[usize], b: usize, l: usize) -> Var {
        let x = g.reshape(g.embedding(g.param(self.embed), ids), &[b, l, self.dim]);
        let mut x = g.add(x, g.narrow(g.param(self.pos), 0, 0, l));
        for blk in &self.blocks {
            x = blk.forward(g, x, None, true, Some((ctx.x, Some(&ctx.mask))));
        }
        let x = self.ln.forward(g, x);
        g.reshape(self.out.forward(g, x), &[b * l, self.vocab])
    }

    /// Teacher-forced token cross-entropy of `targets` (EOS appended),
    /// averaged over real tokens. `ctx` holds one row per target.
    pub fn loss<T: Scalar>(&self, g: &Graph<T>, ctx: &GuidanceContext<T>, targets: &[&TokenSequence]) -> Result<Var, HeadError> {
        if targets.is_empty() || targets.iter().any(|t| t.is_empty()) {
            return Err(HeadError::NoChainLabel);
        }
        let len = (targets.iter().map(|t| t.len()).max().unwrap() + 1).min(self.max_len + 1);
        let (inputs, labels) = teacher_forcing(targets, len);
        let logits = self.logits(g, ctx, &inputs, targets.len(), len);
        Ok(g.cross_entropy(logits, &labels))
    }

    /// Greedy decoding for every context row, stopping at EOS or `max_len`.
    pub fn greedy<T: Scalar>(&self, store: &ParamStore<T>, ctx_x: &Tensor<T>, ctx_mask: &Tensor<T>) -> Vec<TokenSequence> {
        let b = ctx_x.dim(0);
        let mut seqs: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for step in 0..self.max_len {
            let g = Graph::inference(store);
            let ctx = Features {
                x: g.constant(ctx_x.clone()),
                mask: ctx_mask.clone(),
            };
            let l = step + 1;
            let mut ids = Vec::with_capacity(b * l);
            for s in &seqs {
                ids.push(BOS);
                ids.extend((0..step).map(|j| s.get(j).copied().unwrap_or(PAD)));
            }
            let logits = g.value(self.logits(&g, &ctx, &ids, b, l));
            for i in 0..b {
                if done[i] {
                    continue;
                }
                let row = logits.row(i * l + step);
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(k, _)| k)
                    .unwrap();
                if best == EOS {
                    done[i] = true;
                } else {
                    seqs[i].push(best);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        seqs.into_iter().map(|ids| TokenSequence { ids }).collect()
    }
}
