//! All trainable components in one parameter store, and the paradigm
//! dispatch that turns a sample into guidance for the denoiser.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::chain::ChainError;
use crate::diffusion::{self, make_schedule, Denoiser, DiffusionConfig, DiffusionError, NoiseSchedule, Sampler};
use crate::encoders::{fuse, masked_mean, EncoderError, Features, QFormer, TextEncoder, TokenSequence, Vocab};
use crate::heads::{CcpcConfig, CcpcHead, GuidanceContext, HeadError, Lst, MccsDecoder, Paradigm, PcHead};
use crate::rng::substream;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_text: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub max_len: usize,
    pub num_queries: usize,
    pub qformer_layers: usize,
    pub d_ctx: usize,
    pub pc_hidden: usize,
    pub mccs_dim: usize,
    pub mccs_layers: usize,
    pub mccs_heads: usize,
    pub mccs_max_len: usize,
    pub ccpc: CcpcConfig,
    pub diffusion: DiffusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: Vocab::builtin().len(),
            d_text: 128,
            text_layers: 2,
            text_heads: 4,
            max_len: 64,
            num_queries: 8,
            qformer_layers: 2,
            d_ctx: 128,
            pc_hidden: 256,
            mccs_dim: 128,
            mccs_layers: 2,
            mccs_heads: 4,
            mccs_max_len: 48,
            ccpc: CcpcConfig::default(),
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_ctx != self.diffusion.d_ctx {
            return bad(format!("d_ctx {} differs from the denoiser context width {}", self.d_ctx, self.diffusion.d_ctx));
        }
        for (name, d, h) in [
            ("d_text", self.d_text, self.text_heads),
            ("mccs_dim", self.mccs_dim, self.mccs_heads),
            ("diffusion.d0", self.diffusion.d0, self.diffusion.heads),
            ("diffusion.d1", self.diffusion.d1, self.diffusion.heads),
        ] {
            if h == 0 || d == 0 || d % h != 0 {
                return bad(format!("{name} = {d} must be a positive multiple of {h} heads"));
            }
        }
        if !(self.ccpc.tau > 0.0) || self.ccpc.negatives == 0 {
            return bad(format!("ccpc needs tau > 0 and at least one negative, got {:?}", self.ccpc));
        }
        if self.num_queries == 0 || self.max_len == 0 || self.mccs_max_len == 0 {
            return bad("sequence lengths must be positive".into());
        }
        make_schedule(self.diffusion.timesteps, self.diffusion.beta_start, self.diffusion.beta_end)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Every trainable module plus the store holding their weights.
#[derive(Clone, Debug)]
pub struct Components<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub vocab: Vocab,
    pub text: TextEncoder,
    pub qformer: QFormer,
    pub lst: Lst,
    pub pc: PcHead,
    pub ccpc: CcpcHead,
    pub mccs: MccsDecoder,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

/// Parameter-name prefixes of the encoder side (everything but the denoiser).
pub const ENCODER_GROUPS: [&str; 6] = ["text.", "qformer.", "lst.", "pc.", "ccpc.", "mccs."];

impl<T: Scalar> Components<T> {
    /// Fresh weights drawn from the `trainer.init` stream of `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let vocab = Vocab::builtin().clone();
        if vocab.len() != cfg.vocab_size {
            return Err(ModelError::InvalidConfig(format!(
                "vocab_size {} but the vocabulary has {} words",
                cfg.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = substream(seed, "trainer.init");
        let mut store = ParamStore::new();
        let s = &mut store;
        let text = TextEncoder::new(s, "text", cfg.vocab_size, cfg.d_text, cfg.text_layers, cfg.text_heads, cfg.max_len, &mut rng);
        let qformer = QFormer::new(s, "qformer", cfg.d_text, cfg.qformer_layers, cfg.text_heads, cfg.num_queries, &mut rng);
        let lst = Lst::new(s, "lst", cfg.d_text, cfg.d_ctx, &mut rng);
        let pc = PcHead::new(s, "pc", cfg.d_ctx, cfg.pc_hidden, &mut rng);
        let ccpc = CcpcHead::new(s, "ccpc", cfg.d_text, cfg.d_ctx, &mut rng);
        let mccs = MccsDecoder::new(
            s,
            "mccs",
            cfg.vocab_size,
            cfg.mccs_dim,
            cfg.d_ctx,
            cfg.mccs_layers,
            cfg.mccs_heads,
            cfg.mccs_max_len,
            &mut rng,
        );
        let denoiser = Denoiser::new(s, "denoiser", &cfg.diffusion, &mut rng);
        let d = &cfg.diffusion;
        Ok(Components {
            schedule: make_schedule(d.timesteps, d.beta_start, d.beta_end)?,
            cfg: cfg.clone(),
            store,
            vocab,
            text,
            qformer,
            lst,
            pc,
            ccpc,
            mccs,
            denoiser,
        })
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, ModelError> {
        Ok(self.vocab.tokenize(text)?)
    }

    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.store.group(prefix)
    }

    /// `pc(lst(fuse(qformer(init), text(question))))`.
    pub fn lgd_latent(&self, g: &Graph<T>, init: Var, questions: &[&TokenSequence]) -> Result<GuidanceContext<T>, ModelError> {
        let img = self.qformer.forward(g, init);
        let txt = self.text.forward(g, questions)?;
        let c = self.lst.forward(g, &fuse(g, &img, &txt))?;
        Ok(self.pc.forward(g, &c))
    }

    /// `lst(text(seqs))`.
    pub fn translated_text(&self, g: &Graph<T>, seqs: &[&TokenSequence]) -> Result<GuidanceContext<T>, ModelError> {
        let f = self.text.forward(g, seqs)?;
        Ok(self.lst.forward(g, &f)?)
    }

    /// Guidance for `paradigm`. `init` is `[B, 64, 64, 3]`; `answers` is
    /// needed by AGD and LGD+.
    pub fn build_context(
        &self,
        g: &Graph<T>,
        paradigm: Paradigm,
        init: Var,
        questions: &[&TokenSequence],
        answers: Option<&[&TokenSequence]>,
    ) -> Result<GuidanceContext<T>, ModelError> {
        let answer = || answers.ok_or(HeadError::MissingAnswerText(paradigm));
        Ok(match paradigm {
            Paradigm::Qgd => self.translated_text(g, questions)?,
            Paradigm::Agd => self.translated_text(g, answer()?)?,
            Paradigm::Lgd => self.lgd_latent(g, init, questions)?,
            Paradigm::LgdPlus => {
                let a = answer()?;
                let lgd = self.lgd_latent(g, init, questions)?;
                let txt = self.translated_text(g, a)?;
                Features {
                    x: g.concat(&[lgd.x, txt.x], 1),
                    mask: Tensor::concat(&[&lgd.mask, &txt.mask], 1),
                }
            }
        })
    }

    /// Projected node embeddings `[N, d_ctx]` from "entity variation" phrases.
    pub fn node_embeddings(&self, g: &Graph<T>, phrases: &[&TokenSequence]) -> Result<Var, ModelError> {
        let f = self.text.forward(g, phrases)?;
        let pooled = masked_mean(g, f.x, &f.mask);
        Ok(self.ccpc.proj.forward(g, pooled))
    }

    /// Greedy chain text decoded from the LGD latent of each row.
    pub fn decode_chains(&self, init: &Tensor<T>, questions: &[&TokenSequence]) -> Result<Vec<TokenSequence>, ModelError> {
        let g = Graph::inference(&self.store);
        let lat = self.lgd_latent(&g, g.constant(init.clone()), questions)?;
        let x = g.value(lat.x);
        Ok(self.mccs.greedy(&self.store, &x, &lat.mask))
    }

    /// Inference-time guidance as plain tensors. AGD and LGD+ use chain text
    /// decoded by the MCCS head; empty decodes fall back to the question.
    pub fn guidance(
        &self,
        paradigm: Paradigm,
        init: &Tensor<T>,
        questions: &[&TokenSequence],
    ) -> Result<(Tensor<T>, Tensor<T>, Option<Vec<TokenSequence>>), ModelError> {
        let decoded = if paradigm.uses_answer_text() {
            let d = self.decode_chains(init, questions)?;
            Some(
                d.into_iter()
                    .zip(questions)
                    .map(|(s, q)| if s.is_empty() { (*q).clone() } else { s })
                    .map(|s| TokenSequence {
                        ids: s.ids.into_iter().take(self.cfg.max_len).collect(),
                    })
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        let g = Graph::inference(&self.store);
        let refs: Option<Vec<&TokenSequence>> = decoded.as_ref().map(|d| d.iter().collect());
        let ctx = self.build_context(&g, paradigm, g.constant(init.clone()), questions, refs.as_deref())?;
        Ok((g.value(ctx.x), ctx.mask, decoded))
    }
}

impl<T: Scalar> Components<T> {
    /// Answer images `[B, 64, 64, 3]` for initial images `init`, one seed
    /// per row.
    pub fn generate(
        &self,
        paradigm: Paradigm,
        init: &Tensor<T>,
        questions: &[&TokenSequence],
        seeds: &[u64],
        steps: usize,
        sampler: Sampler,
    ) -> Result<Tensor<T>, ModelError> {
        let (cx, cm, _) = self.guidance(paradigm, init, questions)?;
        Ok(diffusion::sample(&self.store, &self.denoiser, &self.schedule, init, &cx, &cm, seeds, steps, sampler)?)
    }
}

/// Plain-tensor view of the guidance of batch row `i`.
pub fn context_row<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>, i: usize) -> (Tensor<T>, Tensor<T>) {
    let (l, d) = (x.dim(1), x.dim(2));
    (
        Tensor::from_vec(&[1, l, d], x.data()[i * l * d..(i + 1) * l * d].to_vec()),
        Tensor::from_vec(&[1, l], mask.row(i).to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig {
            d_text: 16,
            text_layers: 1,
            text_heads: 2,
            num_queries: 3,
            qformer_layers: 1,
            d_ctx: 8,
            pc_hidden: 16,
            mccs_dim: 16,
            mccs_layers: 1,
            mccs_heads: 2,
            diffusion: DiffusionConfig {
                d0: 16,
                d1: 32,
                heads: 2,
                d_ctx: 8,
                timesteps: 20,
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn context_lengths_per_paradigm() {
        let c = Components::<f32>::new(&tiny(), 0).unwrap();
        let g = Graph::inference(&c.store);
        let init = g.constant(Tensor::zeros(&[1, 64, 64, 3]));
        let q = c.tokenize("What happens if the ball is dropped?").unwrap();
        let a = c.tokenize("ball is dropped causes ball lies on the ground").unwrap();
        let len = |p: Paradigm, ans: Option<&[&TokenSequence]>| {
            let ctx = c.build_context(&g, p, init, &[&q], ans).unwrap();
            assert_eq!(g.shape(ctx.x)[2], 8);
            g.shape(ctx.x)[1]
        };
        assert_eq!(len(Paradigm::Qgd, None), q.len());
        assert_eq!(len(Paradigm::Agd, Some(&[&a])), a.len());
        assert_eq!(len(Paradigm::Lgd, None), 3 + q.len());
        assert_eq!(len(Paradigm::LgdPlus, Some(&[&a])), 3 + q.len() + a.len());
        for p in [Paradigm::Agd, Paradigm::LgdPlus] {
            assert_eq!(
                c.build_context(&g, p, init, &[&q], None).err(),
                Some(ModelError::Head(HeadError::MissingAnswerText(p)))
            );
        }
    }

    #[test]
    fn hash_tracks_context_width() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.d_ctx = 64;
        b.diffusion.d_ctx = 64;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ModelConfig::default().hash());
        let mut c = a.clone();
        c.d_ctx = 64;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Components::<f32>::new(&tiny(), 1).unwrap();
        let b = Components::<f32>::new(&tiny(), 1).unwrap();
        let c = Components::<f32>::new(&tiny(), 2).unwrap();
        let w = |x: &Components<f32>| x.store.value(x.lst.linear.w).clone();
        assert_eq!(w(&a), w(&b));
        assert_ne!(w(&a), w(&c));
        for p in ENCODER_GROUPS {
            assert!(!a.group(p).is_empty(), "{p}");
        }
    }

    #[test]
    fn guidance_decodes_text_for_answer_paradigms() {
        let c = Components::<f32>::new(&tiny(), 0).unwrap();
        let q = c.tokenize("What happens if the ball is dropped?").unwrap();
        let init = Tensor::zeros(&[1, 64, 64, 3]);
        let (x, m, d) = c.guidance(Paradigm::Agd, &init, &[&q]).unwrap();
        let d = d.unwrap();
        assert_eq!(x.dim(1), d[0].len());
        assert_eq!(m.shape(), [1, d[0].len()]);
        let (_, _, none) = c.guidance(Paradigm::Qgd, &init, &[&q]).unwrap();
        assert!(none.is_none());
    }
}
