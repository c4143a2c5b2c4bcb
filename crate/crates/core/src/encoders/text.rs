use rand::Rng;
use vqai_tensor::nn::{init_normal, Block, LayerNorm};
use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor};

use super::{EncoderError, FeatureSequence, Features, Provenance, TokenSequence, PAD};

/// Pre-norm transformer over word tokens with learned absolute positions.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub dim: usize,
    pub max_len: usize,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Self {
        TextEncoder {
            embed: store.add(format!("{name}.embed"), init_normal(&[vocab, dim], 1.0, rng)),
            pos: store.add(format!("{name}.pos"), init_normal(&[max_len, dim], 0.5, rng)),
            blocks: (0..layers)
                .map(|i| Block::new(store, &format!("{name}.block{i}"), dim, heads, None, rng))
                .collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), dim),
            dim,
            max_len,
        }
    }

    /// Encodes a padded batch; output `[B, max L, d]`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, seqs: &[&TokenSequence]) -> Result<Features<T>, EncoderError> {
        let l = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if l == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(EncoderError::EmptyInput);
        }
        if l > self.max_len {
            return Err(EncoderError::SequenceTooLong { len: l, max: self.max_len });
        }
        let b = seqs.len();
        let mut ids = Vec::with_capacity(b * l);
        let mut mask = Vec::with_capacity(b * l);
        for s in seqs {
            for j in 0..l {
                ids.push(s.ids.get(j).copied().unwrap_or(PAD));
                mask.push(if j < s.len() { T::one() } else { T::zero() });
            }
        }
        let mask = Tensor::from_vec(&[b, l], mask);
        let x = g.reshape(g.embedding(g.param(self.embed), &ids), &[b, l, self.dim]);
        let pos = g.narrow(g.param(self.pos), 0, 0, l);
        let mut x = g.add(x, pos);
        for blk in &self.blocks {
            x = blk.forward(g, x, Some(&mask), false, None);
        }
        Ok(Features {
            x: self.ln.forward(g, x),
            mask,
        })
    }

    pub fn encode_text<T: Scalar>(&self, store: &ParamStore<T>, tokens: &TokenSequence) -> Result<FeatureSequence<T>, EncoderError> {
        let g = Graph::inference(store);
        let f = self.forward(&g, &[tokens])?;
        Ok(super::unbatch(&g, &f, 0, Provenance::Text))
    }
}
