//! Text encoder, query-token image encoder and feature fusion.

mod qformer;
mod text;
mod vocab;

use vqai_tensor::{Graph, Scalar, Tensor, Var};

pub use qformer::QFormer;
pub use text::TextEncoder;
pub use vocab::{split_words, TokenSequence, Vocab, BOS, EOS, PAD};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("empty input")]
    EmptyInput,
    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error(transparent)]
    BadImageShape(#[from] crate::pixels::BadImageShape),
    #[error("feature widths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Text,
    ImageQuery,
    Fused,
    Translated,
}

/// One sample's features: `[L, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    pub vectors: Tensor<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn len(&self) -> usize {
        self.vectors.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim(1)
    }
}

/// Batched features `[B, L, d]` with a `[B, L]` validity mask (1 = real).
#[derive(Clone, Debug)]
pub struct Features<T> {
    pub x: Var,
    pub mask: Tensor<T>,
}

/// Image queries first, then text, along the sequence axis.
pub fn fuse<T: Scalar>(g: &Graph<T>, image: &Features<T>, text: &Features<T>) -> Features<T> {
    Features {
        x: g.concat(&[image.x, text.x], 1),
        mask: Tensor::concat(&[&image.mask, &text.mask], 1),
    }
}

/// Unbatched fusion on plain feature sequences.
pub fn fuse_sequences<T: Scalar>(
    image: &FeatureSequence<T>,
    text: &FeatureSequence<T>,
) -> Result<FeatureSequence<T>, EncoderError> {
    if text.is_empty() {
        return Ok(FeatureSequence {
            provenance: Provenance::Fused,
            ..image.clone()
        });
    }
    if image.dim() != text.dim() {
        return Err(EncoderError::DimensionMismatch(image.dim(), text.dim()));
    }
    Ok(FeatureSequence {
        vectors: Tensor::concat(&[&image.vectors, &text.vectors], 0),
        provenance: Provenance::Fused,
    })
}

/// Mean over valid positions: `[B, L, d]` -> `[B, d]`.
pub fn masked_mean<T: Scalar>(g: &Graph<T>, x: Var, mask: &Tensor<T>) -> Var {
    let (b, l) = (mask.dim(0), mask.dim(1));
    let m = g.constant(mask.clone().reshape(&[b, l, 1]));
    let summed = g.sum_axis(g.mul(x, m), 1);
    let inv: Vec<T> = (0..b)
        .map(|i| {
            let n: T = mask.row(i).iter().copied().sum();
            T::one() / n.max(T::one())
        })
        .collect();
    g.mul(summed, g.constant(Tensor::from_vec(&[b, 1], inv)))
}

/// Splits batch row `i` of `[B, L, d]` into a feature sequence, dropping
/// padded positions.
pub fn unbatch<T: Scalar>(g: &Graph<T>, f: &Features<T>, i: usize, provenance: Provenance) -> FeatureSequence<T> {
    let x = g.value(f.x);
    let (l, d) = (x.dim(1), x.dim(2));
    let n = f.mask.row(i).iter().filter(|&&v| v > T::zero()).count();
    let start = i * l * d;
    FeatureSequence {
        vectors: Tensor::from_vec(&[n, d], x.data()[start..start + n * d].to_vec()),
        provenance,
    }
}
