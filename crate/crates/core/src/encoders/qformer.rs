use rand::Rng;
use vqai_tensor::nn::{init_normal, Block, LayerNorm, Linear};
use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use super::{EncoderError, FeatureSequence, Features, Provenance};
use crate::microworld::Image;
use crate::pixels::{image_to_tensor, patchify, stack, PATCHES, PATCH_DIM};

/// Query-token image encoder: learned queries self-attend and
/// cross-attend to per-cell image features, giving a fixed-length output.
#[derive(Clone, Debug)]
pub struct QFormer {
    pub patch_in: Linear,
    pub patch_out: Linear,
    pub pos: ParamId,
    pub queries: ParamId,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub dim: usize,
    pub num_queries: usize,
}

impl QFormer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        layers: usize,
        heads: usize,
        num_queries: usize,
        rng: &mut R,
    ) -> Self {
        QFormer {
            patch_in: Linear::new(store, &format!("{name}.patch_in"), PATCH_DIM, dim, rng),
            patch_out: Linear::new(store, &format!("{name}.patch_out"), dim, dim, rng),
            pos: store.add(format!("{name}.pos"), init_normal(&[PATCHES, dim], 0.5, rng)),
            queries: store.add(format!("{name}.queries"), init_normal(&[num_queries, dim], 1.0, rng)),
            blocks: (0..layers)
                .map(|i| Block::new(store, &format!("{name}.block{i}"), dim, heads, Some(dim), rng))
                .collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), dim),
            dim,
            num_queries,
        }
    }

    /// `images` is `[B, 64, 64, 3]`; output `[B, num_queries, d]`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, images: Var) -> Features<T> {
        let b = g.shape(images)[0];
        let p = patchify(g, images);
        let h = g.add(self.patch_in.forward(g, p), g.param(self.pos));
        let feats = self.patch_out.forward(g, g.gelu(h));
        let zeros = g.constant(Tensor::zeros(&[b, self.num_queries, self.dim]));
        let mut q = g.add(zeros, g.param(self.queries));
        for blk in &self.blocks {
            q = blk.forward(g, q, None, false, Some((feats, None)));
        }
        Features {
            x: self.ln.forward(g, q),
            mask: Tensor::ones(&[b, self.num_queries]),
        }
    }

    pub fn encode_image_queries<T: Scalar>(&self, store: &ParamStore<T>, image: &Image) -> Result<FeatureSequence<T>, EncoderError> {
        let t = image_to_tensor::<T>(image)?;
        let g = Graph::inference(store);
        let x = g.constant(stack(&[&t]));
        let f = self.forward(&g, x);
        Ok(super::unbatch(&g, &f, 0, Provenance::ImageQuery))
    }
}
