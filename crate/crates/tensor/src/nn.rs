//! Parameter storage and the handful of layers the models are built from.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Flat, ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Ids whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.entries[id.0].name.starts_with(prefix))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                })
                .collect(),
        }
    }
}

/// Weight initialisation helper: normal with `std`.
pub fn init_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, std, rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_std(store, name, in_dim, out_dim, 1.0 / (in_dim as f64).sqrt(), true, rng)
    }

    pub fn with_std<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_normal(&[in_dim, out_dim], std, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Var {
        let y = g.matmul(x, g.param(self.w));
        match self.b {
            Some(b) => g.add(y, g.param(b)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Var {
        g.layer_norm(x, g.param(self.gamma), g.param(self.beta), Self::EPS)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::with_std(
                store,
                &format!("{name}.down"),
                hidden,
                dim,
                0.5 / (hidden as f64).sqrt(),
                true,
                rng,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Var {
        let h = g.gelu(self.up.forward(g, x));
        self.down.forward(g, h)
    }
}

/// Additive attention mask for `[batch*heads, lq, lk]` scores.
///
/// `key_valid` is `[batch, lk]` with 1 for real positions and 0 for padding.
pub fn attention_mask<T: Scalar>(
    batch: usize,
    heads: usize,
    lq: usize,
    lk: usize,
    key_valid: Option<&Tensor<T>>,
    causal: bool,
) -> Option<Tensor<T>> {
    if key_valid.is_none() && !causal {
        return None;
    }
    let neg = T::lit(-1e9);
    let mut data = vec![T::zero(); batch * heads * lq * lk];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..lq {
                let row = ((b * heads + h) * lq + i) * lk;
                for j in 0..lk {
                    let padded = key_valid.is_some_and(|m| m.data()[b * lk + j] <= T::zero());
                    if padded || (causal && j > i) {
                        data[row + j] = neg;
                    }
                }
            }
        }
    }
    Some(Tensor::from_vec(&[batch * heads, lq, lk], data))
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert_eq!(dim % heads, 0, "dim {dim} not divisible by {heads} heads");
        Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_dim, dim, rng),
            o: Linear::with_std(
                store,
                &format!("{name}.o"),
                dim,
                dim,
                0.5 / (dim as f64).sqrt(),
                true,
                rng,
            ),
            heads,
            dim,
        }
    }

    fn split_heads<T: Scalar>(&self, g: &Graph<T>, x: Var, batch: usize, len: usize) -> Var {
        let dh = self.dim / self.heads;
        let x = g.reshape(x, &[batch, len, self.heads, dh]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, &[batch * self.heads, len, dh])
    }

    /// `x[B, lq, dim]` attends to `kv[B, lk, kv_dim]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        x: Var,
        kv: Var,
        key_valid: Option<&Tensor<T>>,
        causal: bool,
    ) -> Var {
        let xs = g.shape(x);
        let ks = g.shape(kv);
        let (batch, lq, lk) = (xs[0], xs[1], ks[1]);
        let dh = self.dim / self.heads;
        let q = self.split_heads(g, self.q.forward(g, x), batch, lq);
        let k = self.split_heads(g, self.k.forward(g, kv), batch, lk);
        let v = self.split_heads(g, self.v.forward(g, kv), batch, lk);
        let scores = g.scale(g.bmm(q, k, false, true), T::lit(1.0 / (dh as f64).sqrt()));
        let scores = match attention_mask(batch, self.heads, lq, lk, key_valid, causal) {
            Some(m) => g.add(scores, g.constant(m)),
            None => scores,
        };
        let att = g.softmax(scores);
        let out = g.bmm(att, v, false, false);
        let out = g.reshape(out, &[batch, self.heads, lq, dh]);
        let out = g.permute(out, &[0, 2, 1, 3]);
        let out = g.reshape(out, &[batch, lq, self.dim]);
        self.o.forward(g, out)
    }
}

/// Pre-norm transformer block with optional cross-attention.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub cross: Option<(LayerNorm, Attention)>,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl Block {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        cross_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        Block {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), dim),
            self_attn: Attention::new(store, &format!("{name}.self"), dim, dim, heads, rng),
            cross: cross_dim.map(|cd| {
                (
                    LayerNorm::new(store, &format!("{name}.ln_cross"), dim),
                    Attention::new(store, &format!("{name}.cross"), dim, cd, heads, rng),
                )
            }),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, 4 * dim, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        x: Var,
        self_valid: Option<&Tensor<T>>,
        causal: bool,
        context: Option<(Var, Option<&Tensor<T>>)>,
    ) -> Var {
        let h = self.ln_self.forward(g, x);
        let x = g.add(x, self.self_attn.forward(g, h, h, self_valid, causal));
        let x = match (&self.cross, context) {
            (Some((ln, attn)), Some((ctx, ctx_valid))) => {
                let h = ln.forward(g, x);
                g.add(x, attn.forward(g, h, ctx, ctx_valid, false))
            }
            _ => x,
        };
        let h = self.ln_ff.forward(g, x);
        g.add(x, self.ff.forward(g, h))
    }
}
