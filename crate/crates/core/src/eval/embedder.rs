//! Frozen image embedder used by the similarity metrics and FID.
//!
//! It is trained once on attribute classification of clean microworld
//! renders (scenery, brightness, per-cell occupant, character emotion and
//! pose, lamp pose) and never sees generator outputs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqai_tensor::nn::Linear;
use vqai_tensor::optim::Adam;
use vqai_tensor::{Graph, ParamStore, Scalar, Tensor, Var};

use super::EvalError;
use crate::ingest::atomic_write;
use crate::microworld::{random_state, render, Image, Kind, Pose, SceneState, GRID};
use crate::pixels::{image_to_tensor, patchify, stack, PATCHES, PATCH_DIM};
use crate::rng::substream;

/// Width of embeddings and of the penultimate features.
pub const EMBED_DIM: usize = 512;
const PATCH_HIDDEN: usize = 48;
const MAGIC: &[u8; 8] = b"VQAIEMBD";

// (classes, slots) per attribute group.
const GROUPS: [(usize, usize); 6] = [(5, 1), (4, 1), (8, GRID * GRID), (6, 3), (5, 3), (3, 1)];
const CHARACTERS: [Kind; 3] = [Kind::Cat, Kind::Mouse, Kind::Dog];

fn logit_width() -> usize {
    GROUPS.iter().map(|(c, s)| c * s).sum()
}

/// Class labels of every attribute slot, group by group.
pub fn attributes(state: &SceneState) -> Vec<usize> {
    let mut out = vec![state.scenery.index(), state.brightness.level() as usize - 1];
    for i in 0..GRID * GRID {
        let cell = crate::microworld::Cell::new((i / GRID) as u8, (i % GRID) as u8);
        out.push(state.occupant(cell).map_or(0, |e| e.kind.index() + 1));
    }
    for k in CHARACTERS {
        out.push(state.get(k).map_or(0, |e| e.emotion.index() + 1));
    }
    for k in CHARACTERS {
        out.push(state.get(k).map_or(0, |e| e.pose.index() + 1));
    }
    out.push(match state.get(Kind::Lamp) {
        None => 0,
        Some(e) if e.pose == Pose::Fall => 2,
        Some(_) => 1,
    });
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Upper bound of the Gaussian pixel noise added to half of each batch.
    pub noise: f64,
    pub holdout: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            seed: 0,
            steps: 1500,
            batch: 32,
            lr: 1e-3,
            noise: 0.15,
            holdout: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedder<T> {
    pub store: ParamStore<T>,
    patch: Linear,
    hidden: Linear,
    proj: Linear,
    heads: Linear,
    pub cfg: EmbedderConfig,
    /// Mean held-out accuracy over the attribute groups.
    pub probe_accuracy: f64,
    pub id: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    cfg: EmbedderConfig,
    scalar: String,
    probe_accuracy: f64,
    params: Vec<(String, Vec<usize>)>,
}

fn batch<T: Scalar>(images: &[&Image]) -> Tensor<T> {
    let ts: Vec<Tensor<T>> = images.iter().map(|i| image_to_tensor(i).expect("canvas-sized image")).collect();
    stack(&ts.iter().collect::<Vec<_>>())
}

impl<T: Scalar> Embedder<T> {
    fn build(cfg: &EmbedderConfig) -> Self {
        let mut rng = substream(cfg.seed, "eval.embedder.init");
        let mut store = ParamStore::new();
        let patch = Linear::new(&mut store, "embed.patch", PATCH_DIM, PATCH_HIDDEN, &mut rng);
        let hidden = Linear::new(&mut store, "embed.hidden", PATCHES * PATCH_HIDDEN, EMBED_DIM, &mut rng);
        let proj = Linear::new(&mut store, "embed.proj", EMBED_DIM, EMBED_DIM, &mut rng);
        let heads = Linear::new(&mut store, "embed.heads", EMBED_DIM, logit_width(), &mut rng);
        Embedder {
            store,
            patch,
            hidden,
            proj,
            heads,
            cfg: cfg.clone(),
            probe_accuracy: 0.0,
            id: String::new(),
        }
    }

    // (penultimate features, raw embedding) for a `[B, 64, 64, 3]` batch.
    fn forward(&self, g: &Graph<T>, x: Var) -> (Var, Var) {
        let b = g.shape(x)[0];
        let h = g.gelu(self.patch.forward(g, patchify(g, x)));
        let h = g.reshape(h, &[b, PATCHES * PATCH_HIDDEN]);
        let feats = g.gelu(self.hidden.forward(g, h));
        (feats, self.proj.forward(g, feats))
    }

    fn logits(&self, g: &Graph<T>, x: Var) -> Var {
        let (_, e) = self.forward(g, x);
        self.heads.forward(g, e)
    }

    fn group_loss(&self, g: &Graph<T>, logits: Var, labels: &[Vec<usize>]) -> Var {
        let b = labels.len();
        let (mut off, mut slot) = (0, 0);
        let mut total = None;
        for &(classes, slots) in &GROUPS {
            let part = g.reshape(g.narrow(logits, 1, off, classes * slots), &[b * slots, classes]);
            let targets: Vec<usize> = labels.iter().flat_map(|l| l[slot..slot + slots].iter().copied()).collect();
            let ce = g.cross_entropy(part, &targets);
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce),
            });
            off += classes * slots;
            slot += slots;
        }
        total.unwrap()
    }

    /// Trains a fresh embedder on random states.
    pub fn train(cfg: &EmbedderConfig) -> Self {
        let mut emb = Self::build(cfg);
        let mut adam = Adam::new(&emb.store, cfg.lr);
        let mut states = substream(cfg.seed, "eval.embedder.states");
        let mut noise_rng = substream(cfg.seed, "eval.embedder.noise");
        for step in 0..cfg.steps {
            let batch_states: Vec<SceneState> = (0..cfg.batch).map(|_| random_state(&mut states)).collect();
            let images: Vec<Image> = batch_states.iter().map(render).collect();
            let mut x = batch::<T>(&images.iter().collect::<Vec<_>>());
            let per = x.len() / cfg.batch;
            for i in (0..cfg.batch).step_by(2) {
                let sigma: f64 = noise_rng.random_range(0.0..cfg.noise.max(f64::MIN_POSITIVE));
                let normal = Normal::new(0.0, sigma).unwrap();
                for v in &mut x.data_mut()[i * per..(i + 1) * per] {
                    *v = T::lit(v.as_f64() + normal.sample(&mut noise_rng));
                }
            }
            let labels: Vec<Vec<usize>> = batch_states.iter().map(attributes).collect();
            let g = Graph::new(&emb.store);
            let xv = g.constant(x);
            let loss = emb.group_loss(&g, emb.logits(&g, xv), &labels);
            if step % 250 == 0 {
                log::debug!("embedder step {step}: loss {:.4}", g.item(loss).as_f64());
            }
            let grads = g.backward(loss).into_params();
            adam.update(&mut emb.store, &grads);
        }
        let mut hold = substream(cfg.seed, "eval.embedder.holdout");
        let held: Vec<SceneState> = (0..cfg.holdout).map(|_| random_state(&mut hold)).collect();
        emb.probe_accuracy = emb.probe(&held);
        emb.id = emb.weights_id();
        emb
    }

    fn weights_id(&self) -> String {
        let mut h = Sha256::new();
        for e in self.store.entries() {
            let mut buf = Vec::new();
            for &v in e.value.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        format!("embedder-{}", &hex::encode(h.finalize())[..12])
    }

    /// Mean over attribute groups of the head accuracy on clean renders.
    pub fn probe(&self, states: &[SceneState]) -> f64 {
        let mut hits = vec![0usize; GROUPS.len()];
        let mut totals = vec![0usize; GROUPS.len()];
        for chunk in states.chunks(64) {
            let images: Vec<Image> = chunk.iter().map(render).collect();
            let g = Graph::inference(&self.store);
            let xv = g.constant(batch::<T>(&images.iter().collect::<Vec<_>>()));
            let logits = g.value(self.logits(&g, xv)).to_f64_vec();
            let w = logit_width();
            for (i, s) in chunk.iter().enumerate() {
                let labels = attributes(s);
                let row = &logits[i * w..(i + 1) * w];
                let (mut off, mut slot) = (0, 0);
                for (gi, &(classes, slots)) in GROUPS.iter().enumerate() {
                    for j in 0..slots {
                        let part = &row[off + j * classes..off + (j + 1) * classes];
                        let arg = (0..classes).max_by(|&a, &b| part[a].total_cmp(&part[b])).unwrap();
                        hits[gi] += (arg == labels[slot + j]) as usize;
                        totals[gi] += 1;
                    }
                    off += classes * slots;
                    slot += slots;
                }
            }
        }
        hits.iter().zip(&totals).map(|(&h, &t)| h as f64 / t.max(1) as f64).sum::<f64>() / GROUPS.len() as f64
    }

    /// Unit-norm embeddings and penultimate features of each image.
    pub fn embed_with_features(&self, images: &[&Image]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (mut embs, mut feats) = (Vec::with_capacity(images.len()), Vec::with_capacity(images.len()));
        for chunk in images.chunks(64) {
            let g = Graph::inference(&self.store);
            let xv = g.constant(batch::<T>(chunk));
            let (f, e) = self.forward(&g, xv);
            let (f, e) = (g.value(f).to_f64_vec(), g.value(e).to_f64_vec());
            for i in 0..chunk.len() {
                let row = &e[i * EMBED_DIM..(i + 1) * EMBED_DIM];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                embs.push(row.iter().map(|v| v / norm).collect());
                feats.push(f[i * EMBED_DIM..(i + 1) * EMBED_DIM].to_vec());
            }
        }
        (embs, feats)
    }

    pub fn embed_batch(&self, images: &[&Image]) -> Vec<Vec<f64>> {
        self.embed_with_features(images).0
    }

    pub fn embed(&self, image: &Image) -> Vec<f64> {
        self.embed_batch(&[image]).remove(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            cfg: self.cfg.clone(),
            scalar: T::NAME.to_string(),
            probe_accuracy: self.probe_accuracy,
            params: self.store.entries().iter().map(|e| (e.name.clone(), e.value.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.store.entries() {
            for &v in e.value.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::CorruptEmbedder(m.to_string());
        if bytes.len() < 8 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not an embedder file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let json = body.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let width = match header.scalar.as_str() {
            "f32" => 4,
            "f64" => 8,
            _ => return Err(bad("unknown scalar type")),
        };
        let mut emb = Self::build(&header.cfg);
        let mut payload = &body[16 + hlen..];
        let ids: Vec<_> = emb.store.ids().collect();
        if ids.len() != header.params.len() {
            return Err(bad("parameter count"));
        }
        for (id, (name, shape)) in ids.into_iter().zip(&header.params) {
            if emb.store.name(id) != name || emb.store.value(id).shape() != shape.as_slice() {
                return Err(bad("parameter layout"));
            }
            let n: usize = shape.iter().product();
            if payload.len() < n * width {
                return Err(bad("truncated payload"));
            }
            let (head, rest) = payload.split_at(n * width);
            payload = rest;
            let data = head
                .chunks_exact(width)
                .map(|b| if width == 4 { T::lit(f32::read_le(b) as f64) } else { T::lit(f64::read_le(b)) })
                .collect();
            *emb.store.value_mut(id) = Tensor::from_vec(shape, data);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes"));
        }
        emb.probe_accuracy = header.probe_accuracy;
        emb.id = emb.weights_id();
        Ok(emb)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        atomic_write(path, &self.to_bytes()).map_err(EvalError::Ingest)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        if !path.is_file() {
            return Err(EvalError::EmbedderMissing(path.into()));
        }
        let bytes = fs::read(path).map_err(|e| EvalError::Ingest(crate::ingest::IngestError::io(path, e)))?;
        Self::from_bytes(&bytes)
    }

    /// Loads the embedder at `path`, training and saving it first when the
    /// file does not exist yet.
    pub fn load_or_train(path: &Path, cfg: &EmbedderConfig) -> Result<Self, EvalError> {
        match Self::load(path) {
            Err(EvalError::EmbedderMissing(_)) => {
                log::info!("training evaluator embedder ({} steps)", cfg.steps);
                let emb = Self::train(cfg);
                emb.save(path)?;
                Ok(emb)
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::{Brightness, Entity, Scenery};

    fn quick() -> EmbedderConfig {
        EmbedderConfig {
            steps: 3,
            batch: 4,
            holdout: 8,
            ..EmbedderConfig::default()
        }
    }

    #[test]
    fn attribute_layout() {
        let mut s = SceneState::empty(Scenery::Snow, Brightness::from_level(2));
        s.entities.push(Entity::new(Kind::Mouse, 7, 3));
        let a = attributes(&s);
        assert_eq!(a.len(), GROUPS.iter().map(|g| g.1).sum::<usize>());
        assert_eq!(a[0], Scenery::Snow.index());
        assert_eq!(a[1], 1);
        assert_eq!(a[2 + 7 * GRID + 3], Kind::Mouse.index() + 1);
        assert_eq!(a[2 + 64 + 1], 1);
        assert_eq!(*a.last().unwrap(), 0);
    }

    #[test]
    fn unit_norm_deterministic_and_round_trips() {
        let emb = Embedder::<f32>::train(&quick());
        let mut s = SceneState::empty(Scenery::Day, Brightness::from_level(3));
        s.entities.push(Entity::new(Kind::Cat, 6, 2));
        let (a, b) = (render(&s), render(&s));
        let ea = emb.embed(&a);
        assert_eq!(ea.len(), EMBED_DIM);
        assert!((ea.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(ea, emb.embed(&b));
        let back = Embedder::<f32>::from_bytes(&emb.to_bytes()).unwrap();
        assert_eq!(back.id, emb.id);
        assert_eq!(back.embed(&a), ea);
        let mut bytes = emb.to_bytes();
        bytes[40] ^= 1;
        assert!(matches!(Embedder::<f32>::from_bytes(&bytes), Err(EvalError::CorruptEmbedder(_))));
        assert!(matches!(Embedder::<f32>::load(Path::new("/nonexistent/embedder.bin")), Err(EvalError::EmbedderMissing(_))));
    }
}
