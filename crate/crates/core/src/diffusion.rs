//! Pixel-space denoising diffusion conditioned on the initial image and on a
//! guidance context.
//!
//! The denoiser is a two-level U-shaped transformer over 8x8 patches: the
//! noisy target and the initial image are concatenated on channels, cut into
//! 64 patch tokens, merged 2x2 into 16 tokens and expanded back with a skip
//! connection. Every level cross-attends to the guidance context.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vqai_tensor::nn::{init_normal, Block, LayerNorm, Linear};
use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::heads::GuidanceContext;
use crate::microworld::SIZE;
use crate::pixels::{patchify, unpatchify, PATCHES, PATCH_DIM};
use crate::rng::substream;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    BadRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("context width {actual}, denoiser expects {expected}")]
    ContextWidthMismatch { expected: usize, actual: usize },
    #[error("model has not been trained")]
    UntrainedModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `ᾱ_t` for `t` in `0..=T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Linear beta schedule over `t = 1..=steps`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::BadRange(format!("need at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::BadRange(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`.
pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>, DiffusionError> {
    if x0.shape() != eps.shape() {
        return Err(DiffusionError::ShapeMismatch(format!("x0 {:?} vs eps {:?}", x0.shape(), eps.shape())));
    }
    if t == 0 || t > schedule.steps() {
        return Err(DiffusionError::BadRange(format!("t = {t} outside 1..={}", schedule.steps())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// Batched forward process, one step index per leading item.
pub fn q_sample_batch<T: Scalar>(x0: &Tensor<T>, ts: &[usize], eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>, DiffusionError> {
    if x0.shape() != eps.shape() || x0.dim(0) != ts.len() {
        return Err(DiffusionError::ShapeMismatch(format!("x0 {:?}, eps {:?}, {} steps", x0.shape(), eps.shape(), ts.len())));
    }
    let per = x0.len() / ts.len();
    let mut out = Vec::with_capacity(x0.len());
    for (i, &t) in ts.iter().enumerate() {
        let r = i * per..(i + 1) * per;
        let x = Tensor::from_vec(&[per], x0.data()[r.clone()].to_vec());
        let e = Tensor::from_vec(&[per], eps.data()[r].to_vec());
        out.extend(q_sample(&x, t, &e, schedule)?.into_data());
    }
    Ok(Tensor::from_vec(x0.shape(), out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub d0: usize,
    pub d1: usize,
    pub heads: usize,
    pub d_ctx: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            d0: 128,
            d1: 256,
            heads: 4,
            d_ctx: 128,
            timesteps: 200,
            beta_start: 5e-4,
            beta_end: 0.1,
        }
    }
}

/// Sinusoidal embedding of step indices: `[B, dim]`.
pub fn timestep_embedding<T: Scalar>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..half {
            let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push(T::lit((t as f64 * f).sin()));
        }
        for i in 0..half {
            let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push(T::lit((t as f64 * f).cos()));
        }
        data.extend(std::iter::repeat_n(T::zero(), dim - 2 * half));
    }
    Tensor::from_vec(&[ts.len(), dim], data)
}

/// Noisy target, initial image and the implied-noise residual.
pub const IN_CHANNELS: usize = 9;

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub cfg: DiffusionConfig,
    pub patch_in: Linear,
    pub pos: ParamId,
    pub t1: Linear,
    pub t2: Linear,
    pub t_down: Linear,
    pub enc0: Block,
    pub merge: Linear,
    pub mid: Vec<Block>,
    pub split: Linear,
    pub fuse_skip: Linear,
    pub dec0: Block,
    pub ln_out: LayerNorm,
    pub out: Linear,
    pub out_skip: Linear,
    alpha_bars: Vec<f64>,
}

/// Swaps `[B, 8, 8, D]` cell tokens and `[B, 4, 4, 2, 2, D]` groups; the
/// permutation is its own inverse.
fn regroup<T: Scalar>(g: &Graph<T>, x: Var, b: usize, d: usize) -> Var {
    let x = g.reshape(x, &[b, 4, 2, 4, 2, d]);
    g.permute(x, &[0, 1, 3, 2, 4, 5])
}

impl Denoiser {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &DiffusionConfig, rng: &mut R) -> Self {
        let (d0, d1, h, c) = (cfg.d0, cfg.d1, cfg.heads, Some(cfg.d_ctx));
        let n = |s: &str| format!("{name}.{s}");
        Denoiser {
            cfg: cfg.clone(),
            patch_in: Linear::new(store, &n("patch_in"), IN_CHANNELS * PATCH_DIM / 3, d0, rng),
            pos: store.add(n("pos"), init_normal(&[PATCHES, d0], 0.1, rng)),
            t1: Linear::new(store, &n("t1"), d0, d0, rng),
            t2: Linear::new(store, &n("t2"), d0, d0, rng),
            t_down: Linear::new(store, &n("t_down"), d0, d1, rng),
            enc0: Block::new(store, &n("enc0"), d0, h, c, rng),
            merge: Linear::new(store, &n("merge"), 4 * d0, d1, rng),
            mid: (0..2).map(|i| Block::new(store, &n(&format!("mid{i}")), d1, h, c, rng)).collect(),
            split: Linear::new(store, &n("split"), d1, 4 * d0, rng),
            fuse_skip: Linear::new(store, &n("fuse_skip"), 2 * d0, d0, rng),
            dec0: Block::new(store, &n("dec0"), d0, h, c, rng),
            ln_out: LayerNorm::new(store, &n("ln_out"), d0),
            out: Linear::with_std(store, &n("out"), d0, PATCH_DIM, 0.1 / (d0 as f64).sqrt(), true, rng),
            out_skip: Linear::with_std(store, &n("out_skip"), IN_CHANNELS * PATCH_DIM / 3, PATCH_DIM, 0.1 / (PATCH_DIM as f64).sqrt(), false, rng),
            alpha_bars: make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
                .map(|s| s.alpha_bars)
                .unwrap_or_default(),
        }
    }

    fn schedule_alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Predicted noise `[B, 64, 64, 3]` for `x_t` at steps `ts`: the noise
    /// implied by the initial image minus a learned correction.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        x_t: Var,
        ts: &[usize],
        init: Var,
        ctx: &GuidanceContext<T>,
    ) -> Result<Var, DiffusionError> {
        let (xs, is) = (g.shape(x_t), g.shape(init));
        if xs != is || xs.len() != 4 || xs[1] != SIZE || xs[2] != SIZE || xs[3] != 3 {
            return Err(DiffusionError::ShapeMismatch(format!("x_t {xs:?} vs init {is:?}")));
        }
        let b = xs[0];
        if ts.len() != b || ts.iter().any(|&t| t == 0 || t > self.cfg.timesteps) {
            return Err(DiffusionError::ShapeMismatch(format!("{} step indices for batch {b}", ts.len())));
        }
        let cs = g.shape(ctx.x);
        if cs[2] != self.cfg.d_ctx {
            return Err(DiffusionError::ContextWidthMismatch {
                expected: self.cfg.d_ctx,
                actual: cs[2],
            });
        }
        if cs[0] != b {
            return Err(DiffusionError::ShapeMismatch(format!("context batch {} vs {b}", cs[0])));
        }
        let (d0, d1) = (self.cfg.d0, self.cfg.d1);
        let context = Some((ctx.x, Some(&ctx.mask)));

        // Noise implied by the initial image if nothing changed.
        let mut cx = Vec::with_capacity(b);
        let mut ci = Vec::with_capacity(b);
        let mut co = Vec::with_capacity(b);
        for &t in ts {
            let ab = self.schedule_alpha_bar(t);
            let sigma = (1.0 - ab).sqrt();
            cx.push(T::lit(1.0 / sigma));
            ci.push(T::lit(-ab.sqrt() / sigma));
            co.push(T::lit(-ab.sqrt()));
        }
        let cx = g.constant(Tensor::from_vec(&[b, 1, 1, 1], cx));
        let ci = g.constant(Tensor::from_vec(&[b, 1, 1, 1], ci));
        let co = g.constant(Tensor::from_vec(&[b, 1, 1, 1], co));
        let residual = g.add(g.mul(x_t, cx), g.mul(init, ci));

        let temb = g.constant(timestep_embedding(ts, d0));
        let temb = self.t2.forward(g, g.silu(self.t1.forward(g, temb)));
        let p = patchify(g, g.concat(&[x_t, init, residual], 3));
        let h = g.add(self.patch_in.forward(g, p), g.param(self.pos));
        let h = g.add(h, g.reshape(temb, &[b, 1, d0]));
        let h0 = self.enc0.forward(g, h, None, false, context);

        let m = g.reshape(regroup(g, h0, b, d0), &[b, PATCHES / 4, 4 * d0]);
        let mut m = self.merge.forward(g, m);
        m = g.add(m, g.reshape(self.t_down.forward(g, temb), &[b, 1, d1]));
        for blk in &self.mid {
            m = blk.forward(g, m, None, false, context);
        }

        let u = g.reshape(self.split.forward(g, m), &[b, 4, 4, 2, 2, d0]);
        let u = g.reshape(g.permute(u, &[0, 1, 3, 2, 4, 5]), &[b, PATCHES, d0]);
        let h = self.fuse_skip.forward(g, g.concat(&[u, h0], 2));
        let h = self.dec0.forward(g, h, None, false, context);

        // The learned correction is scaled by sqrt(alpha_bar) so that its
        // error in the implied clean image stays bounded at high noise.
        let out = g.add(self.out.forward(g, self.ln_out.forward(g, h)), self.out_skip.forward(g, p));
        Ok(g.add(residual, g.mul(unpatchify(g, out, 3), co)))
    }
}

/// Random step indices and unit Gaussian noise for a batch of `b` images.
pub fn draw_noise<T: Scalar, R: Rng + ?Sized>(b: usize, schedule: &NoiseSchedule, rng: &mut R) -> (Vec<usize>, Tensor<T>) {
    let ts = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps = gaussian(&[b, SIZE, SIZE, 3], rng);
    (ts, eps)
}

fn gaussian<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect())
}

/// Dimension-averaged `‖eps − eps_hat‖²` for answers `x0` and inits, both
/// `[B, 64, 64, 3]`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss<T: Scalar>(
    g: &Graph<T>,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    init: &Tensor<T>,
    ctx: &GuidanceContext<T>,
    ts: &[usize],
    eps: &Tensor<T>,
) -> Result<Var, DiffusionError> {
    let x_t = g.constant(q_sample_batch(x0, ts, eps, schedule)?);
    let pred = denoiser.forward(g, x_t, ts, g.constant(init.clone()), ctx)?;
    Ok(g.mean(g.sqr(g.sub(pred, g.constant(eps.clone())))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Ddpm,
    Ddim,
}

impl std::str::FromStr for Sampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ddpm" => Ok(Sampler::Ddpm),
            "ddim" => Ok(Sampler::Ddim),
            _ => Err(format!("unknown sampler `{s}` (expected ddpm or ddim)")),
        }
    }
}

/// `steps` decreasing step indices from `T` towards 1, evenly spaced.
pub fn sampling_steps(total: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, total);
    if steps == 1 {
        return vec![total];
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| 1 + ((total - 1) as f64 * i as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Generates one image per row of `init` (`[B, 64, 64, 3]`), starting from
/// noise drawn from each row's seed. DDIM is deterministic after the
/// initial draw; DDPM adds fresh noise from the same per-row stream.
#[allow(clippy::too_many_arguments)]
pub fn sample<T: Scalar>(
    store: &ParamStore<T>,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    init: &Tensor<T>,
    ctx_x: &Tensor<T>,
    ctx_mask: &Tensor<T>,
    seeds: &[u64],
    steps: usize,
    sampler: Sampler,
) -> Result<Tensor<T>, DiffusionError> {
    let b = init.dim(0);
    if seeds.len() != b || ctx_x.dim(0) != b {
        return Err(DiffusionError::ShapeMismatch(format!("{b} images, {} seeds, {} contexts", seeds.len(), ctx_x.dim(0))));
    }
    if steps == 0 || steps > schedule.steps() {
        return Err(DiffusionError::BadRange(format!("{steps} sampling steps with T = {}", schedule.steps())));
    }
    let per = SIZE * SIZE * 3;
    let mut rngs: Vec<_> = seeds.iter().map(|&s| substream(s, "diffusion.sample")).collect();
    let mut x: Vec<T> = Vec::with_capacity(b * per);
    for r in rngs.iter_mut() {
        x.extend(gaussian::<T, _>(&[per], r).into_data());
    }
    let ts = sampling_steps(schedule.steps(), steps);
    let eta = match sampler {
        Sampler::Ddim => 0.0,
        Sampler::Ddpm => 1.0,
    };
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let g = Graph::inference(store);
        let ctx = GuidanceContext {
            x: g.constant(ctx_x.clone()),
            mask: ctx_mask.clone(),
        };
        let xt = g.constant(Tensor::from_vec(init.shape(), x.clone()));
        let eps = g.value(denoiser.forward(&g, xt, &vec![t; b], g.constant(init.clone()), &ctx)?);
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).max(0.0).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        for (row, r) in rngs.iter_mut().enumerate() {
            for j in row * per..(row + 1) * per {
                let (xv, ev) = (x[j].as_f64(), eps.data()[j].as_f64());
                let x0 = ((xv - (1.0 - ab).sqrt() * ev) / ab.sqrt()).clamp(-1.0, 1.0);
                let mut next = ab_prev.sqrt() * x0 + dir * ev;
                if sigma > 0.0 && t_prev > 0 {
                    next += sigma * rng_normal(r);
                }
                x[j] = T::lit(next);
            }
        }
    }
    Ok(Tensor::from_vec(init.shape(), x.into_iter().map(|v| v.max(-T::one()).min(T::one())).collect()))
}

fn rng_normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}
