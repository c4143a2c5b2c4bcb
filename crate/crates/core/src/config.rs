//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::heads::Paradigm;
use crate::models::ModelConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<&'static str> },
    #[error("bad value `{value}` for `{key}`: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paradigm: Paradigm,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub lambda_ccpc: f64,
    pub lambda_mccs: f64,
    pub seed: u64,
    pub dataset: PathBuf,
    /// Save a checkpoint every this many steps; 0 means only at the end.
    pub checkpoint_every: usize,
    pub grad_clip: f64,
    /// Keep every parameter outside the denoiser fixed.
    pub freeze_encoders: bool,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paradigm: Paradigm::Lgd,
            learning_rate: 3e-5,
            batch_size: 16,
            epochs: 20,
            max_steps: 0,
            lambda_ccpc: 0.1,
            lambda_mccs: 0.5,
            seed: 0,
            dataset: PathBuf::from("data/train"),
            checkpoint_every: 0,
            grad_clip: 1.0,
            freeze_encoders: false,
            model: ModelConfig::default(),
        }
    }
}

/// Every key with a short description, in file order.
pub const KEYS: [(&str, &str); 32] = [
    ("paradigm", "qgd, agd, lgd or lgd+"),
    ("learning_rate", "Adam step size"),
    ("batch_size", "samples per step"),
    ("epochs", "passes over the training split"),
    ("max_steps", "step limit, 0 for none"),
    ("lambda_ccpc", "weight of the contrastive chain loss"),
    ("lambda_mccs", "weight of the chain decoding loss"),
    ("seed", "seed for init, data order and noise"),
    ("dataset", "training split directory"),
    ("checkpoint_every", "checkpoint cadence in steps, 0 for end only"),
    ("grad_clip", "global gradient norm limit"),
    ("freeze_encoders", "train only the denoiser (true/false)"),
    ("d_text", "text encoder and query width"),
    ("text_layers", "text encoder blocks"),
    ("text_heads", "attention heads in the encoders"),
    ("max_len", "longest text input in tokens"),
    ("num_queries", "image query tokens"),
    ("qformer_layers", "query encoder blocks"),
    ("d_ctx", "guidance context width"),
    ("pc_hidden", "predictive-coding head hidden width"),
    ("mccs_dim", "chain decoder width"),
    ("mccs_layers", "chain decoder blocks"),
    ("mccs_heads", "chain decoder heads"),
    ("mccs_max_len", "longest decoded chain in tokens"),
    ("tau", "contrastive temperature"),
    ("negatives", "negative nodes per positive"),
    ("d0", "denoiser width at full resolution"),
    ("d1", "denoiser width at half resolution"),
    ("diffusion_heads", "denoiser attention heads"),
    ("timesteps", "diffusion steps T"),
    ("beta_start", "first noise variance"),
    ("beta_end", "last noise variance"),
];

pub fn valid_keys() -> Vec<&'static str> {
    KEYS.iter().map(|(k, _)| *k).collect()
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

impl RunConfig {
    /// Default hyperparameters with a learning rate and step budget that fit one CPU core.
    pub fn desk() -> Self {
        RunConfig {
            learning_rate: 5e-4,
            max_steps: 2000,
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let m = &mut self.model;
        match key.trim() {
            "paradigm" => self.paradigm = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "lambda_ccpc" => self.lambda_ccpc = parse(key, v)?,
            "lambda_mccs" => self.lambda_mccs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "freeze_encoders" => self.freeze_encoders = parse(key, v)?,
            "d_text" => m.d_text = parse(key, v)?,
            "text_layers" => m.text_layers = parse(key, v)?,
            "text_heads" => m.text_heads = parse(key, v)?,
            "max_len" => m.max_len = parse(key, v)?,
            "num_queries" => m.num_queries = parse(key, v)?,
            "qformer_layers" => m.qformer_layers = parse(key, v)?,
            "d_ctx" => {
                m.d_ctx = parse(key, v)?;
                m.diffusion.d_ctx = m.d_ctx;
            }
            "pc_hidden" => m.pc_hidden = parse(key, v)?,
            "mccs_dim" => m.mccs_dim = parse(key, v)?,
            "mccs_layers" => m.mccs_layers = parse(key, v)?,
            "mccs_heads" => m.mccs_heads = parse(key, v)?,
            "mccs_max_len" => m.mccs_max_len = parse(key, v)?,
            "tau" => m.ccpc.tau = parse(key, v)?,
            "negatives" => m.ccpc.negatives = parse(key, v)?,
            "d0" => m.diffusion.d0 = parse(key, v)?,
            "d1" => m.diffusion.d1 = parse(key, v)?,
            "diffusion_heads" => m.diffusion.heads = parse(key, v)?,
            "timesteps" => m.diffusion.timesteps = parse(key, v)?,
            "beta_start" => m.diffusion.beta_start = parse(key, v)?,
            "beta_end" => m.diffusion.beta_end = parse(key, v)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                    valid: valid_keys(),
                })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let d = &m.diffusion;
        Some(match key {
            "paradigm" => self.paradigm.name().to_ascii_lowercase(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "lambda_ccpc" => self.lambda_ccpc.to_string(),
            "lambda_mccs" => self.lambda_mccs.to_string(),
            "seed" => self.seed.to_string(),
            "dataset" => self.dataset.display().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "freeze_encoders" => self.freeze_encoders.to_string(),
            "d_text" => m.d_text.to_string(),
            "text_layers" => m.text_layers.to_string(),
            "text_heads" => m.text_heads.to_string(),
            "max_len" => m.max_len.to_string(),
            "num_queries" => m.num_queries.to_string(),
            "qformer_layers" => m.qformer_layers.to_string(),
            "d_ctx" => m.d_ctx.to_string(),
            "pc_hidden" => m.pc_hidden.to_string(),
            "mccs_dim" => m.mccs_dim.to_string(),
            "mccs_layers" => m.mccs_layers.to_string(),
            "mccs_heads" => m.mccs_heads.to_string(),
            "mccs_max_len" => m.mccs_max_len.to_string(),
            "tau" => m.ccpc.tau.to_string(),
            "negatives" => m.ccpc.negatives.to_string(),
            "d0" => d.d0.to_string(),
            "d1" => d.d1.to_string(),
            "diffusion_heads" => d.heads.to_string(),
            "timesteps" => d.timesteps.to_string(),
            "beta_start" => d.beta_start.to_string(),
            "beta_end" => d.beta_end.to_string(),
            _ => return None,
        })
    }

    /// Every key, one per line; `from_text(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            writeln!(s, "{k} = {}", self.get(k).unwrap()).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lambda_ccpc >= 0.0 && self.lambda_mccs >= 0.0) {
            return bad("lambda_ccpc and lambda_mccs must be nonnegative".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Loss weights actually applied: question guidance has no latent for
    /// the chain objectives to act on.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        match self.paradigm {
            Paradigm::Qgd => (0.0, 0.0),
            _ => (self.lambda_ccpc, self.lambda_mccs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!(c.learning_rate, 3e-5);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.epochs, 20);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::desk();
        c.set("paradigm", "lgd+").unwrap();
        c.set("d_ctx", "64").unwrap();
        c.set("dataset", "/tmp/x y").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(KEYS.len(), valid_keys().len());
        for (k, _) in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let e = RunConfig::from_text("lr = 0.1").unwrap_err();
        assert!(matches!(&e, ConfigError::UnknownKey { key, valid } if key == "lr" && valid.contains(&"learning_rate")));
        assert!(e.to_string().contains("learning_rate"));
        assert!(matches!(RunConfig::from_text("batch_size = many"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::from_text("batch_size"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("learning_rate = -1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_text("lambda_ccpc = -0.5"), Err(ConfigError::Invalid(_))));
        let c = RunConfig::from_text("# comment\n\nseed = 4 # trailing\n").unwrap();
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn question_guidance_drops_chain_losses() {
        let mut c = RunConfig::default();
        assert_eq!(c.effective_lambdas(), (0.1, 0.5));
        c.paradigm = Paradigm::Qgd;
        assert_eq!(c.effective_lambdas(), (0.0, 0.0));
    }
}
