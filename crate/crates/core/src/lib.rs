//! Visual question answering with image on a procedural causal microworld.
//!
//! The crate covers the whole pipeline: scene generation and the rule
//! engine that annotates causal chains, text and image encoders, the
//! guidance heads, a small pixel-space diffusion model, training with
//! checkpoints, and the evaluation metrics.

pub mod chain;
pub mod config;
pub mod diffusion;
pub mod encoders;
pub mod eval;
pub mod heads;
pub mod ingest;
pub mod microworld;
pub mod models;
pub mod pixels;
pub mod rng;
pub mod trainer;

pub use vqai_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor};

pub type Components32 = models::Components<f32>;
pub type Components64 = models::Components<f64>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type Checkpoint64 = trainer::Checkpoint<f64>;
pub type Example32 = trainer::Example<f32>;
pub type Example64 = trainer::Example<f64>;
pub type Embedder32 = eval::Embedder<f32>;
pub type Embedder64 = eval::Embedder<f64>;
