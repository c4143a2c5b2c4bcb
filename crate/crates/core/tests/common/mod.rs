#![allow(dead_code)]

use vqai_core::config::RunConfig;
use vqai_core::diffusion::DiffusionConfig;
use vqai_core::heads::Paradigm;
use vqai_core::microworld::{make_records, DatasetConfig};
use vqai_core::models::{Components, ModelConfig};
use vqai_core::trainer::Example;
use vqai_core::Scalar;

pub fn tiny_model() -> ModelConfig {
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

pub fn tiny_run(paradigm: Paradigm) -> RunConfig {
    RunConfig {
        paradigm,
        batch_size: 4,
        epochs: 1,
        learning_rate: 1e-3,
        model: tiny_model(),
        ..RunConfig::default()
    }
}

pub fn examples<T: Scalar>(n: usize, chain_fraction: f64, seed: u64, comps: &Components<T>) -> Vec<Example<T>> {
    make_records(&DatasetConfig {
        n,
        seed,
        chain_fraction,
        ..DatasetConfig::default()
    })
    .unwrap()
    .into_iter()
    .map(|r| Example::from_record(r, comps).unwrap())
    .collect()
}
