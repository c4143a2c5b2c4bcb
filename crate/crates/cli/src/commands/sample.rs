use std::path::Path;

use vqai_core::config::RunConfig;
use vqai_core::diffusion::Sampler;
use vqai_core::eval::generate_candidates;
use vqai_core::pixels::tensor_to_image;
use vqai_core::trainer::{load_examples, Checkpoint};

use super::{ensure_dir, grid, load, write_png};
use crate::error::CliError;
use crate::settings::{key, Key, Settings};

pub const KEYS: &[Key] = &[
    key("checkpoint", "run.ckpt", "trained checkpoint"),
    key("dataset", "data/test", "split directory to draw initial images and questions from"),
    key("out", "samples", "output directory"),
    key("count", "8", "number of samples, taken in manifest order"),
    key("seed", "0", "sampler noise seed"),
    key("steps", "50", "denoising steps"),
    key("sampler", "ddim", "ddim or ddpm"),
    key("batch", "16", "samples per forward pass"),
    key("expect_config", "", "run config file whose model settings the checkpoint must match"),
    key("allow_config_mismatch", "false", "load even when the model settings differ"),
    key("allow_untrained", "false", "accept a checkpoint that was never trained"),
];

/// Loads a checkpoint with the hash and training checks the settings ask for.
pub(super) fn open_checkpoint(s: &Settings, path: &Path) -> Result<Checkpoint<f32>, CliError> {
    if !path.is_file() {
        return Err(CliError::data(format!("checkpoint {} not found", path.display())));
    }
    let expected = match s.str("expect_config") {
        "" => None,
        p => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("cannot read {p}: {e}")))?;
            Some(RunConfig::from_text(&text)?.model.hash())
        }
    };
    let ck = Checkpoint::<f32>::load(path, expected.as_deref(), s.get("allow_config_mismatch")?)?;
    ck.require_trained(s.get("allow_untrained")?)?;
    Ok(ck)
}

pub fn sample(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("sample", KEYS, config, overrides)?;
    let ck = open_checkpoint(&s, &s.path("checkpoint"))?;
    let sampler: Sampler = s.get("sampler")?;
    let seed: u64 = s.get("seed")?;
    let mut examples = load_examples(&s.path("dataset"), &ck.components)?;
    examples.truncate(s.get("count")?);
    if examples.is_empty() {
        return Err(CliError::data(format!("no samples in {}", s.path("dataset").display())));
    }
    let cands = generate_candidates(&ck.components, ck.run.paradigm, &examples, &[seed], s.get("steps")?, sampler, s.get("batch")?)?;
    let out = s.path("out");
    ensure_dir(&out)?;
    let inits: Vec<_> = examples.iter().map(|e| tensor_to_image(&e.init)).collect();
    let gts: Vec<_> = examples.iter().map(|e| tensor_to_image(&e.answer)).collect();
    let mut rows = Vec::new();
    for (i, (e, c)) in examples.iter().zip(&cands).enumerate() {
        write_png(&out.join(format!("{}_seed{seed}.png", e.id())), &c[0])?;
        println!("{}: {}", e.id(), e.record.question);
        rows.push(vec![&inits[i], &c[0], &gts[i]]);
    }
    write_png(&out.join(format!("grid_seed{seed}.png")), &grid(&rows))?;
    println!("{} images ({}) written to {}", cands.len(), ck.run.paradigm, out.display());
    Ok(())
}
