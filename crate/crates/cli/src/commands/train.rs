use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use vqai_core::config::{valid_keys, RunConfig};
use vqai_core::trainer::{ema_trend, initial_checkpoint, load_examples, train as run_training, Checkpoint, LossRecord, Observer, TrainError};

use super::write_text;
use crate::error::CliError;
use crate::settings::{gather, key, unknown_key, Key, Settings};

pub const KEYS: &[Key] = &[
    key("out", "run.ckpt", "checkpoint path; intermediate ones get a .stepN suffix"),
    key("log", "", "loss history file; empty for <out>.loss.jsonl"),
];

#[derive(Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    record: &'a LossRecord,
    wall_time: f64,
}

struct Progress {
    out: PathBuf,
    started: Instant,
    wall: Vec<f64>,
    planned: u64,
}

impl Progress {
    fn intermediate(&self, step: u64) -> PathBuf {
        let stem = self.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = self.out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "ckpt".into());
        self.out.with_file_name(format!("{stem}.step{step}.{ext}"))
    }
}

impl Observer<f32> for Progress {
    fn on_step(&mut self, r: &LossRecord) {
        self.wall.push(self.started.elapsed().as_secs_f64());
        if r.step % 100 == 0 || r.step == self.planned {
            eprintln!(
                "step {}/{}: loss {:.4} (diffusion {:.4}, ccpc {:.4}, mccs {:.4})",
                r.step, self.planned, r.total, r.diffusion, r.ccpc, r.mccs
            );
        }
    }

    fn on_checkpoint(&mut self, ck: &Checkpoint<f32>) -> Result<(), TrainError> {
        let path = if ck.step >= self.planned { self.out.clone() } else { self.intermediate(ck.step) };
        ck.save(&path)?;
        Ok(())
    }
}

pub fn train(desk: bool, config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let mut cfg = if desk { RunConfig::desk() } else { RunConfig::default() };
    let mut s = Settings::new(KEYS);
    for (k, v) in gather("train", config, overrides)? {
        if s.knows(&k) {
            s.set(&k, &v)?;
        } else if valid_keys().contains(&k.as_str()) {
            cfg.set(&k, &v)?;
        } else {
            return Err(unknown_key(&k, KEYS.iter().map(|k| k.name).chain(valid_keys())));
        }
    }
    cfg.validate()?;
    let out = s.path("out");
    let log_path = match s.str("log") {
        "" => PathBuf::from(format!("{}.loss.jsonl", out.display())),
        p => PathBuf::from(p),
    };
    let init = initial_checkpoint::<f32>(&cfg)?;
    let examples = load_examples(&cfg.dataset, &init.components)?;
    if examples.is_empty() {
        return Err(CliError::data(format!("dataset {} has no samples", cfg.dataset.display())));
    }
    let planned = vqai_core::trainer::planned_steps(&cfg, examples.len());
    eprintln!(
        "training {} on {} samples from {} for {planned} steps",
        cfg.paradigm,
        examples.len(),
        cfg.dataset.display()
    );
    let mut progress = Progress {
        out: out.clone(),
        started: Instant::now(),
        wall: Vec::new(),
        planned,
    };
    let ck = run_training(&cfg, &examples, &mut progress)?;
    if ck.step == 0 {
        ck.save(&out)?;
    }
    let mut text = String::new();
    for (r, w) in ck.history.iter().zip(&progress.wall) {
        let line = LogLine { record: r, wall_time: *w };
        let _ = writeln!(text, "{}", serde_json::to_string(&line).expect("loss line serializes"));
    }
    write_text(&log_path, &text)?;
    let (first, last) = ema_trend(&ck.history, 0.05);
    println!(
        "{} steps, diffusion loss EMA {first:.4} -> {last:.4}; checkpoint {} (config {})",
        ck.step,
        out.display(),
        &ck.config_hash()[..12]
    );
    Ok(())
}
