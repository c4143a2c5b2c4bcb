use std::fmt::Write as _;
use std::path::Path;

use vqai_core::ingest::{load_frames, segment_frames, split, stats, write_dataset, SplitSpec};
use vqai_core::microworld::{make_records, DatasetConfig};

use super::{load, write_text};
use crate::error::CliError;
use crate::settings::{key, Key};

pub const GEN_KEYS: &[Key] = &[
    key("out", "data", "output directory for the train, val and test splits"),
    key("n", "2000", "number of samples"),
    key("seed", "0", "dataset seed"),
    key(
        "category_mix",
        "0.05,0.22,0.16,0.40,0.17",
        "shares of SV, ME, FE, EV, EMV samples, summing to 1",
    ),
    key("chain_fraction", "0.2174", "fraction of samples with causal chain annotations"),
    key("train", "", "training split size; empty for the remainder"),
    key("val", "", "validation split size; empty for n * 1000 / 17524"),
    key("test", "", "test split size; empty for n * 1000 / 17524"),
    key("chains_in_train", "true", "keep every chain-annotated sample in the training split"),
];

pub const SEGMENT_KEYS: &[Key] = &[
    key("frames", "", "directory of frames, ordered by file name"),
    key("pixel_thresh", "12", "cut threshold on the mean absolute difference (0-255)"),
    key("min_len", "5", "shortest segment in frames"),
    key("out", "segments.jsonl", "output file, one segment per line"),
];

fn mix(v: &str) -> Result<[f64; 5], CliError> {
    let parts: Result<Vec<f64>, _> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let bad = || CliError::usage(format!("category_mix must be five comma-separated shares, got `{v}`"));
    let parts = parts.map_err(|_| bad())?;
    parts.try_into().map_err(|_| bad())
}

fn count(s: &crate::settings::Settings, key: &str) -> Result<Option<usize>, CliError> {
    match s.str(key) {
        "" => Ok(None),
        _ => s.get(key).map(Some),
    }
}

pub fn gen_data(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("gen-data", GEN_KEYS, config, overrides)?;
    let cfg = DatasetConfig {
        n: s.get("n")?,
        seed: s.get("seed")?,
        mix: mix(s.str("category_mix"))?,
        chain_fraction: s.get("chain_fraction")?,
    };
    let held = ((cfg.n as f64) * 1000.0 / 17524.0).round() as usize;
    let val = count(&s, "val")?.unwrap_or(held);
    let test = count(&s, "test")?.unwrap_or(held);
    let train = match count(&s, "train")? {
        Some(t) => t,
        None => cfg
            .n
            .checked_sub(val + test)
            .ok_or_else(|| CliError::usage(format!("val + test ({}) exceed n ({})", val + test, cfg.n)))?,
    };
    let records = make_records(&cfg)?;
    let spec = SplitSpec {
        train,
        val,
        test,
        seed: cfg.seed,
        chains_in_train: s.get("chains_in_train")?,
    };
    let (tr, va, te) = split(&records, &spec)?;
    let out = s.path("out");
    for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
        write_dataset(&out.join(name), part)?;
    }
    println!("{}", stats(&records).render());
    println!("splits: train {} / val {} / test {} in {}", tr.len(), va.len(), te.len(), out.display());
    Ok(())
}

pub fn segment(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("segment", SEGMENT_KEYS, config, overrides)?;
    let dir = s.path("frames");
    if s.str("frames").is_empty() {
        return Err(CliError::usage("`frames` must be set"));
    }
    if !dir.is_dir() {
        return Err(CliError::data(format!("frame directory {} not found", dir.display())));
    }
    let frames = load_frames(&dir)?;
    let segs = segment_frames(&frames, s.get("pixel_thresh")?, s.get("min_len")?)?;
    let mut text = String::new();
    for seg in &segs {
        let _ = writeln!(text, "{}", serde_json::to_string(seg).expect("segment serializes"));
    }
    write_text(&s.path("out"), &text)?;
    println!("{} frames -> {} segments written to {}", frames.len(), segs.len(), s.path("out").display());
    Ok(())
}
