//! Trains several guidance paradigms on the same desk-scale budget and
//! scores them on a held-out split.
//!
//! Usage: paradigm_trend SEED OUT_DIR VARIANT... where a variant is a
//! paradigm name, optionally followed by `:key=value,key=value` overrides.

use std::path::PathBuf;
use std::time::Instant;

use vqai_core::config::RunConfig;
use vqai_core::diffusion::Sampler;
use vqai_core::eval::{generate_candidates, score_method, threshold_grid, EmbedderConfig, EvalSample, GRID_POINTS};
use vqai_core::ingest::{split, SplitSpec};
use vqai_core::microworld::{make_records, DatasetConfig};
use vqai_core::trainer::{initial_checkpoint, train, Checkpoint, Example, Silent};
use vqai_core::Embedder32;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args[1].parse().unwrap();
    let out = PathBuf::from(&args[2]);
    std::fs::create_dir_all(&out).unwrap();
    let test_n: usize = std::env::var("TEST_N").map(|v| v.parse().unwrap()).unwrap_or(200);
    let steps: usize = std::env::var("SAMPLE_STEPS").map(|v| v.parse().unwrap()).unwrap_or(50);
    let records = make_records(&DatasetConfig { n: 2000 + test_n, seed, ..DatasetConfig::default() }).unwrap();
    let (tr, _, te) = split(&records, &SplitSpec { train: 2000, val: 0, test: test_n, seed, chains_in_train: true }).unwrap();
    let emb = Embedder32::load_or_train(&out.join("embedder.bin"), &EmbedderConfig::default()).unwrap();
    for variant in &args[3..] {
        let (name, overrides) = variant.split_once(':').unwrap_or((variant, ""));
        let mut cfg = RunConfig::desk();
        cfg.seed = seed;
        cfg.set("paradigm", name).unwrap();
        for kv in overrides.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').unwrap();
            cfg.set(k, v).unwrap();
        }
        let path = out.join(format!("{}_{seed}.ckpt", variant.replace([':', ',', '='], "_")));
        let t = Instant::now();
        let ck = match Checkpoint::<f32>::load(&path, None, false) {
            Ok(c) => c,
            Err(_) => {
                let init = initial_checkpoint::<f32>(&cfg).unwrap();
                let ex: Vec<Example<f32>> = tr.iter().cloned().map(|r| Example::from_record(r, &init.components).unwrap()).collect();
                let c = train(&cfg, &ex, &mut Silent).unwrap();
                c.save(&path).unwrap();
                c
            }
        };
        let train_s = t.elapsed().as_secs_f64();
        let last: Vec<_> = ck.history.iter().rev().take(100).collect();
        let ld = last.iter().map(|r| r.diffusion).sum::<f64>() / last.len().max(1) as f64;
        let test: Vec<Example<f32>> = te.iter().cloned().map(|r| Example::from_record(r, &ck.components).unwrap()).collect();
        let t = Instant::now();
        let cands = generate_candidates(&ck.components, ck.run.paradigm, &test, &[0], steps, Sampler::Ddim, 16).unwrap();
        let samples: Vec<EvalSample> = test.iter().zip(cands).map(|(e, c)| EvalSample::from_example(e, c).unwrap()).collect();
        let rep = score_method(&emb, variant, &samples, &threshold_grid(GRID_POINTS)).unwrap();
        let r = &rep.categories["TT"];
        println!(
            "{variant} seed {seed}: sim_avg {:.4} state {:.4} init_sim {:.4} fid {:.2} last-diff {:.4} train {:.0}s eval {:.0}s",
            r.sim_avg, r.state_match_rate, r.init_similarity, r.fid.unwrap_or(f64::NAN), ld, train_s, t.elapsed().as_secs_f64()
        );
    }
}
