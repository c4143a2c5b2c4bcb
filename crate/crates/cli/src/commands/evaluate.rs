use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vqai_core::diffusion::Sampler;
use vqai_core::eval::{
    generate_candidates, read_judgments, render_method_table, render_report, score_method,
    threshold_grid, EmbedderConfig, EvalReport, EvalSample, GRID_POINTS,
};
use vqai_core::microworld::Category;
use vqai_core::trainer::load_examples;
use vqai_core::Embedder32;

use super::sample::open_checkpoint;
use super::{ensure_dir, grid, load, slug, write_png, write_text};
use crate::error::CliError;
use crate::settings::{key, Key};

pub const KEYS: &[Key] = &[
    key("checkpoints", "", "comma-separated [NAME=]PATH list; NAME defaults to the paradigm"),
    key("dataset", "data/test", "test split directory"),
    key("out", "eval", "output directory"),
    key("k", "9", "candidates per sample, seeds 0..k-1"),
    key("steps", "50", "denoising steps"),
    key("sampler", "ddim", "ddim or ddpm"),
    key("limit", "0", "evaluate only the first N samples, 0 for all"),
    key("batch", "16", "samples per forward pass"),
    key("embedder", "embedder.bin", "evaluator embedder file, trained and saved when missing"),
    key("contact_rows", "16", "samples shown on each contact sheet"),
    key("expect_config", "", "run config file whose model settings every checkpoint must match"),
    key("allow_config_mismatch", "false", "load even when the model settings differ"),
    key("allow_untrained", "false", "accept checkpoints that were never trained"),
];

pub const INDEX_FILE: &str = "index.json";
pub const REPORT_JSON: &str = "report.json";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexSample {
    pub id: String,
    pub category: Category,
    pub question: String,
    pub init: String,
    pub ground_truth: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexMethod {
    pub name: String,
    pub dir: String,
}

/// What `rate` and `report` need from an evaluation directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalIndex {
    pub k: usize,
    pub methods: Vec<IndexMethod>,
    pub samples: Vec<IndexSample>,
}

impl EvalIndex {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }

    pub fn categories(&self) -> BTreeMap<String, Category> {
        self.samples.iter().map(|s| (s.id.clone(), s.category)).collect()
    }

    pub fn candidate(&self, method: &IndexMethod, sample: &str, k: usize) -> String {
        format!("{}/{sample}_{k}.png", method.dir)
    }
}

fn parse_checkpoints(v: &str) -> Result<Vec<(Option<String>, PathBuf)>, CliError> {
    if v.trim().is_empty() {
        return Err(CliError::usage("`checkpoints` must list at least one checkpoint"));
    }
    Ok(v.split(',')
        .map(|item| match item.split_once('=') {
            Some((n, p)) => (Some(n.trim().to_string()), PathBuf::from(p.trim())),
            None => (None, PathBuf::from(item.trim())),
        })
        .collect())
}

pub fn evaluate(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("evaluate", KEYS, config, overrides)?;
    let list = parse_checkpoints(s.str("checkpoints"))?;
    let k: usize = s.get("k")?;
    if k == 0 {
        return Err(CliError::usage("`k` must be at least 1"));
    }
    let (steps, batch, limit): (usize, usize, usize) = (s.get("steps")?, s.get("batch")?, s.get("limit")?);
    let sampler: Sampler = s.get("sampler")?;
    let out = s.path("out");
    ensure_dir(&out.join("inputs"))?;
    let seeds: Vec<u64> = (0..k as u64).collect();
    let grid_pts = threshold_grid(GRID_POINTS);

    let mut checkpoints = Vec::new();
    for (name, path) in &list {
        let ck = open_checkpoint(&s, path)?;
        let name = name.clone().unwrap_or_else(|| ck.run.paradigm.name().to_string());
        checkpoints.push((name, path.clone(), ck));
    }
    let mut examples = load_examples(&s.path("dataset"), &checkpoints[0].2.components)?;
    if limit > 0 {
        examples.truncate(limit);
    }
    if examples.is_empty() {
        return Err(CliError::data(format!("no samples in {}", s.path("dataset").display())));
    }
    let embedder = Embedder32::load_or_train(&s.path("embedder"), &EmbedderConfig::default())?;
    eprintln!("evaluator {} (probe accuracy {:.3})", embedder.id, embedder.probe_accuracy);

    let mut index = EvalIndex {
        k,
        methods: Vec::new(),
        samples: Vec::new(),
    };
    for e in &examples {
        let sample = EvalSample::from_example(e, Vec::new())
            .ok_or_else(|| CliError::data(format!("sample {} has no scene states", e.id())))?;
        let (init, gt) = (format!("inputs/{}_init.png", e.id()), format!("inputs/{}_gt.png", e.id()));
        write_png(&out.join(&init), &sample.init_image)?;
        write_png(&out.join(&gt), &sample.gt_image)?;
        index.samples.push(IndexSample {
            id: e.id().to_string(),
            category: e.category(),
            question: e.record.question.clone(),
            init,
            ground_truth: gt,
        });
    }

    let mut methods = Vec::new();
    let rows: usize = s.get("contact_rows")?;
    for (name, path, ck) in &checkpoints {
        eprintln!("{name}: generating {k} candidates for {} samples from {}", examples.len(), path.display());
        let cands = generate_candidates(&ck.components, ck.run.paradigm, &examples, &seeds, steps, sampler, batch)?;
        let dir = slug(name);
        ensure_dir(&out.join(&dir))?;
        let mut samples = Vec::with_capacity(examples.len());
        for (e, c) in examples.iter().zip(cands) {
            for (j, img) in c.iter().enumerate() {
                write_png(&out.join(format!("{dir}/{}_{j}.png", e.id())), img)?;
            }
            samples.push(EvalSample::from_example(e, c).expect("states checked above"));
        }
        let sheet: Vec<Vec<_>> = samples
            .iter()
            .take(rows)
            .map(|smp| std::iter::once(&smp.init_image).chain([&smp.gt_image]).chain(&smp.candidates).collect())
            .collect();
        write_png(&out.join(format!("{dir}/contact_sheet.png")), &grid(&sheet))?;
        methods.push(score_method(&embedder, name, &samples, &grid_pts)?);
        index.methods.push(IndexMethod { name: name.clone(), dir });
    }

    let mut cfg = BTreeMap::new();
    cfg.insert("dataset".to_string(), s.str("dataset").to_string());
    cfg.insert("steps".to_string(), steps.to_string());
    cfg.insert("sampler".to_string(), s.str("sampler").to_string());
    cfg.insert("seeds".to_string(), format!("0..{}", k - 1));
    cfg.insert("threshold_grid".to_string(), format!("{GRID_POINTS} evenly spaced points in [0, 1]"));
    cfg.insert(
        "checkpoints".to_string(),
        checkpoints.iter().map(|(n, p, c)| format!("{n}={} (config {})", p.display(), &c.config_hash()[..12])).collect::<Vec<_>>().join(", "),
    );
    let mut report = EvalReport {
        k,
        grid_points: GRID_POINTS,
        embedder_id: embedder.id.clone(),
        config: cfg,
        methods,
    };
    let judgments = read_judgments(&out.join(JUDGMENTS_FILE))?;
    report.attach_human(&judgments, &index.categories())?;
    write_text(&out.join(INDEX_FILE), &serde_json::to_string_pretty(&index).expect("index serializes"))?;
    write_text(&out.join(REPORT_JSON), &report.to_json())?;
    write_text(&out.join("report.txt"), &render_report(&report))?;
    print!("{}", render_method_table(&report));
    println!("results in {}", out.display());
    Ok(())
}
