use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::IngestError;
use crate::chain::{CausalChain, ChainEdge, ChainNode, EdgeKind, Visibility};
use crate::encoders::Vocab;
use crate::microworld::{render, Category, SampleRecord, MANIFEST_VERSION};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Write through a temporary sibling file and rename it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| IngestError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| IngestError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), IngestError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: SampleRecord = serde_json::from_str(l).map_err(|e| IngestError::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if rec.version != MANIFEST_VERSION {
                return Err(IngestError::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: format!("manifest version {} (expected {MANIFEST_VERSION})", rec.version),
                });
            }
            Ok(rec)
        })
        .collect()
}

/// Renders both images of every record that carries states, then writes the
/// manifest and the vocabulary.
pub fn write_dataset(dir: &Path, records: &[SampleRecord]) -> Result<(), IngestError> {
    for r in records {
        for (rel, state) in [(&r.init_image, &r.init_state), (&r.answer_image, &r.answer_state)] {
            let Some(state) = state else { continue };
            let mut png = Vec::new();
            render(state)
                .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| IngestError::Image {
                    path: dir.join(rel),
                    message: e.to_string(),
                })?;
            atomic_write(&dir.join(rel), &png)?;
        }
    }
    write_manifest(&dir.join(MANIFEST_FILE), records)?;
    atomic_write(&dir.join(VOCAB_FILE), Vocab::builtin().to_text().as_bytes())
}

#[derive(Deserialize)]
struct PublishedNode {
    id: u32,
    entity: String,
    variation: String,
    visible: bool,
}

#[derive(Deserialize)]
struct PublishedEdge {
    from: u32,
    to: u32,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Deserialize)]
struct PublishedChain {
    nodes: Vec<PublishedNode>,
    edges: Vec<PublishedEdge>,
    root: u32,
}

#[derive(Deserialize)]
struct PublishedRecord {
    id: String,
    question: String,
    input: String,
    output: String,
    category: Option<String>,
    causal_chain: Option<PublishedChain>,
}

/// Loads a manifest in the published annotation layout: one JSON object per
/// line with `id`, `question`, `input`, `output`, optional `category` and an
/// optional `causal_chain` of free-text nodes (`id`, `entity`, `variation`,
/// `visible`) and edges (`from`, `to`, `type`). Only paths and text are read;
/// no media is touched.
pub fn load_published(path: &Path) -> Result<Vec<SampleRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |message: String| IngestError::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let p: PublishedRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let category: Category = match p.category.as_deref() {
            Some(c) => c.parse().map_err(err)?,
            None => Category::EntitiesVariation,
        };
        let chain = p.causal_chain.map(|c| CausalChain {
            nodes: c
                .nodes
                .into_iter()
                .map(|n| ChainNode {
                    id: n.id,
                    entity: n.entity,
                    variation: n.variation,
                    visibility: if n.visible { Visibility::Visible } else { Visibility::Invisible },
                })
                .collect(),
            edges: c
                .edges
                .into_iter()
                .map(|e| ChainEdge {
                    src: e.from,
                    dst: e.to,
                    kind: EdgeKind::from(e.kind),
                })
                .collect(),
            root: c.root,
        });
        out.push(SampleRecord {
            version: MANIFEST_VERSION,
            sample_id: p.id,
            category,
            question: p.question,
            init_image: p.input,
            answer_image: p.output,
            chain,
            seed: 0,
            condition: None,
            init_state: None,
            answer_state: None,
        });
    }
    Ok(out)
}
