mod data;
mod evaluate;
mod rate;
mod report;
mod sample;
mod train;

use std::path::{Path, PathBuf};

use vqai_core::ingest::atomic_write;
use vqai_core::microworld::Image;

use crate::error::CliError;
use crate::settings::{describe, gather, schema_rows, unknown_key, Key, Settings};

pub use data::{gen_data, segment};
pub use evaluate::evaluate;
pub use rate::rate;
pub use report::report;
pub use sample::sample;
pub use train::train;

/// `--help` epilogue of every subcommand.
pub fn help_texts() -> Vec<(&'static str, String)> {
    let run_keys: Vec<(&str, &str, &str)> = vqai_core::config::KEYS.iter().map(|&(k, h)| (k, "", h)).collect();
    vec![
        ("gen-data", describe(&[("Keys", &schema_rows(data::GEN_KEYS))])),
        ("segment", describe(&[("Keys", &schema_rows(data::SEGMENT_KEYS))])),
        (
            "train",
            describe(&[("Output keys", &schema_rows(train::KEYS)), ("Run keys", &run_keys)]),
        ),
        ("sample", describe(&[("Keys", &schema_rows(sample::KEYS))])),
        ("evaluate", describe(&[("Keys", &schema_rows(evaluate::KEYS))])),
        ("rate", describe(&[("Keys", &schema_rows(rate::KEYS))])),
        ("report", describe(&[("Keys", &schema_rows(report::KEYS))])),
    ]
}

/// Settings of a command with no extra key families.
fn load(command: &str, schema: &'static [Key], config: Option<&Path>, overrides: &[String]) -> Result<Settings, CliError> {
    let mut s = Settings::new(schema);
    for (k, v) in gather(command, config, overrides)? {
        if !s.knows(&k) {
            return Err(unknown_key(&k, schema.iter().map(|k| k.name)));
        }
        s.set(&k, &v)?;
    }
    Ok(s)
}

fn write_png(path: &Path, img: &Image) -> Result<(), CliError> {
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| CliError::runtime(format!("encoding {}: {e}", path.display())))?;
    atomic_write(path, &png).map_err(CliError::from)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    atomic_write(path, text.as_bytes()).map_err(CliError::from)
}

/// Images laid out in rows with a 2-pixel white gutter.
fn grid(rows: &[Vec<&Image>]) -> Image {
    let side = vqai_core::microworld::SIZE as u32;
    let gap = 2;
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let (w, h) = (cols * (side + gap) + gap, rows.len() as u32 * (side + gap) + gap);
    let mut out = Image::from_pixel(w.max(1), h.max(1), image::Rgb([255, 255, 255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            image::imageops::replace(&mut out, *img, (gap + c as u32 * (side + gap)) as i64, (gap + r as u32 * (side + gap)) as i64);
        }
    }
    out
}

/// File-system friendly form of a method name.
fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '+' || c == '-' { c } else { '_' }).collect()
}

fn ensure_dir(p: &PathBuf) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::data(format!("cannot create {}: {e}", p.display())))
}
