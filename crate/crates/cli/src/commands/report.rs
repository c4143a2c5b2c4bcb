use std::path::{Path, PathBuf};

use vqai_core::eval::{read_judgments, render_report, EvalReport};

use super::evaluate::{EvalIndex, JUDGMENTS_FILE, REPORT_JSON};
use super::{load, write_text};
use crate::error::CliError;
use crate::settings::{key, Key};

pub const KEYS: &[Key] = &[
    key("eval_dir", "eval", "evaluation directory written by `evaluate`"),
    key("judgments", "", "judgment file; empty for <eval_dir>/judgments.jsonl"),
    key("out", "", "rendered tables; empty for <eval_dir>/report.txt"),
];

pub fn report(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("report", KEYS, config, overrides)?;
    let dir = s.path("eval_dir");
    let rp = dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&rp).map_err(|e| CliError::data(format!("cannot read {}: {e}", rp.display())))?;
    let mut report = EvalReport::from_json(&text)?;
    let judgments = match s.str("judgments") {
        "" => dir.join(JUDGMENTS_FILE),
        p => PathBuf::from(p),
    };
    let records = read_judgments(&judgments)?;
    let categories = match EvalIndex::read(&dir) {
        Ok(i) => i.categories(),
        Err(_) if records.is_empty() => Default::default(),
        Err(e) => return Err(e),
    };
    report.attach_human(&records, &categories)?;
    let rendered = render_report(&report);
    let out = match s.str("out") {
        "" => dir.join("report.txt"),
        p => PathBuf::from(p),
    };
    write_text(&out, &rendered)?;
    print!("{rendered}");
    Ok(())
}
