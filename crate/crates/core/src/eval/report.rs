//! Evaluation results and their table rendering.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::human::{tally_by_category, tally_human, JudgmentRecord};
use super::EvalError;
use crate::microworld::Category;

/// Column key of the whole test set.
pub const TOTAL: &str = "TT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub sim_avg: f64,
    pub sim_best: f64,
    pub auc_avg: f64,
    pub auc_best: f64,
    pub fid: Option<f64>,
    pub state_match_rate: f64,
    /// Mean cosine between each candidate and its initial image.
    pub init_similarity: f64,
    pub acc: Option<f64>,
    pub chosen_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Category column (`TT` or a category abbreviation) to metrics.
    pub categories: BTreeMap<String, MetricRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub grid_points: usize,
    pub embedder_id: String,
    pub config: BTreeMap<String, String>,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn has_human(&self) -> bool {
        self.methods.iter().flat_map(|m| m.categories.values()).any(|r| r.acc.is_some())
    }

    /// Fills Acc and ChosenRate from judgments; methods nobody rated keep
    /// empty cells.
    pub fn attach_human(&mut self, records: &[JudgmentRecord], categories: &BTreeMap<String, Category>) -> Result<(), EvalError> {
        if records.is_empty() {
            return Ok(());
        }
        let total = tally_human(records)?;
        let by_cat = tally_by_category(records, categories)?;
        for m in &mut self.methods {
            for (key, row) in m.categories.iter_mut() {
                let scores = if key == TOTAL {
                    total.get(&m.method)
                } else {
                    key.parse::<Category>().ok().and_then(|c| by_cat.get(&c)).and_then(|t| t.get(&m.method))
                };
                if let Some(s) = scores {
                    row.acc = Some(s.acc);
                    row.chosen_rate = Some(s.chosen_rate);
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::InvalidReport(e.to_string()))
    }
}

/// Column keys in table order: total, then the categories.
pub fn category_columns() -> Vec<&'static str> {
    std::iter::once(TOTAL).chain(Category::ALL.iter().map(|c| c.short())).collect()
}

type Cell = fn(&MetricRow) -> Option<f64>;

fn metric_rows(k: usize, human: bool) -> Vec<(String, Cell, usize)> {
    let mut rows: Vec<(String, Cell, usize)> = vec![
        ("Sim_Avg".into(), |r| Some(r.sim_avg), 4),
        (format!("Sim_Best@{k}"), |r| Some(r.sim_best), 4),
        ("AUC_Avg".into(), |r| Some(r.auc_avg), 4),
        (format!("AUC_Best@{k}"), |r| Some(r.auc_best), 4),
    ];
    if human {
        rows.push(("Acc (human)".into(), |r| r.acc, 4));
        rows.push(("Chosen Rate (human)".into(), |r| r.chosen_rate, 4));
    }
    rows.push(("FID↓".into(), |r| r.fid, 1));
    rows.push(("State match".into(), |r| Some(r.state_match_rate), 4));
    rows
}

fn table(title: &str, columns: &[String], rows: &[(String, Vec<String>)]) -> String {
    let first = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max("Methods".len()) + 2;
    let width = columns.iter().map(|c| c.chars().count()).chain(rows.iter().flat_map(|r| r.1.iter().map(|v| v.len()))).max().unwrap_or(0) + 2;
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let lpad = |s: &str, w: usize| format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())));
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut header = pad("Methods", first);
    for c in columns {
        header += &lpad(c, width);
    }
    let rule = "-".repeat(header.chars().count());
    let _ = writeln!(out, "{rule}\n{header}\n{rule}");
    for (name, values) in rows {
        let mut line = pad(name, first);
        for v in values {
            line += &lpad(v, width);
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "{rule}");
    out
}

fn fmt_value(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

const HUMAN_NOTICE: &str = "No human judgments recorded; Acc and Chosen Rate rows omitted.";

/// Metrics as rows and methods as columns, over the whole test set.
pub fn render_method_table(report: &EvalReport) -> String {
    let human = report.has_human();
    let columns: Vec<String> = report.methods.iter().map(|m| m.method.clone()).collect();
    let rows: Vec<(String, Vec<String>)> = metric_rows(report.k, human)
        .into_iter()
        .map(|(name, get, digits)| {
            let values = report
                .methods
                .iter()
                .map(|m| fmt_value(m.categories.get(TOTAL).and_then(get), digits))
                .collect();
            (name, values)
        })
        .collect();
    let mut out = table("Comparison of guidance paradigms", &columns, &rows);
    if !human {
        out += HUMAN_NOTICE;
        out.push('\n');
    }
    out
}

/// Per-category results of one method: TT, SV, ME, FE, EV, EMV columns.
pub fn render_category_table(report: &EvalReport, method: &MethodReport) -> String {
    let human = report.has_human();
    let columns: Vec<String> = category_columns().into_iter().map(String::from).collect();
    let rows: Vec<(String, Vec<String>)> = metric_rows(report.k, human)
        .into_iter()
        .map(|(name, get, digits)| {
            let values = columns
                .iter()
                .map(|c| fmt_value(method.categories.get(c).and_then(get), digits))
                .collect();
            (name, values)
        })
        .collect();
    table(&format!("Results of {} by sample category", method.method), &columns, &rows)
}

/// Every table of a report, with its metadata.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = format!(
        "K = {}, threshold grid = {} points in [0, 1], embedder = {}\n",
        report.k, report.grid_points, report.embedder_id
    );
    let n: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{} N={}", m.method, m.categories.get(TOTAL).map_or(0, |r| r.n)))
        .collect();
    let _ = writeln!(out, "{}\n", n.join(", "));
    out += &render_method_table(report);
    for m in &report.methods {
        out.push('\n');
        out += &render_category_table(report, m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture() -> EvalReport {
        let row = |base: f64| MetricRow {
            n: 10,
            sim_avg: base,
            sim_best: base + 0.05,
            auc_avg: base - 0.01,
            auc_best: base + 0.04,
            fid: Some(30.0 + base),
            state_match_rate: base / 2.0,
            init_similarity: base,
            acc: None,
            chosen_rate: None,
        };
        let methods = [("QGD", 0.8361), ("AGD", 0.8444), ("LGD", 0.8589)]
            .into_iter()
            .map(|(m, b)| MethodReport {
                method: m.into(),
                categories: category_columns().into_iter().map(|c| (c.to_string(), row(b))).collect(),
            })
            .collect();
        EvalReport {
            k: 9,
            grid_points: 101,
            embedder_id: "embedder-fixture".into(),
            config: BTreeMap::new(),
            methods,
        }
    }

    #[test]
    fn method_table_layout() {
        let r = fixture();
        let t = render_method_table(&r);
        let header = t.lines().nth(2).unwrap();
        assert_eq!(header.split_whitespace().collect::<Vec<_>>(), ["Methods", "QGD", "AGD", "LGD"]);
        assert!(t.contains("Sim_Best@9") && t.contains("FID↓") && t.contains(HUMAN_NOTICE));
        assert!(!t.contains("Acc (human)"));
        assert_eq!(t, render_method_table(&r));
    }

    #[test]
    fn human_rows_when_judged() {
        let mut r = fixture();
        let lgd = r.methods[2].categories.get_mut(TOTAL).unwrap();
        lgd.acc = Some(0.3239);
        lgd.chosen_rate = Some(0.5135);
        let t = render_method_table(&r);
        assert!(t.contains("Acc (human)") && t.contains("0.3239") && t.contains("0.5135"));
        assert!(!t.contains(HUMAN_NOTICE));
    }

    #[test]
    fn category_columns_and_json() {
        let r = fixture();
        let t = render_category_table(&r, &r.methods[0]);
        let header = t.lines().nth(2).unwrap();
        assert_eq!(header.split_whitespace().collect::<Vec<_>>(), ["Methods", "TT", "SV", "ME", "FE", "EV", "EMV"]);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }
}
