//! Score tables with best and second-best marks, rendered as Markdown, CSV,
//! or a line-delimited JSON summary.
//!
//! A report is stored model-major: one row per model, one column per metric
//! slot (language and unit, or doc type). Marks rank models within a column.
//! Extraction reports set `transpose` so they render with doc types down the
//! side and models across the top.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::metrics::{AnlsScore, ExtractionScore, FreeFormMatchScore};
use crate::schemas::DocType;
use crate::text::SegmentUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
    /// Counts and other values that are not ranked.
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Best,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub direction: Direction,
    pub mark: Option<Mark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: String,
    pub label: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: String,
    /// Header for the model axis.
    pub row_header: String,
    /// Header for the column axis when rendered transposed.
    pub column_header: String,
    pub columns: Vec<Column>,
    pub rows: Vec<ReportRow>,
    pub transpose: bool,
    pub decimals: usize,
    pub provenance: BTreeMap<String, String>,
}

type GridRow = (String, Vec<Cell>);

impl EvalReport {
    pub fn new(title: impl Into<String>, columns: Vec<Column>) -> Self {
        Self {
            title: title.into(),
            row_header: "Model".into(),
            column_header: "Metric".into(),
            columns,
            rows: Vec::new(),
            transpose: false,
            decimals: 2,
            provenance: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        assert_eq!(values.len(), self.columns.len(), "row width must match columns");
        let cells = values
            .into_iter()
            .zip(&self.columns)
            .map(|(value, col)| Cell {
                value,
                direction: col.direction,
                mark: None,
            })
            .collect();
        self.rows.push(ReportRow {
            label: label.into(),
            cells,
        });
    }

    pub fn with_provenance(mut self, provenance: &BTreeMap<String, String>) -> Self {
        self.provenance.extend(provenance.iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }

    /// Mark the best and second-best row in every ranked column. Ties go to
    /// the lexicographically smaller row label.
    pub fn compute_marks(&mut self) {
        for row in &mut self.rows {
            for cell in &mut row.cells {
                cell.mark = None;
            }
        }
        for (j, col) in self.columns.iter().enumerate() {
            if col.direction == Direction::Neutral {
                continue;
            }
            let mut ranked: Vec<(f64, &str, usize)> = self
                .rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.cells[j].value.filter(|v| v.is_finite()).map(|v| (v, r.label.as_str(), i)))
                .collect();
            ranked.sort_by(|a, b| {
                let by_value = match col.direction {
                    Direction::HigherIsBetter => b.0.total_cmp(&a.0),
                    _ => a.0.total_cmp(&b.0),
                };
                by_value.then_with(|| a.1.cmp(b.1))
            });
            let picks: Vec<usize> = ranked.iter().map(|x| x.2).take(2).collect();
            if let Some(&best) = picks.first() {
                self.rows[best].cells[j].mark = Some(Mark::Best);
            }
            if let Some(&second) = picks.get(1) {
                self.rows[second].cells[j].mark = Some(Mark::Second);
            }
        }
    }

    pub fn mark_of(&self, row: &str, column_key: &str) -> Option<Mark> {
        let j = self.columns.iter().position(|c| c.key == column_key)?;
        self.rows.iter().find(|r| r.label == row)?.cells[j].mark
    }

    pub fn value_of(&self, row: &str, column_key: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c.key == column_key)?;
        self.rows.iter().find(|r| r.label == row)?.cells[j].value
    }

    /// Display grid: header labels, then (row label, cells) in display orientation.
    fn grid(&self) -> (String, Vec<String>, Vec<GridRow>) {
        if !self.transpose {
            let header = self.columns.iter().map(|c| c.label.clone()).collect();
            let rows = self.rows.iter().map(|r| (r.label.clone(), r.cells.clone())).collect();
            (self.row_header.clone(), header, rows)
        } else {
            let header = self.rows.iter().map(|r| r.label.clone()).collect();
            let rows = self
                .columns
                .iter()
                .enumerate()
                .map(|(j, c)| (c.label.clone(), self.rows.iter().map(|r| r.cells[j]).collect()))
                .collect();
            (self.column_header.clone(), header, rows)
        }
    }

    fn fmt_value(&self, v: Option<f64>) -> String {
        match v {
            Some(v) => format!("{:.*}", self.decimals, v),
            None => "-".into(),
        }
    }
}

fn unit_label(unit: SegmentUnit) -> &'static str {
    match unit {
        SegmentUnit::Word => "Word",
        SegmentUnit::Codepoint => "Char",
        SegmentUnit::Grapheme => "Grapheme",
    }
}

/// ANLS table: one row per model, one column per (language, unit). Scores
/// are reported on the 0-100 scale; lower is better.
pub fn build_ocr_report(scores: &IndexMap<(String, String), Vec<AnlsScore>>) -> EvalReport {
    let mut columns: Vec<(String, SegmentUnit)> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for ((model, lang), units) in scores {
        if !models.contains(&model.as_str()) {
            models.push(model);
        }
        for s in units {
            if !columns.contains(&(lang.clone(), s.unit)) {
                columns.push((lang.clone(), s.unit));
            }
        }
    }
    let cols = columns
        .iter()
        .map(|(lang, unit)| Column {
            key: format!("{lang}/{unit}"),
            label: format!("{lang} {}", unit_label(*unit)),
            direction: Direction::LowerIsBetter,
        })
        .collect();
    let mut report = EvalReport::new("OCR performance (ANLS; lower is better)", cols);
    for model in models {
        let values = columns
            .iter()
            .map(|(lang, unit)| {
                scores
                    .get(&(model.to_string(), lang.clone()))
                    .and_then(|v| v.iter().find(|s| s.unit == *unit))
                    .map(|s| s.scaled)
            })
            .collect();
        report.push_row(model, values);
    }
    report.compute_marks();
    report
}

/// Free-form %Match table; higher is better.
pub fn build_match_report(scores: &IndexMap<(String, String), FreeFormMatchScore>) -> EvalReport {
    let mut langs: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for (model, lang) in scores.keys() {
        if !models.contains(&model.as_str()) {
            models.push(model);
        }
        if !langs.contains(&lang.as_str()) {
            langs.push(lang);
        }
    }
    let cols = langs
        .iter()
        .map(|l| Column {
            key: format!("{l}/match"),
            label: format!("{l} %Match"),
            direction: Direction::HigherIsBetter,
        })
        .collect();
    let mut report = EvalReport::new("Free-form OCR (%Match; higher is better)", cols);
    for model in models {
        let values = langs
            .iter()
            .map(|l| scores.get(&(model.to_string(), l.to_string())).map(|s| s.percent))
            .collect();
        report.push_row(model, values);
    }
    report.compute_marks();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMetric {
    ExactMatch,
    PercentageMatch,
    MeanScore,
}

impl ExtractionMetric {
    fn of(&self, s: &ExtractionScore) -> f64 {
        match self {
            ExtractionMetric::ExactMatch => s.doc_em,
            ExtractionMetric::PercentageMatch => s.doc_pm,
            ExtractionMetric::MeanScore => s.mean,
        }
    }

    fn title(&self) -> &'static str {
        match self {
            ExtractionMetric::ExactMatch => "Document-wise Exact Match (EM %)",
            ExtractionMetric::PercentageMatch => "Document-wise Percentage Match (PM %)",
            ExtractionMetric::MeanScore => "Document-wise Mean Score (%)",
        }
    }
}

pub const GRAND_TOTAL: &str = "Grand Total";

fn doc_type_columns(scores: &IndexMap<(String, DocType), ExtractionScore>) -> (Vec<&str>, Vec<DocType>) {
    let mut models: Vec<&str> = Vec::new();
    for (model, _) in scores.keys() {
        if !models.contains(&model.as_str()) {
            models.push(model);
        }
    }
    let docs = DocType::ALL
        .iter()
        .copied()
        .filter(|d| scores.keys().any(|(_, k)| k == d))
        .collect();
    (models, docs)
}

/// Per-doc-type table for one metric plus a Grand Total, the unweighted mean
/// over the doc types the model was scored on. Higher is better. Renders
/// transposed: doc types as rows, models as columns.
pub fn build_extraction_report(scores: &IndexMap<(String, DocType), ExtractionScore>, metric: ExtractionMetric) -> EvalReport {
    let (models, docs) = doc_type_columns(scores);
    let mut cols: Vec<Column> = docs
        .iter()
        .map(|d| Column {
            key: d.to_string(),
            label: d.display_name().to_string(),
            direction: Direction::HigherIsBetter,
        })
        .collect();
    cols.push(Column {
        key: "grand_total".into(),
        label: GRAND_TOTAL.into(),
        direction: Direction::HigherIsBetter,
    });
    let mut report = EvalReport::new(metric.title(), cols);
    report.transpose = true;
    report.column_header = "Doc Type".into();
    for model in models {
        let mut values: Vec<Option<f64>> = docs
            .iter()
            .map(|d| scores.get(&(model.to_string(), *d)).map(|s| metric.of(s)))
            .collect();
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let total = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        values.push(total);
        report.push_row(model, values);
    }
    report.compute_marks();
    report
}

/// Spurious (non-schema) predicted field counts per doc type; unranked.
pub fn build_spurious_report(scores: &IndexMap<(String, DocType), ExtractionScore>) -> EvalReport {
    let (models, docs) = doc_type_columns(scores);
    let mut cols: Vec<Column> = docs
        .iter()
        .map(|d| Column {
            key: d.to_string(),
            label: d.display_name().to_string(),
            direction: Direction::Neutral,
        })
        .collect();
    cols.push(Column {
        key: "total".into(),
        label: "Total".into(),
        direction: Direction::Neutral,
    });
    let mut report = EvalReport::new("Spurious predicted fields (count)", cols);
    report.transpose = true;
    report.column_header = "Doc Type".into();
    report.decimals = 0;
    for model in models {
        let mut values: Vec<Option<f64>> = docs
            .iter()
            .map(|d| scores.get(&(model.to_string(), *d)).map(|s| s.spurious_fields as f64))
            .collect();
        values.push(Some(values.iter().flatten().sum()));
        report.push_row(model, values);
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Csv,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Markdown => "md",
            Format::Csv => "csv",
        }
    }
}

pub fn render(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Markdown => render_markdown(report),
        Format::Csv => render_csv(report),
    }
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_markdown(report: &EvalReport) -> String {
    let (corner, header, rows) = report.grid();
    let mut out = String::new();
    writeln!(out, "## {}\n", report.title).unwrap();
    write!(out, "| {} |", md_escape(&corner)).unwrap();
    for h in &header {
        write!(out, " {} |", md_escape(h)).unwrap();
    }
    out.push_str("\n|---|");
    for _ in &header {
        out.push_str("---:|");
    }
    out.push('\n');
    for (label, cells) in rows {
        let bold_label = label == GRAND_TOTAL;
        if bold_label {
            write!(out, "| **{}** |", md_escape(&label)).unwrap();
        } else {
            write!(out, "| {} |", md_escape(&label)).unwrap();
        }
        for cell in cells {
            let v = report.fmt_value(cell.value);
            match cell.mark {
                Some(Mark::Best) => write!(out, " **{v}** |").unwrap(),
                Some(Mark::Second) => write!(out, " <u>{v}</u> |").unwrap(),
                None => write!(out, " {v} |").unwrap(),
            }
        }
        out.push('\n');
    }
    if !report.provenance.is_empty() {
        out.push_str("\nProvenance:\n\n");
        for (k, v) in &report.provenance {
            writeln!(out, "- {k}: {v}").unwrap();
        }
    }
    out
}

fn render_csv(report: &EvalReport) -> String {
    let (corner, header, rows) = report.grid();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec![corner];
    for h in &header {
        head.push(h.clone());
        head.push(format!("{h} mark"));
    }
    w.write_record(&head).expect("in-memory write");
    for (label, cells) in rows {
        let mut rec = vec![label];
        for cell in cells {
            rec.push(cell.value.map(|v| format!("{:.*}", report.decimals, v)).unwrap_or_default());
            rec.push(
                match cell.mark {
                    Some(Mark::Best) => "best",
                    Some(Mark::Second) => "second",
                    None => "",
                }
                .into(),
            );
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv output is UTF-8")
}

#[derive(Serialize)]
struct SummaryCell<'a> {
    report: &'a str,
    row: &'a str,
    column: &'a str,
    value: Option<f64>,
    direction: Direction,
    mark: Option<Mark>,
}

#[derive(Serialize)]
struct SummaryProvenance<'a> {
    report: &'a str,
    provenance: &'a BTreeMap<String, String>,
}

/// One JSON line of provenance, then one per cell, in model-major order.
pub fn summary_jsonl(report: &EvalReport) -> String {
    let mut out = serde_json::to_string(&SummaryProvenance {
        report: &report.title,
        provenance: &report.provenance,
    })
    .expect("serializes");
    out.push('\n');
    for row in &report.rows {
        for (col, cell) in report.columns.iter().zip(&row.cells) {
            let line = SummaryCell {
                report: &report.title,
                row: &row.label,
                column: &col.key,
                value: cell.value,
                direction: cell.direction,
                mark: cell.mark,
            };
            out.push_str(&serde_json::to_string(&line).expect("serializes"));
            out.push('\n');
        }
    }
    out
}
