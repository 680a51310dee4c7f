//! Accuracy tables: methods × views grids, Day/Night grouped grids and
//! single-view vs multi-view comparisons, rendered as text or CSV.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::matrix::{RunMode, Summary};
use crate::Result;

/// One accuracy percentage, optionally with a spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Cell {
    pub fn new(value: f64) -> Self {
        Self { value, std: None }
    }

    pub fn with_std(value: f64, std: f64) -> Self {
        Self { value, std: Some(std) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub label: String,
    pub span: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub labels: Vec<String>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub caption: String,
    /// Headers of the label columns, e.g. `["Method"]` or `["Dataset", "View"]`.
    pub row_header: Vec<String>,
    /// Optional grouping of `columns`; spans must cover every column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<ColumnGroup>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn cells(values: &[f64]) -> Vec<Cell> {
    values.iter().copied().map(Cell::new).collect()
}

impl ReportTable {
    /// Methods as rows, one column per test view.
    pub fn methods_by_view(caption: &str, views: &[&str], rows: &[(&str, &[f64])]) -> Result<Self> {
        let table = Self {
            caption: caption.to_string(),
            row_header: vec!["Method".to_string()],
            groups: Vec::new(),
            columns: strings(views),
            rows: rows.iter().map(|(m, v)| Row { labels: vec![m.to_string()], cells: cells(v) }).collect(),
        };
        table.validate()?;
        Ok(table)
    }

    /// Methods as rows, views nested under condition groups such as Day/Night.
    pub fn methods_by_grouped_view(caption: &str, groups: &[(&str, &[&str])], rows: &[(&str, &[f64])]) -> Result<Self> {
        let mut table = Self::methods_by_view(caption, &[], &[])?;
        for (label, views) in groups {
            table.groups.push(ColumnGroup { label: label.to_string(), span: views.len() });
            table.columns.extend(strings(views));
        }
        table.rows = rows.iter().map(|(m, v)| Row { labels: vec![m.to_string()], cells: cells(v) }).collect();
        table.validate()?;
        Ok(table)
    }

    /// Dataset/view rows against single-view and multi-view columns.
    pub fn single_vs_multi(caption: &str, rows: &[(&str, &str, f64, f64)]) -> Result<Self> {
        let table = Self {
            caption: caption.to_string(),
            row_header: strings(&["Dataset", "View"]),
            groups: Vec::new(),
            columns: strings(&["Single-view", "Multi-view"]),
            rows: rows.iter().map(|&(d, v, s, m)| Row { labels: strings(&[d, v]), cells: cells(&[s, m]) }).collect(),
        };
        table.validate()?;
        Ok(table)
    }

    /// Experiment-matrix summaries in the single-view vs multi-view layout,
    /// as percentages with their spread over folds.
    pub fn from_summaries(caption: &str, dataset: &str, summaries: &[Summary]) -> Result<Self> {
        let mut views: Vec<u32> = summaries.iter().map(|s| s.view).collect();
        views.sort_unstable();
        views.dedup();
        let mut table = Self::single_vs_multi(caption, &[])?;
        for v in views {
            let cell = |mode: RunMode| -> Result<Cell> {
                let s = summaries
                    .iter()
                    .find(|s| s.view == v && s.mode == mode)
                    .ok_or_else(|| invalid!("no {} summary for view {v}", mode.as_str()))?;
                Ok(Cell::with_std(s.mean * 100.0, s.std * 100.0))
            };
            table.rows.push(Row {
                labels: vec![dataset.to_string(), format!("Cam_{v}")],
                cells: vec![cell(RunMode::SingleViewBaseline)?, cell(RunMode::MultiViewDistilled)?],
            });
        }
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.groups.is_empty() {
            let span: usize = self.groups.iter().map(|g| g.span).sum();
            if span != self.columns.len() || self.groups.iter().any(|g| g.span == 0) {
                return Err(invalid!("column groups span {span} columns, table has {}", self.columns.len()));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.labels.len() != self.row_header.len() {
                return Err(invalid!("row {i} has {} labels, expected {}", row.labels.len(), self.row_header.len()));
            }
            if row.cells.len() != self.columns.len() {
                return Err(invalid!("row {i} has {} cells, expected {}", row.cells.len(), self.columns.len()));
            }
            for c in &row.cells {
                if !(c.value.is_finite() && (0.0..=100.0).contains(&c.value)) {
                    return Err(invalid!("row {i}: accuracy {} is outside [0, 100]", c.value));
                }
                if let Some(s) = c.std {
                    if !(s.is_finite() && s >= 0.0) {
                        return Err(invalid!("row {i}: spread {s} must be finite and non-negative"));
                    }
                }
            }
        }
        Ok(())
    }

    fn has_std(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.cells).any(|c| c.std.is_some())
    }

    fn column_keys(&self) -> Vec<String> {
        if self.groups.is_empty() {
            return self.columns.clone();
        }
        let mut keys = Vec::with_capacity(self.columns.len());
        let mut cols = self.columns.iter();
        for g in &self.groups {
            for c in cols.by_ref().take(g.span) {
                keys.push(format!("{}/{c}", g.label));
            }
        }
        keys
    }

    /// The rendered cells line by line: the group line (if any), the header
    /// and one line per row. Leading labels repeated from the row above are
    /// left blank.
    pub fn grid(&self) -> Result<Vec<Vec<String>>> {
        self.validate()?;
        let n_labels = self.row_header.len();
        let mut lines: Vec<Vec<String>> = Vec::new();
        if !self.groups.is_empty() {
            let mut line = vec![String::new(); n_labels];
            for g in &self.groups {
                line.push(g.label.clone());
                line.extend(core::iter::repeat_n(String::new(), g.span - 1));
            }
            lines.push(line);
        }
        lines.push(self.row_header.iter().chain(&self.columns).cloned().collect());
        let mut previous: Option<&[String]> = None;
        for row in &self.rows {
            let mut line = Vec::with_capacity(n_labels + self.columns.len());
            let mut same = true;
            for (j, label) in row.labels.iter().enumerate() {
                same = same && previous.is_some_and(|p| &p[j] == label);
                line.push(if same && j + 1 < n_labels { String::new() } else { label.clone() });
            }
            line.extend(row.cells.iter().map(format_cell));
            lines.push(line);
            previous = Some(&row.labels);
        }
        Ok(lines)
    }

    pub fn to_text(&self) -> Result<String> {
        let lines = self.grid()?;
        let n_labels = self.row_header.len();
        let width = |j: usize| lines.iter().map(|l| l[j].chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..n_labels + self.columns.len()).map(width).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.caption);
        out.push('\n');
        for line in &lines {
            let mut text = String::new();
            for (j, field) in line.iter().enumerate() {
                if j > 0 {
                    text.push_str("  ");
                }
                let w = widths[j];
                if j < n_labels {
                    let _ = write!(text, "{field:<w$}");
                } else {
                    let _ = write!(text, "{field:>w$}");
                }
            }
            out.push_str(text.trim_end());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let std = self.has_std();
        let mut header: Vec<String> = self.row_header.clone();
        for key in self.column_keys() {
            let spread = std.then(|| format!("{key} std"));
            header.push(key);
            header.extend(spread);
        }
        let mut out = String::new();
        push_record(&mut out, &header);
        for row in &self.rows {
            let mut record = row.labels.clone();
            for c in &row.cells {
                record.push(format!("{:.2}", c.value));
                if std {
                    record.push(c.std.map(|s| format!("{s:.2}")).unwrap_or_default());
                }
            }
            push_record(&mut out, &record);
        }
        Ok(out)
    }

    /// Reads a table written by [`ReportTable::to_csv`]; the first
    /// `label_columns` fields of each record are row labels.
    pub fn from_csv(caption: &str, label_columns: usize, text: &str) -> Result<Self> {
        let mut records = parse_csv(text)?.into_iter();
        let header = records.next().ok_or_else(|| invalid!("empty CSV"))?;
        if header.len() < label_columns {
            return Err(invalid!("CSV header has {} fields, need {label_columns} label columns", header.len()));
        }
        let std = header[label_columns..].iter().any(|h| h.ends_with(" std"));
        let keys: Vec<&String> = header[label_columns..].iter().step_by(if std { 2 } else { 1 }).collect();
        let mut table = Self {
            caption: caption.to_string(),
            row_header: header[..label_columns].to_vec(),
            groups: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
        };
        for key in keys {
            match key.split_once('/') {
                Some((g, c)) => {
                    match table.groups.last_mut() {
                        Some(last) if last.label == g => last.span += 1,
                        _ => table.groups.push(ColumnGroup { label: g.to_string(), span: 1 }),
                    }
                    table.columns.push(c.to_string());
                }
                None => table.columns.push(key.clone()),
            }
        }
        if !table.groups.is_empty() && table.groups.iter().map(|g| g.span).sum::<usize>() != table.columns.len() {
            return Err(invalid!("CSV mixes grouped and ungrouped columns"));
        }
        for (i, record) in records.enumerate() {
            if record.len() != header.len() {
                return Err(invalid!("CSV record {} has {} fields, header has {}", i + 1, record.len(), header.len()));
            }
            let number = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| invalid!("CSV record {}: {s:?} is not a number", i + 1))
            };
            let mut cells = Vec::with_capacity(table.columns.len());
            let values = &record[label_columns..];
            if std {
                for pair in values.chunks(2) {
                    let spread = if pair[1].is_empty() { None } else { Some(number(&pair[1])?) };
                    cells.push(Cell { value: number(&pair[0])?, std: spread });
                }
            } else {
                for v in values {
                    cells.push(Cell::new(number(v)?));
                }
            }
            table.rows.push(Row { labels: record[..label_columns].to_vec(), cells });
        }
        table.validate()?;
        Ok(table)
    }
}

/// Renders a table in the requested format.
pub fn render_table(table: &ReportTable, format: Format) -> Result<String> {
    match format {
        Format::Text => table.to_text(),
        Format::Csv => table.to_csv(),
    }
}

fn format_cell(c: &Cell) -> String {
    match c.std {
        Some(s) => format!("{:.2} ± {s:.2}", c.value),
        None => format!("{:.2}", c.value),
    }
}

fn push_record(out: &mut String, fields: &[String]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if f.contains([',', '"', '\n', '\r']) {
            out.push('"');
            out.push_str(&f.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(f);
        }
    }
    out.push('\n');
}

fn parse_csv(text: &str) -> Result<Vec<Vec<String>>> {
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match (quoted, c) {
            (true, '"') if chars.peek() == Some(&'"') => {
                chars.next();
                field.push('"');
            }
            (true, '"') => quoted = false,
            (true, c) => field.push(c),
            (false, '"') if field.is_empty() => quoted = true,
            (false, ',') => record.push(core::mem::take(&mut field)),
            (false, '\r') => {}
            (false, '\n') => {
                record.push(core::mem::take(&mut field));
                records.push(core::mem::take(&mut record));
            }
            (false, c) => field.push(c),
        }
    }
    if quoted {
        return Err(invalid!("unterminated quoted CSV field"));
    }
    if !field.is_empty() || !record.is_empty() {
        record.push(field);
        records.push(record);
    }
    Ok(records)
}
