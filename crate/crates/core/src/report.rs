//! Report tables: one row per model (averaged over inventories) or one row
//! per inventory (averaged over models), emitted as CSV or Markdown.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use crate::metrics::{average_metrics, mean_defined, MetricSummary};
use crate::runner::FamilyRule;

/// Rendered in place of a metric that could not be computed.
pub const MISSING: &str = "n/a";

pub const METRIC_KEYS: [&str; 5] = [
    "aed",
    "keyword_success_rate",
    "dimension_f1",
    "option_score_mae",
    "target_score_mae",
];

pub const METRIC_HEADERS: [&str; 5] = [
    "Verbatim AED ↓",
    "Keyword Success Rate ↑",
    "Item-Dimension F1 ↑",
    "Option-Score MAE ↓",
    "Target-Score MAE ↓",
];

/// Whether a larger value means stronger contamination.
pub const HIGHER_IS_STRONGER: [bool; 5] = [false, true, true, false, false];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no summaries to report")]
    Empty,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Model,
    Questionnaire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub group: Option<String>,
    pub values: [Option<f64>; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub kind: TableKind,
    pub rows: Vec<ReportRow>,
    pub footer: Option<ReportRow>,
    /// Decimal places in Markdown output.
    pub precision: usize,
    pub emphasize_best: bool,
}

impl ReportTable {
    pub fn label_header(&self) -> &'static str {
        match self.kind {
            TableKind::Model => "model",
            TableKind::Questionnaire => "questionnaire",
        }
    }
}

/// Family of a model id; a `provider/` routing prefix is ignored.
pub fn family_of(model_id: &str, families: &[FamilyRule]) -> String {
    let lower = model_id.to_lowercase();
    let bare = lower.rsplit('/').next().unwrap_or(&lower);
    families
        .iter()
        .find(|f| {
            let prefix = f.prefix.to_lowercase();
            lower.starts_with(&prefix) || bare.starts_with(&prefix)
        })
        .map_or_else(|| "Other".to_string(), |f| f.family.clone())
}

/// One row per model with metrics averaged over inventories, grouped by
/// family in `families` order (unmatched models last), plus an `Average`
/// footer over the model rows.
pub fn build_model_table(summaries: &[MetricSummary], families: &[FamilyRule]) -> Result<ReportTable, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_model: IndexMap<&str, Vec<&MetricSummary>> = IndexMap::new();
    for s in summaries {
        by_model.entry(&s.model_id).or_default().push(s);
    }
    let mut rows: Vec<ReportRow> = by_model
        .into_iter()
        .map(|(model, group)| ReportRow {
            label: model.to_string(),
            group: Some(family_of(model, families)),
            values: average_metrics(group),
        })
        .collect();
    let rank = |family: &str| {
        families
            .iter()
            .position(|f| f.family == family)
            .unwrap_or(families.len())
    };
    rows.sort_by_key(|r| rank(r.group.as_deref().unwrap_or_default()));
    let footer = ReportRow {
        label: "Average".into(),
        group: None,
        values: std::array::from_fn(|col| mean_defined(rows.iter().map(|r| r.values[col]))),
    };
    Ok(ReportTable {
        kind: TableKind::Model,
        rows,
        footer: Some(footer),
        precision: 2,
        emphasize_best: false,
    })
}

/// One row per inventory with metrics averaged over models; the strongest
/// value in each column is emphasized.
pub fn build_questionnaire_table(summaries: &[MetricSummary]) -> Result<ReportTable, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_inventory: IndexMap<&str, Vec<&MetricSummary>> = IndexMap::new();
    for s in summaries {
        by_inventory.entry(&s.inventory_name).or_default().push(s);
    }
    let rows = by_inventory
        .into_iter()
        .map(|(inventory, group)| ReportRow {
            label: inventory.to_string(),
            group: None,
            values: average_metrics(group),
        })
        .collect();
    Ok(ReportTable {
        kind: TableKind::Questionnaire,
        rows,
        footer: None,
        precision: 3,
        emphasize_best: true,
    })
}

/// CSV with full-precision values (shortest round-trip form) and
/// [`MISSING`] for undefined metrics. The footer row, if any, comes last.
pub fn to_csv(table: &ReportTable) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![table.label_header()];
    header.extend(METRIC_KEYS);
    writer.write_record(&header)?;
    for row in table.rows.iter().chain(&table.footer) {
        let mut record = vec![row.label.clone()];
        record.extend(
            row.values
                .iter()
                .map(|v| v.map_or_else(|| MISSING.to_string(), |v| format!("{v:?}"))),
        );
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| ReportError::Io {
        path: "<csv buffer>".into(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn best_per_column(rows: &[ReportRow], precision: usize) -> [Option<String>; 5] {
    std::array::from_fn(|col| {
        let defined = rows.iter().filter_map(|r| r.values[col]);
        let best = if HIGHER_IS_STRONGER[col] {
            defined.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        } else {
            defined.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        };
        best.map(|b| format!("{b:.precision$}"))
    })
}

pub fn to_markdown(table: &ReportTable) -> String {
    let precision = table.precision;
    let best = if table.emphasize_best {
        best_per_column(&table.rows, precision)
    } else {
        Default::default()
    };
    let cell = |col: usize, v: Option<f64>| match v {
        None => MISSING.to_string(),
        Some(v) => {
            let text = format!("{v:.precision$}");
            if best[col].as_deref() == Some(text.as_str()) {
                format!("**{text}**")
            } else {
                text
            }
        }
    };

    let mut out = String::new();
    let label = match table.kind {
        TableKind::Model => "Model",
        TableKind::Questionnaire => "Questionnaire",
    };
    let _ = writeln!(out, "| {label} | {} |", METRIC_HEADERS.join(" | "));
    let _ = writeln!(out, "|:---|{}", "---:|".repeat(5));
    let mut current_group: Option<&str> = None;
    for row in &table.rows {
        if let Some(group) = row.group.as_deref() {
            if current_group != Some(group) {
                let _ = writeln!(out, "| *{group}* |{}", " |".repeat(5));
                current_group = Some(group);
            }
        }
        let cells: Vec<String> = (0..5).map(|c| cell(c, row.values[c])).collect();
        let _ = writeln!(out, "| {} | {} |", row.label, cells.join(" | "));
    }
    if let Some(footer) = &table.footer {
        let cells: Vec<String> = footer
            .values
            .iter()
            .map(|v| v.map_or_else(|| MISSING.to_string(), |v| format!("{v:.precision$}")))
            .collect();
        let _ = writeln!(out, "| **{}** | {} |", footer.label, cells.join(" | "));
    }
    out
}

pub fn render(table: &ReportTable, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Csv => to_csv(table),
        Format::Markdown => Ok(to_markdown(table)),
    }
}

pub fn emit(table: &ReportTable, format: Format, path: &Path) -> Result<(), ReportError> {
    let text = render(table, format)?;
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
