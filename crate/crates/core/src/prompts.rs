//! Probe prompt templates and rendering.
//!
//! Each probe task has one template asset under `templates/`. Templates are
//! sent verbatim as the single user message, with `{placeholder}` tokens
//! substituted in one left-to-right pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Inventory, Item};

/// The five contamination probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    VerbatimMemorization,
    KeywordMemorization,
    ItemDimensionMapping,
    OptionScoreMapping,
    TargetScoreMatching,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 5] = [
        ProbeTask::VerbatimMemorization,
        ProbeTask::KeywordMemorization,
        ProbeTask::ItemDimensionMapping,
        ProbeTask::OptionScoreMapping,
        ProbeTask::TargetScoreMatching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTask::VerbatimMemorization => "verbatim_memorization",
            ProbeTask::KeywordMemorization => "keyword_memorization",
            ProbeTask::ItemDimensionMapping => "item_dimension_mapping",
            ProbeTask::OptionScoreMapping => "option_score_mapping",
            ProbeTask::TargetScoreMatching => "target_score_matching",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            ProbeTask::VerbatimMemorization => include_str!("../templates/verbatim_memorization.txt"),
            ProbeTask::KeywordMemorization => include_str!("../templates/keyword_memorization.txt"),
            ProbeTask::ItemDimensionMapping => include_str!("../templates/item_dimension_mapping.txt"),
            ProbeTask::OptionScoreMapping => include_str!("../templates/option_score_mapping.txt"),
            ProbeTask::TargetScoreMatching => include_str!("../templates/target_score_matching.txt"),
        }
    }

    /// Attention-check items only take part in the two item-memorization probes.
    pub fn includes_attention_checks(self) -> bool {
        matches!(self, ProbeTask::VerbatimMemorization | ProbeTask::KeywordMemorization)
    }
}

impl fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let task = match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "verbatim" | "verbatim_memorization" => ProbeTask::VerbatimMemorization,
            "keyword" | "keyword_memorization" | "key_information" => ProbeTask::KeywordMemorization,
            "dimension" | "item_dimension" | "item_dimension_mapping" => ProbeTask::ItemDimensionMapping,
            "option_score" | "option_score_mapping" => ProbeTask::OptionScoreMapping,
            "target_score" | "target" | "target_score_matching" => ProbeTask::TargetScoreMatching,
            _ => {
                return Err(format!(
                    "unknown task {s:?} (expected verbatim, keyword, dimension, option-score or target-score)"
                ))
            }
        };
        Ok(task)
    }
}

/// Values available to a template. Only the fields a task's template uses
/// need to be set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    pub inventory_name: Option<String>,
    pub item_index: Option<u32>,
    pub item_text: Option<String>,
    pub masked_item: Option<String>,
    pub dimensions: Option<Vec<String>>,
    pub dimension: Option<String>,
    pub options: Option<Vec<String>>,
    pub target_score: Option<i64>,
}

impl PromptContext {
    /// Full context for one item. `masked_item` is filled only when the item
    /// has a keyword and `dimension` only when it has one.
    pub fn for_item(inventory: &Inventory, item: &Item, target_score: Option<i64>) -> Self {
        let scale = inventory.scale_of(item);
        PromptContext {
            inventory_name: Some(inventory.name.clone()),
            item_index: Some(item.index),
            item_text: Some(item.text.clone()),
            masked_item: item.masked_text().ok(),
            dimensions: Some(inventory.dimensions.clone()),
            dimension: item.dimension.clone(),
            options: Some(scale.options.clone()),
            target_score,
        }
    }

    fn lookup(&self, placeholder: &str) -> Result<Option<String>, RenderError> {
        let value = match placeholder {
            "inventory_name" => self.inventory_name.clone(),
            "item_index" => self.item_index.map(|i| i.to_string()),
            "item" => self.item_text.clone(),
            "item_with_mask" => self.masked_item.clone(),
            "dimensions" => self.dimensions.as_ref().map(|d| join_labels(d)),
            "dimension" => self.dimension.clone(),
            "options" => self.options.as_ref().map(|o| join_labels(o)),
            "target_score" => self.target_score.map(|t| t.to_string()),
            other => return Err(RenderError::UnknownPlaceholder(other.to_string())),
        };
        Ok(value)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("missing value for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("template uses unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
}

/// List placeholders render as `a, b, c` in inventory order.
pub fn join_labels(labels: &[String]) -> String {
    labels.join(", ")
}

pub fn render_prompt(task: ProbeTask, ctx: &PromptContext) -> Result<String, RenderError> {
    render_template(task.template(), ctx)
}

/// Substitutes `{name}` tokens. Substituted values are never rescanned, and
/// braces that do not enclose an identifier (e.g. `{ }`) are copied as-is.
pub fn render_template(template: &str, ctx: &PromptContext) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder_name(&after[..close]) => {
                let name = &after[..close];
                let value = ctx
                    .lookup(name)?
                    .ok_or_else(|| RenderError::MissingValue(name.to_string()))?;
                out.push_str(&value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// Names of the placeholders a template references, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder_name(&after[..close]) => {
                names.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    names
}
