//! Machine-readable psychometric inventories.
//!
//! An inventory is a JSON document listing dimensions, response scales and
//! items. Everything downstream (prompt contexts, ground-truth scores,
//! keyword masks) is derived from a validated [`Inventory`], which is
//! immutable once loaded.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token substituted for an item's keyword in the masked-keyword probe.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("{}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error("item {index}: {message}")]
    Precondition { index: u32, message: String },
    #[error("option rank {rank} out of range 1..={options}")]
    RankOutOfRange { rank: usize, options: usize },
}

/// One broken invariant. `item` is `None` for inventory-level rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub item: Option<u32>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.item {
            Some(index) => write!(f, "item {index}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    let parts: Vec<String> = violations.iter().map(ToString::to_string).collect();
    format!("validation error: {}", parts.join("; "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseScale {
    pub id: String,
    /// Option labels in presentation order; rank `r` is `options[r - 1]`.
    pub options: Vec<String>,
    pub min_score: i64,
    pub max_score: i64,
}

impl ResponseScale {
    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    /// Minimum, midpoint and maximum attainable scores.
    ///
    /// The midpoint of an even-width scale is rounded half up so that it is
    /// always a score some option actually produces (1..=6 gives 4).
    pub fn targets(&self) -> ScaleTargets {
        let sum = self.min_score + self.max_score;
        // floor((sum + 1) / 2) is round-half-up of sum / 2 for any sign.
        let mean = (sum + 1).div_euclid(2);
        ScaleTargets {
            min: self.min_score,
            mean,
            max: self.max_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleTargets {
    pub min: i64,
    pub mean: i64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub index: u32,
    pub text: String,
    pub dimension: Option<String>,
    pub reverse_coded: bool,
    pub scale_id: String,
    pub keyword: Option<String>,
    pub attention_check: bool,
}

impl Item {
    /// Item text with its keyword replaced by [`MASK_TOKEN`].
    pub fn masked_text(&self) -> Result<String, InventoryError> {
        let keyword = self.keyword.as_deref().ok_or_else(|| InventoryError::Precondition {
            index: self.index,
            message: "item has no keyword to mask".into(),
        })?;
        let at = self.text.find(keyword).ok_or_else(|| InventoryError::Precondition {
            index: self.index,
            message: format!("keyword {keyword:?} does not occur in item text"),
        })?;
        let mut masked = String::with_capacity(self.text.len() + MASK_TOKEN.len());
        masked.push_str(&self.text[..at]);
        masked.push_str(MASK_TOKEN);
        masked.push_str(&self.text[at + keyword.len()..]);
        Ok(masked)
    }

    /// Ground-truth score contributed by the option at 1-based `rank`.
    pub fn option_score(&self, scale: &ResponseScale, rank: usize) -> Result<i64, InventoryError> {
        let options = scale.option_count();
        if rank == 0 || rank > options {
            return Err(InventoryError::RankOutOfRange { rank, options });
        }
        let offset = (rank - 1) as i64;
        Ok(if self.reverse_coded {
            scale.max_score - offset
        } else {
            scale.min_score + offset
        })
    }

    /// Scores of every option in rank order.
    pub fn score_row(&self, scale: &ResponseScale) -> Vec<i64> {
        (1..=scale.option_count())
            .map(|rank| self.option_score(scale, rank).expect("rank within scale"))
            .collect()
    }

    /// 1-based rank of the option whose true score equals `score`, if any.
    pub fn rank_for_score(&self, scale: &ResponseScale, score: i64) -> Option<usize> {
        (1..=scale.option_count()).find(|&rank| self.option_score(scale, rank).ok() == Some(score))
    }

    /// Whether the item takes part in the dimension, option-score and
    /// target-score probes. Attention checks measure no construct.
    pub fn is_scored(&self) -> bool {
        !self.attention_check
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inventory {
    pub name: String,
    pub dimensions: Vec<String>,
    pub scales: Vec<ResponseScale>,
    pub items: Vec<Item>,
}

impl Inventory {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, InventoryError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                InventoryError::NotFound(path.display().to_string())
            } else {
                InventoryError::Io {
                    path: path.display().to_string(),
                    source,
                }
            }
        })?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, InventoryError> {
        let inventory: Inventory = serde_json::from_slice(bytes).map_err(|e| InventoryError::Format(e.to_string()))?;
        inventory.validate()?;
        Ok(inventory)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("inventory serializes")
    }

    /// Checks every structural rule and reports all violations at once.
    pub fn validate(&self) -> Result<(), InventoryError> {
        let mut violations = Vec::new();
        let mut push = |item: Option<u32>, rule: String| violations.push(Violation { item, rule });

        if self.name.trim().is_empty() {
            push(None, "inventory name is empty".into());
        }
        if self.dimensions.is_empty() {
            push(None, "at least one dimension is required".into());
        }
        if self.items.is_empty() {
            push(None, "at least one item is required".into());
        }
        let mut seen_dims = HashSet::new();
        for dim in &self.dimensions {
            if !seen_dims.insert(dim.as_str()) {
                push(None, format!("duplicate dimension {dim:?}"));
            }
        }

        let mut seen_scales = HashSet::new();
        for scale in &self.scales {
            if !seen_scales.insert(scale.id.as_str()) {
                push(None, format!("duplicate scale id {:?}", scale.id));
            }
            if scale.min_score < 1 {
                push(
                    None,
                    format!("scale {:?}: min_score must be a positive integer", scale.id),
                );
            }
            let width = scale.max_score - scale.min_score + 1;
            if width < 1 || width as usize != scale.options.len() {
                push(
                    None,
                    format!(
                        "scale {:?}: {} options but score range {}..={}",
                        scale.id,
                        scale.options.len(),
                        scale.min_score,
                        scale.max_score
                    ),
                );
            }
            let mut labels = HashSet::new();
            for label in &scale.options {
                if !labels.insert(label.to_lowercase()) {
                    push(None, format!("scale {:?}: duplicate option {label:?}", scale.id));
                }
            }
        }

        let mut indices: Vec<u32> = self.items.iter().map(|i| i.index).collect();
        indices.sort_unstable();
        let mut unique = indices.clone();
        unique.dedup();
        if unique.len() != indices.len() {
            push(None, "duplicate item indices".into());
        } else if indices.iter().enumerate().any(|(pos, &idx)| idx as usize != pos + 1) {
            push(None, "non-contiguous indices (items must be numbered 1..=N)".into());
        }

        for item in &self.items {
            let at = Some(item.index);
            if item.text.is_empty() {
                push(at, "empty item text".into());
            }
            match (&item.dimension, item.attention_check) {
                (Some(_), true) => push(at, "attention-check item must not name a dimension".into()),
                (None, false) => push(at, "item names no dimension".into()),
                (Some(dim), false) if !seen_dims.contains(dim.as_str()) => {
                    push(at, format!("dimension {dim:?} is not in the dimension list"))
                }
                _ => {}
            }
            if !seen_scales.contains(item.scale_id.as_str()) {
                push(at, format!("unknown scale {:?}", item.scale_id));
            }
            if let Some(keyword) = &item.keyword {
                if keyword.is_empty() || keyword.chars().any(char::is_whitespace) {
                    push(at, format!("keyword {keyword:?} must be a single non-empty word"));
                } else {
                    match item.text.matches(keyword.as_str()).count() {
                        1 => {}
                        0 => push(at, format!("keyword {keyword:?} does not occur in item text")),
                        n => push(at, format!("keyword {keyword:?} occurs {n} times in item text")),
                    }
                }
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(InventoryError::Validation(violations))
        }
    }

    pub fn item(&self, index: u32) -> Option<&Item> {
        self.items
            .get(index.checked_sub(1)? as usize)
            .filter(|i| i.index == index)
    }

    pub fn scale(&self, id: &str) -> Option<&ResponseScale> {
        self.scales.iter().find(|s| s.id == id)
    }

    /// Scale of an item from a validated inventory.
    pub fn scale_of(&self, item: &Item) -> &ResponseScale {
        self.scale(&item.scale_id)
            .expect("validated inventory resolves every scale")
    }

    /// Items in index order. Validation guarantees `items` is sorted once
    /// loaded through [`Inventory::load`]; this does not rely on it.
    pub fn items_in_order(&self) -> Vec<&Item> {
        let mut items: Vec<&Item> = self.items.iter().collect();
        items.sort_by_key(|i| i.index);
        items
    }

    /// Mean length, in Unicode code points, of all item texts.
    pub fn mean_item_length(&self) -> f64 {
        let total: usize = self.items.iter().map(|i| i.text.chars().count()).sum();
        total as f64 / self.items.len() as f64
    }
}
