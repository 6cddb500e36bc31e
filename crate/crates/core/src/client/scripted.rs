use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use async_trait::async_trait;

use super::{Backend, CacheKey, ClientError, ModelSpec, Probe};
use crate::inventory::{Inventory, Item};
use crate::prompts::ProbeTask;

pub const REFUSAL: &str = "I can't reproduce that content.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Answers every probe from ground truth.
    Oracle,
    /// Like `Oracle`, but scores every item as if none were reverse-coded.
    ScaleNaive,
    /// Always returns [`REFUSAL`].
    Refuser,
    /// Returns the prompt unchanged.
    Echo,
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "oracle" => Ok(Behavior::Oracle),
            "scale_naive" | "naive" => Ok(Behavior::ScaleNaive),
            "refuser" => Ok(Behavior::Refuser),
            "echo" => Ok(Behavior::Echo),
            other => Err(format!(
                "unknown scripted behavior {other:?} (expected oracle, scale_naive, refuser or echo)"
            )),
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Behavior::Oracle => "oracle",
            Behavior::ScaleNaive => "scale_naive",
            Behavior::Refuser => "refuser",
            Behavior::Echo => "echo",
        })
    }
}

/// Deterministic test double that answers from the inventories it holds.
pub struct ScriptedBackend {
    behavior: Behavior,
    inventories: HashMap<String, Arc<Inventory>>,
}

impl ScriptedBackend {
    pub fn new(behavior: Behavior, inventories: impl IntoIterator<Item = Arc<Inventory>>) -> Self {
        ScriptedBackend {
            behavior,
            inventories: inventories.into_iter().map(|i| (i.name.clone(), i)).collect(),
        }
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    fn lookup(&self, probe: &Probe<'_>) -> Result<(&Inventory, &Item), ClientError> {
        let inventory = self
            .inventories
            .get(probe.inventory_name)
            .ok_or_else(|| ClientError::Scripted(format!("unknown inventory {:?}", probe.inventory_name)))?;
        let item = inventory
            .item(probe.item_index)
            .ok_or_else(|| ClientError::Scripted(format!("{} has no item {}", inventory.name, probe.item_index)))?;
        Ok((inventory, item))
    }

    /// The answer a model with perfect (or reverse-coding-blind) knowledge
    /// of the inventory would give.
    pub fn answer(&self, probe: &Probe<'_>) -> Result<String, ClientError> {
        let naive = match self.behavior {
            Behavior::Refuser => return Ok(REFUSAL.to_string()),
            Behavior::Echo => return Ok(probe.prompt.to_string()),
            Behavior::Oracle => false,
            Behavior::ScaleNaive => true,
        };
        let (inventory, item) = self.lookup(probe)?;
        let scale = inventory.scale_of(item);
        let believed = if naive {
            Item {
                reverse_coded: false,
                ..item.clone()
            }
        } else {
            item.clone()
        };
        let missing = |what: &str| ClientError::Scripted(format!("item {} has no {what}", item.index));
        let text = match probe.task {
            ProbeTask::VerbatimMemorization => item.text.clone(),
            ProbeTask::KeywordMemorization => item.keyword.clone().ok_or_else(|| missing("keyword"))?,
            ProbeTask::ItemDimensionMapping => item.dimension.clone().ok_or_else(|| missing("dimension"))?,
            ProbeTask::OptionScoreMapping => believed
                .score_row(scale)
                .iter()
                .map(i64::to_string)
                .collect::<Vec<_>>()
                .join(", "),
            ProbeTask::TargetScoreMatching => {
                let target = probe.target_score.ok_or_else(|| missing("target score"))?;
                let rank = believed
                    .rank_for_score(scale, target)
                    .ok_or_else(|| ClientError::Scripted(format!("target {target} is outside scale {}", scale.id)))?;
                scale.options[rank - 1].clone()
            }
        };
        Ok(text)
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn complete(&self, _model: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError> {
        self.answer(probe)
    }
}

/// Replays responses keyed by [`CacheKey`] digest.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    responses: HashMap<String, String>,
}

impl FixtureBackend {
    pub fn new(responses: HashMap<String, String>) -> Self {
        FixtureBackend { responses }
    }

    /// Reads a JSON object mapping digests to response text.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let bytes = std::fs::read(path)?;
        let responses =
            serde_json::from_slice(&bytes).map_err(|e| ClientError::Scripted(format!("fixture file: {e}")))?;
        Ok(Self::new(responses))
    }
}

#[async_trait]
impl Backend for FixtureBackend {
    async fn complete(&self, model: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError> {
        let key = CacheKey::for_probe(model, probe);
        self.responses
            .get(&key.digest)
            .cloned()
            .ok_or(ClientError::FixtureMiss(key.digest))
    }
}
