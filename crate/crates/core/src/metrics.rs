//! Contamination metrics.
//!
//! Lower AED and MAE, and higher keyword success and macro-F1, indicate a
//! model that knows more about an inventory. Metrics that cannot be computed
//! because every probe failed to parse are `None`, never zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::Inventory;
use crate::parsing::{normalize_keyword, ParsedAnswer};
use crate::prompts::ProbeTask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {left} references but {right} predictions")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least one item is required")]
    Empty,
}

fn check_lengths(left: usize, right: usize) -> Result<(), MetricError> {
    if left != right {
        return Err(MetricError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Levenshtein distance over Unicode code points.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let substitution = prev[j] + usize::from(lc != sc);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Mean edit distance between references and outputs, divided by the mean
/// code-point length of the references.
pub fn normalized_aed(items: &[&str], outputs: &[&str]) -> Result<f64, MetricError> {
    check_lengths(items.len(), outputs.len())?;
    let total: usize = items.iter().map(|i| i.chars().count()).sum();
    let mean_len = total as f64 / items.len() as f64;
    Ok(aed_with_mean_length(
        items.iter().copied().zip(outputs.iter().copied()),
        mean_len,
    ))
}

/// AED with the normalizing length fixed by the caller, used when only a
/// subset of an inventory's items produced outputs.
pub fn aed_with_mean_length<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>, mean_len: f64) -> f64 {
    let (sum, n) = pairs.into_iter().fold((0usize, 0usize), |(sum, n), (item, out)| {
        (sum + edit_distance(item, out), n + 1)
    });
    if n == 0 {
        return f64::NAN;
    }
    (sum as f64 / n as f64) / mean_len
}

/// Fraction of predictions whose normalized keyword equals the normalized
/// gold keyword. Parse failures are misses.
pub fn keyword_success_rate(golds: &[&str], preds: &[ParsedAnswer]) -> Result<f64, MetricError> {
    check_lengths(golds.len(), preds.len())?;
    let hits = golds
        .iter()
        .zip(preds)
        .filter(|(gold, pred)| {
            pred.keyword()
                .is_some_and(|k| normalize_keyword(k) == normalize_keyword(gold))
        })
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DimensionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl DimensionCounts {
    pub fn precision(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_positive;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_negative;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }

    /// Harmonic mean of precision and recall; 0 when either is undefined or
    /// both are zero.
    pub fn f1(&self) -> f64 {
        match (self.precision(), self.recall()) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        }
    }
}

/// Per-dimension confusion counts. A `None` prediction (unparseable output)
/// is a miss for the gold dimension and a hit for no dimension.
pub fn dimension_counts(
    golds: &[&str],
    preds: &[Option<&str>],
    dimensions: &[String],
) -> Result<Vec<DimensionCounts>, MetricError> {
    if golds.len() != preds.len() {
        return Err(MetricError::LengthMismatch {
            left: golds.len(),
            right: preds.len(),
        });
    }
    let mut counts = vec![DimensionCounts::default(); dimensions.len()];
    let slot = |label: &str| dimensions.iter().position(|d| d == label);
    for (gold, pred) in golds.iter().zip(preds) {
        let gold_slot = slot(gold);
        let pred_slot = pred.and_then(slot);
        if let (Some(g), true) = (gold_slot, gold_slot == pred_slot) {
            counts[g].true_positive += 1;
            continue;
        }
        if let Some(g) = gold_slot {
            counts[g].false_negative += 1;
        }
        if let Some(p) = pred_slot {
            counts[p].false_positive += 1;
        }
    }
    Ok(counts)
}

/// Macro-averaged F1 over all inventory dimensions.
pub fn dimension_f1(golds: &[&str], preds: &[Option<&str>], dimensions: &[String]) -> Result<f64, MetricError> {
    check_lengths(golds.len(), preds.len())?;
    if dimensions.is_empty() {
        return Err(MetricError::Empty);
    }
    let counts = dimension_counts(golds, preds, dimensions)?;
    Ok(counts.iter().map(DimensionCounts::f1).sum::<f64>() / dimensions.len() as f64)
}

/// A mean absolute error together with how many predictions it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeOutcome {
    /// `None` when every prediction was excluded.
    pub value: Option<f64>,
    pub scored: usize,
    pub excluded: usize,
}

/// MAE between gold and predicted option scores over every cell of every
/// item whose prediction parsed. `None` predictions are excluded.
pub fn option_score_mae(gold: &[Vec<i64>], preds: &[Option<&[i64]>]) -> Result<MaeOutcome, MetricError> {
    check_lengths(gold.len(), preds.len())?;
    let mut abs_sum = 0i64;
    let mut cells = 0usize;
    let mut scored = 0usize;
    for (row, pred) in gold.iter().zip(preds) {
        let Some(pred) = pred else { continue };
        if pred.len() != row.len() {
            return Err(MetricError::LengthMismatch {
                left: row.len(),
                right: pred.len(),
            });
        }
        abs_sum += row.iter().zip(pred.iter()).map(|(g, p)| (g - p).abs()).sum::<i64>();
        cells += row.len();
        scored += 1;
    }
    Ok(MaeOutcome {
        value: (cells > 0).then(|| abs_sum as f64 / cells as f64),
        scored,
        excluded: gold.len() - scored,
    })
}

/// MAE between target scores and the scores the chosen options achieve.
pub fn target_score_mae(targets: &[i64], achieved: &[Option<i64>]) -> Result<MaeOutcome, MetricError> {
    check_lengths(targets.len(), achieved.len())?;
    let diffs: Vec<i64> = targets
        .iter()
        .zip(achieved)
        .filter_map(|(t, a)| a.map(|a| (t - a).abs()))
        .collect();
    Ok(MaeOutcome {
        value: (!diffs.is_empty()).then(|| diffs.iter().sum::<i64>() as f64 / diffs.len() as f64),
        scored: diffs.len(),
        excluded: targets.len() - diffs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetCondition {
    Min,
    Mean,
    Max,
}

impl TargetCondition {
    pub const ALL: [TargetCondition; 3] = [TargetCondition::Min, TargetCondition::Mean, TargetCondition::Max];

    pub fn pick(self, targets: crate::inventory::ScaleTargets) -> i64 {
        match self {
            TargetCondition::Min => targets.min,
            TargetCondition::Mean => targets.mean,
            TargetCondition::Max => targets.max,
        }
    }
}

/// What came back for one probe.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutcome {
    Parsed(ParsedAnswer),
    TransportFailed,
}

/// Outcomes for one (model, inventory) pair, keyed by item index (and target
/// condition for target-score probes).
#[derive(Debug, Clone, Default)]
pub struct TaskResults {
    pub results: BTreeMap<ProbeTask, BTreeMap<(u32, Option<TargetCondition>), ProbeOutcome>>,
}

impl TaskResults {
    pub fn insert(&mut self, task: ProbeTask, item: u32, condition: Option<TargetCondition>, outcome: ProbeOutcome) {
        self.results.entry(task).or_default().insert((item, condition), outcome);
    }
}

pub type TaskCounts = BTreeMap<ProbeTask, usize>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionMae {
    pub min: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model_id: String,
    pub inventory_name: String,
    pub aed: Option<f64>,
    pub keyword_success_rate: Option<f64>,
    pub dimension_f1: Option<f64>,
    pub option_score_mae: Option<f64>,
    pub target_score_mae: Option<f64>,
    #[serde(default)]
    pub target_score_mae_by_condition: ConditionMae,
    #[serde(default)]
    pub parse_failures: TaskCounts,
    #[serde(default)]
    pub transport_failures: TaskCounts,
    #[serde(default)]
    pub n_items_scored: TaskCounts,
}

impl MetricSummary {
    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.aed,
            self.keyword_success_rate,
            self.dimension_f1,
            self.option_score_mae,
            self.target_score_mae,
        ]
    }
}

/// Assembles the five metrics for one model on one inventory.
///
/// Transport failures are excluded from every metric. Parse failures count
/// as misses for keyword success, as an empty prediction for macro-F1, and
/// are excluded from both MAEs.
pub fn summarize(model_id: &str, inventory: &Inventory, results: &TaskResults) -> MetricSummary {
    let mut summary = MetricSummary {
        model_id: model_id.to_string(),
        inventory_name: inventory.name.clone(),
        aed: None,
        keyword_success_rate: None,
        dimension_f1: None,
        option_score_mae: None,
        target_score_mae: None,
        target_score_mae_by_condition: ConditionMae::default(),
        parse_failures: TaskCounts::new(),
        transport_failures: TaskCounts::new(),
        n_items_scored: TaskCounts::new(),
    };

    for (&task, outcomes) in &results.results {
        let mut parsed = Vec::new();
        let mut transport = 0;
        let mut failures = 0;
        for (&(index, condition), outcome) in outcomes {
            let Some(item) = inventory.item(index) else { continue };
            match outcome {
                ProbeOutcome::TransportFailed => transport += 1,
                ProbeOutcome::Parsed(answer) => {
                    failures += usize::from(answer.parse_failed);
                    parsed.push((item, condition, answer));
                }
            }
        }
        summary.parse_failures.insert(task, failures);
        summary.transport_failures.insert(task, transport);

        let scored = match task {
            ProbeTask::VerbatimMemorization => {
                let pairs: Vec<(&str, &str)> = parsed
                    .iter()
                    .map(|(item, _, a)| (item.text.as_str(), a.item_text().unwrap_or("")))
                    .collect();
                if !pairs.is_empty() {
                    summary.aed = Some(aed_with_mean_length(
                        pairs.iter().copied(),
                        inventory.mean_item_length(),
                    ));
                }
                pairs.len()
            }
            ProbeTask::KeywordMemorization => {
                let with_gold: Vec<(&str, ParsedAnswer)> = parsed
                    .iter()
                    .filter_map(|(item, _, a)| item.keyword.as_deref().map(|k| (k, (*a).clone())))
                    .collect();
                let golds: Vec<&str> = with_gold.iter().map(|(k, _)| *k).collect();
                let preds: Vec<ParsedAnswer> = with_gold.into_iter().map(|(_, a)| a).collect();
                summary.keyword_success_rate = keyword_success_rate(&golds, &preds).ok();
                golds.len()
            }
            ProbeTask::ItemDimensionMapping => {
                let rows: Vec<(&str, Option<&str>)> = parsed
                    .iter()
                    .filter_map(|(item, _, a)| item.dimension.as_deref().map(|d| (d, a.dimension())))
                    .collect();
                let golds: Vec<&str> = rows.iter().map(|r| r.0).collect();
                let preds: Vec<Option<&str>> = rows.iter().map(|r| r.1).collect();
                summary.dimension_f1 = dimension_f1(&golds, &preds, &inventory.dimensions).ok();
                golds.len()
            }
            ProbeTask::OptionScoreMapping => {
                let rows: Vec<_> = parsed.iter().filter(|(item, _, _)| item.is_scored()).collect();
                let gold: Vec<Vec<i64>> = rows
                    .iter()
                    .map(|(item, _, _)| item.score_row(inventory.scale_of(item)))
                    .collect();
                let preds: Vec<Option<&[i64]>> = rows
                    .iter()
                    .zip(&gold)
                    .map(|((_, _, a), g)| a.score_list().filter(|s| s.len() == g.len()))
                    .collect();
                match option_score_mae(&gold, &preds) {
                    Ok(mae) => {
                        summary.option_score_mae = mae.value;
                        mae.scored
                    }
                    Err(_) => 0,
                }
            }
            ProbeTask::TargetScoreMatching => {
                let mut all = (Vec::new(), Vec::new());
                let mut by_condition: BTreeMap<TargetCondition, (Vec<i64>, Vec<Option<i64>>)> = BTreeMap::new();
                for (item, condition, answer) in parsed.iter().filter(|(item, _, _)| item.is_scored()) {
                    let Some(condition) = condition else { continue };
                    let scale = inventory.scale_of(item);
                    let target = condition.pick(scale.targets());
                    let achieved = answer
                        .option_choice()
                        .and_then(|rank| item.option_score(scale, rank).ok());
                    all.0.push(target);
                    all.1.push(achieved);
                    let entry = by_condition.entry(*condition).or_default();
                    entry.0.push(target);
                    entry.1.push(achieved);
                }
                let per = |c: TargetCondition| {
                    by_condition
                        .get(&c)
                        .and_then(|(t, a)| target_score_mae(t, a).ok())
                        .and_then(|m| m.value)
                };
                summary.target_score_mae_by_condition = ConditionMae {
                    min: per(TargetCondition::Min),
                    mean: per(TargetCondition::Mean),
                    max: per(TargetCondition::Max),
                };
                match target_score_mae(&all.0, &all.1) {
                    Ok(mae) => {
                        summary.target_score_mae = mae.value;
                        mae.scored
                    }
                    Err(_) => 0,
                }
            }
        };
        summary.n_items_scored.insert(task, scored);
    }
    summary
}

/// Unweighted mean of the values that are defined; `None` if none are.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Column-wise unweighted mean of several summaries' five metrics.
pub fn average_metrics<'a>(summaries: impl IntoIterator<Item = &'a MetricSummary>) -> [Option<f64>; 5] {
    let rows: Vec<[Option<f64>; 5]> = summaries.into_iter().map(MetricSummary::values).collect();
    std::array::from_fn(|col| mean_defined(rows.iter().map(|r| r[col])))
}
