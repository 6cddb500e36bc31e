//! Planning, executing and scoring probe runs.
//!
//! A run expands models × inventories × tasks × items (× target conditions)
//! into probe descriptors, sends each through its model's backend and
//! appends one [`ProbeRecord`] per probe to `run_log.jsonl` in the output
//! directory. Re-running the same plan skips probes that already have a
//! successful record, so an interrupted run picks up where it stopped.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::{prompt_digest, BackendSet, ModelSpec, Probe};
use crate::inventory::{Inventory, InventoryError};
use crate::metrics::{summarize, MetricSummary, ProbeOutcome, TargetCondition, TaskResults};
use crate::parsing::{parse, ParsedAnswer};
use crate::prompts::{render_prompt, ProbeTask, PromptContext, RenderError};

pub const RUN_LOG: &str = "run_log.jsonl";
pub const RUN_META: &str = "run_meta.json";
pub const RUN_CONFIG: &str = "run_config.json";
pub const SUMMARIES: &str = "summaries.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed run log {path} line {line}: {message}")]
    Log {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no probe records to score")]
    EmptyLog,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Maps a model-id prefix to a family heading in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyRule {
    pub prefix: String,
    pub family: String,
}

pub fn default_families() -> Vec<FamilyRule> {
    [
        ("gpt-", "OpenAI"),
        ("qwen", "Qwen3"),
        ("glm-", "GLM"),
        ("gemini-", "Gemini"),
        ("claude-", "Claude"),
        ("llama-", "Llama"),
    ]
    .into_iter()
    .map(|(prefix, family)| FamilyRule {
        prefix: prefix.into(),
        family: family.into(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Defaults to a digest of the models, inventories and tasks, so the
    /// same configuration resumes the same run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub models: Vec<ModelSpec>,
    pub inventory_paths: Vec<PathBuf>,
    #[serde(default = "all_tasks")]
    pub tasks: Vec<ProbeTask>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// `scripted:<behavior>`, `fixture:<path>` or `live[:<base-url>]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default = "default_families")]
    pub families: Vec<FamilyRule>,
}

fn all_tasks() -> Vec<ProbeTask> {
    ProbeTask::ALL.to_vec()
}

fn default_concurrency() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("psychoprobe-out")
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".psychoprobe-cache")
}

impl RunConfig {
    pub fn new(models: Vec<ModelSpec>, inventory_paths: Vec<PathBuf>) -> Self {
        RunConfig {
            run_id: None,
            models,
            inventory_paths,
            tasks: all_tasks(),
            concurrency: default_concurrency(),
            output_dir: default_output_dir(),
            cache_dir: default_cache_dir(),
            backend: None,
            families: default_families(),
        }
    }

    /// Reads a JSON config. Relative paths written in the file are resolved
    /// against the config file's directory; defaulted output and cache
    /// directories stay relative to the working directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(io_err(path))?;
        let config_err = |e: serde_json::Error| RunError::Config(format!("{}: {e}", path.display()));
        let raw: serde_json::Value = serde_json::from_slice(&bytes).map_err(config_err)?;
        let given = |key: &str| raw.get(key).is_some();
        let (has_out, has_cache) = (given("output_dir"), given("cache_dir"));
        let mut config: RunConfig = serde_json::from_value(raw).map_err(config_err)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.inventory_paths.iter_mut().for_each(resolve);
        if has_out {
            resolve(&mut config.output_dir);
        }
        if has_cache {
            resolve(&mut config.cache_dir);
        }
        if let Some(fixture) = config.backend.as_deref().and_then(|b| b.strip_prefix("fixture:")) {
            let mut p = PathBuf::from(fixture);
            resolve(&mut p);
            config.backend = Some(format!("fixture:{}", p.display()));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.tasks.is_empty() {
            return Err(RunError::Config("at least one task is required".into()));
        }
        if self.concurrency == 0 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(RunError::Config("at least one model is required".into()));
        }
        if self.inventory_paths.is_empty() {
            return Err(RunError::Config("at least one inventory is required".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if !seen.insert(m.model_id.as_str()) {
                return Err(RunError::Config(format!("model {:?} listed twice", m.model_id)));
            }
        }
        Ok(())
    }

    pub fn load_inventories(&self) -> Result<Vec<Arc<Inventory>>, RunError> {
        let inventories: Vec<Arc<Inventory>> = self
            .inventory_paths
            .iter()
            .map(|p| Inventory::load(p).map(Arc::new))
            .collect::<Result<_, _>>()?;
        let mut names = HashSet::new();
        for inv in &inventories {
            if !names.insert(inv.name.as_str()) {
                return Err(RunError::Config(format!("inventory name {:?} loaded twice", inv.name)));
            }
        }
        Ok(inventories)
    }

    pub fn resolved_run_id(&self, inventories: &[Arc<Inventory>]) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let mut hasher = Sha256::new();
        for m in &self.models {
            hasher.update(format!("model:{}:{:?}\n", m.model_id, m.temperature));
        }
        for inv in inventories {
            hasher.update(format!("inventory:{}\n", inv.name));
        }
        for t in &self.tasks {
            hasher.update(format!("task:{t}\n"));
        }
        hex::encode(&hasher.finalize()[..6])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeDescriptor {
    pub model_id: String,
    pub inventory_name: String,
    pub task: ProbeTask,
    pub item_index: u32,
    pub target_condition: Option<TargetCondition>,
}

/// Every probe the configuration calls for, in model, inventory, task, item
/// and condition order. Attention-check items are only planned for the two
/// item-memorization tasks; target-score probes expand to min, mean and max.
pub fn plan_run(config: &RunConfig, inventories: &[Arc<Inventory>]) -> Result<Vec<ProbeDescriptor>, RunError> {
    config.validate()?;
    let mut tasks = config.tasks.clone();
    tasks.sort();
    tasks.dedup();
    let mut plan = Vec::new();
    for model in &config.models {
        for inventory in inventories {
            for &task in &tasks {
                for item in inventory.items_in_order() {
                    if !item.is_scored() && !task.includes_attention_checks() {
                        continue;
                    }
                    if task == ProbeTask::KeywordMemorization && item.keyword.is_none() {
                        continue;
                    }
                    let conditions: &[Option<TargetCondition>] = if task == ProbeTask::TargetScoreMatching {
                        &[
                            Some(TargetCondition::Min),
                            Some(TargetCondition::Mean),
                            Some(TargetCondition::Max),
                        ]
                    } else {
                        &[None]
                    };
                    for &target_condition in conditions {
                        plan.push(ProbeDescriptor {
                            model_id: model.model_id.clone(),
                            inventory_name: inventory.name.clone(),
                            task,
                            item_index: item.index,
                            target_condition,
                        });
                    }
                }
            }
        }
    }
    if plan.is_empty() {
        return Err(RunError::Config("the run plan is empty".into()));
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub run_id: String,
    pub timestamp: String,
    pub model_id: String,
    pub inventory_name: String,
    pub task: ProbeTask,
    pub item_index: u32,
    pub target_condition: Option<TargetCondition>,
    pub prompt_digest: String,
    pub raw_response: Option<String>,
    pub parsed: Option<ParsedAnswer>,
    pub transport_error: Option<String>,
}

impl ProbeRecord {
    pub fn descriptor(&self) -> ProbeDescriptor {
        ProbeDescriptor {
            model_id: self.model_id.clone(),
            inventory_name: self.inventory_name.clone(),
            task: self.task,
            item_index: self.item_index,
            target_condition: self.target_condition,
        }
    }

    pub fn outcome(&self) -> ProbeOutcome {
        match (&self.parsed, &self.transport_error) {
            (Some(parsed), None) => ProbeOutcome::Parsed(parsed.clone()),
            _ => ProbeOutcome::TransportFailed,
        }
    }
}

/// Reads a JSONL run log. A torn final line (from an interrupted write) is
/// ignored; a malformed line anywhere else is an error.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<ProbeRecord>, RunError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let mut records = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(record) => records.push(record),
            Err(_) if n + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), "ignoring torn final log line");
            }
            Err(e) => {
                return Err(RunError::Log {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub planned: usize,
    pub skipped: usize,
    pub new_records: usize,
    pub transport_errors: usize,
    pub parse_failures: usize,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    run_id: &'a str,
    started_at: String,
    finished_at: String,
    outcome: &'a RunOutcome,
}

pub struct Runner {
    config: RunConfig,
    inventories: Vec<Arc<Inventory>>,
    backends: BackendSet,
}

impl Runner {
    pub fn new(config: RunConfig, inventories: Vec<Arc<Inventory>>, backends: BackendSet) -> Self {
        Runner {
            config,
            inventories,
            backends,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn inventories(&self) -> &[Arc<Inventory>] {
        &self.inventories
    }

    pub fn plan(&self) -> Result<Vec<ProbeDescriptor>, RunError> {
        plan_run(&self.config, &self.inventories)
    }

    pub fn log_path(&self) -> PathBuf {
        self.config.output_dir.join(RUN_LOG)
    }

    fn inventory(&self, name: &str) -> Option<&Arc<Inventory>> {
        self.inventories.iter().find(|i| i.name == name)
    }

    /// Probes every descriptor that has no successful record yet and appends
    /// the new records to the run log in plan order.
    pub async fn execute(&self, plan: &[ProbeDescriptor]) -> Result<RunOutcome, RunError> {
        let started_at = now();
        let out_dir = &self.config.output_dir;
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let run_id = self.config.resolved_run_id(&self.inventories);
        self.write_resolved_config(&run_id)?;

        let log_path = self.log_path();
        let done: HashSet<ProbeDescriptor> = read_log(&log_path)?
            .into_iter()
            .filter(|r| r.run_id == run_id && r.transport_error.is_none())
            .map(|r| r.descriptor())
            .collect();

        let mut queued = HashSet::new();
        let pending: Vec<&ProbeDescriptor> = plan
            .iter()
            .filter(|d| !done.contains(*d) && queued.insert(*d))
            .collect();

        let mut outcome = RunOutcome {
            run_id: run_id.clone(),
            planned: plan.len(),
            skipped: plan.len() - pending.len(),
            new_records: 0,
            transport_errors: 0,
            parse_failures: 0,
        };

        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let concurrency = self.config.concurrency.max(1);
        let mut records = stream::iter(pending)
            .map(|d| self.probe(&run_id, d))
            .buffered(concurrency);
        while let Some(record) = records.next().await {
            let record = record?;
            outcome.new_records += 1;
            outcome.transport_errors += usize::from(record.transport_error.is_some());
            outcome.parse_failures += usize::from(record.parsed.as_ref().is_some_and(|p| p.parse_failed));
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(io_err(&log_path))?;
            log.flush().map_err(io_err(&log_path))?;
        }

        let meta = RunMeta {
            run_id: &run_id,
            started_at,
            finished_at: now(),
            outcome: &outcome,
        };
        write_json(&out_dir.join(RUN_META), &meta)?;
        Ok(outcome)
    }

    async fn probe(&self, run_id: &str, d: &ProbeDescriptor) -> Result<ProbeRecord, RunError> {
        let inventory = self
            .inventory(&d.inventory_name)
            .ok_or_else(|| RunError::Config(format!("unknown inventory {:?}", d.inventory_name)))?;
        let item = inventory
            .item(d.item_index)
            .ok_or_else(|| RunError::Config(format!("{} has no item {}", inventory.name, d.item_index)))?;
        let model = self
            .config
            .models
            .iter()
            .find(|m| m.model_id == d.model_id)
            .ok_or_else(|| RunError::Config(format!("unknown model {:?}", d.model_id)))?;
        let target_score = d.target_condition.map(|c| c.pick(inventory.scale_of(item).targets()));
        let ctx = PromptContext::for_item(inventory, item, target_score);
        let prompt = render_prompt(d.task, &ctx)?;

        let mut record = ProbeRecord {
            run_id: run_id.to_string(),
            timestamp: now(),
            model_id: d.model_id.clone(),
            inventory_name: d.inventory_name.clone(),
            task: d.task,
            item_index: d.item_index,
            target_condition: d.target_condition,
            prompt_digest: prompt_digest(&prompt),
            raw_response: None,
            parsed: None,
            transport_error: None,
        };
        let probe = Probe {
            task: d.task,
            prompt: &prompt,
            inventory_name: &inventory.name,
            item_index: item.index,
            target_score,
        };
        let response = match self.backends.resolve(&model.model_id) {
            Ok(backend) => backend.complete(model, &probe).await,
            Err(e) => Err(e),
        };
        match response {
            Ok(raw) => {
                record.parsed = Some(parse(d.task, &raw, &ctx));
                record.raw_response = Some(raw);
            }
            Err(e) => {
                tracing::warn!(model = %d.model_id, item = d.item_index, task = %d.task, error = %e, "probe failed");
                record.transport_error = Some(e.to_string());
            }
        }
        Ok(record)
    }

    fn write_resolved_config(&self, run_id: &str) -> Result<(), RunError> {
        let mut config = self.config.clone();
        config.run_id = Some(run_id.to_string());
        for p in config.inventory_paths.iter_mut() {
            if let Ok(abs) = fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        write_json(&self.config.output_dir.join(RUN_CONFIG), &config)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Computes one [`MetricSummary`] per (model, inventory) pair found in the
/// records, in order of first appearance. When a probe was recorded more
/// than once (a retried transport failure), the last record wins.
pub fn score_records(records: &[ProbeRecord], inventories: &[Arc<Inventory>]) -> Result<Vec<MetricSummary>, RunError> {
    if records.is_empty() {
        return Err(RunError::EmptyLog);
    }
    let mut latest: IndexMap<ProbeDescriptor, &ProbeRecord> = IndexMap::new();
    for record in records {
        latest.insert(record.descriptor(), record);
    }
    let mut groups: IndexMap<(String, String), TaskResults> = IndexMap::new();
    for (d, record) in &latest {
        groups
            .entry((d.model_id.clone(), d.inventory_name.clone()))
            .or_default()
            .insert(d.task, d.item_index, d.target_condition, record.outcome());
    }
    groups
        .iter()
        .map(|((model_id, inventory_name), results)| {
            let inventory = inventories
                .iter()
                .find(|i| &i.name == inventory_name)
                .ok_or_else(|| RunError::Config(format!("log references unknown inventory {inventory_name:?}")))?;
            Ok(summarize(model_id, inventory, results))
        })
        .collect()
}

/// Scores the log in `out_dir` and writes `summaries.json` next to it.
pub fn score_run(out_dir: &Path, inventories: &[Arc<Inventory>]) -> Result<Vec<MetricSummary>, RunError> {
    let records = read_log(out_dir.join(RUN_LOG))?;
    let summaries = score_records(&records, inventories)?;
    write_json(&out_dir.join(SUMMARIES), &summaries)?;
    Ok(summaries)
}

pub fn read_summaries(path: &Path) -> Result<Vec<MetricSummary>, RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let config: RunConfig =
            serde_json::from_str(r#"{"models": [{"model_id": "oracle"}], "inventory_paths": ["toy.json"]}"#).unwrap();
        assert_eq!(config.tasks, ProbeTask::ALL.to_vec());
        assert_eq!(config.concurrency, 4);
        assert_eq!(config.models[0].temperature, 0.0);
        assert_eq!(config.families.len(), 6);
        config.validate().unwrap();
    }

    #[test]
    fn config_rejects_empty_tasks_and_zero_concurrency() {
        let mut config = RunConfig::new(vec![ModelSpec::new("m")], vec!["x".into()]);
        config.tasks.clear();
        assert!(matches!(config.validate(), Err(RunError::Config(m)) if m.contains("task")));
        config.tasks = vec![ProbeTask::VerbatimMemorization];
        config.concurrency = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn torn_final_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RUN_LOG);
        let record = ProbeRecord {
            run_id: "r".into(),
            timestamp: "t".into(),
            model_id: "m".into(),
            inventory_name: "Toy".into(),
            task: ProbeTask::VerbatimMemorization,
            item_index: 1,
            target_condition: None,
            prompt_digest: "d".into(),
            raw_response: Some("x".into()),
            parsed: None,
            transport_error: None,
        };
        let line = serde_json::to_string(&record).unwrap();
        fs::write(&path, format!("{line}\n{{\"run_id\": \"r\", \"time")).unwrap();
        assert_eq!(read_log(&path).unwrap(), vec![record]);
        fs::write(&path, format!("garbage\n{line}\n")).unwrap();
        assert!(matches!(read_log(&path), Err(RunError::Log { line: 1, .. })));
        assert!(read_log(dir.path().join("absent.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn empty_log_cannot_be_scored() {
        assert!(matches!(score_records(&[], &[]), Err(RunError::EmptyLog)));
    }
}
