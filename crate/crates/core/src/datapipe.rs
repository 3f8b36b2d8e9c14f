//! Dataset construction: query refinement and dual answer generation through
//! a policy backend, then deterministic consistency filtering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Provenance;
use crate::metrics::{consistency, UniqueKey};
use crate::orchestrator::AgentKind;
use crate::policy::{
    mix64, state_hash, GenerationRequest, Message, Policy, PolicyError, SamplingParams,
};
use crate::prompts::{ANSWER_GENERATION, QUERY_REFINE};
use crate::tabletext::{extract_answer_block, parse_table, ParseMode, Table, TableError};

pub const COLUMN_LIST_MARKER: &str = "The column names are as follows:";
pub const FORMAT_MANDATE: &str = "single markdown table";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub answer: String,
    pub unique_columns: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is not a JSON array of instances: {0}")]
    Json(#[from] serde_json::Error),
    #[error("instance {index}: answer is not a table: {source}")]
    BadAnswer { index: usize, source: TableError },
    #[error("instance {index}: {message}")]
    BadKey { index: usize, message: String },
}

impl DatasetInstance {
    /// The answer table, parsed leniently. Accepts bare tables and fenced ones.
    pub fn table(&self) -> Result<Table, TableError> {
        let md = extract_answer_block(&self.answer).unwrap_or(&self.answer);
        parse_table(md, ParseMode::Lenient)
    }

    pub fn key(&self, table: &Table) -> Result<UniqueKey, crate::metrics::MetricsError> {
        UniqueKey::new(&self.unique_columns, table)
    }

    /// Query id: the explicit id, else the position in the dataset.
    pub fn query_id(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("q{index:04}"))
    }

    pub fn validate(&self, index: usize) -> Result<(Table, UniqueKey), DatasetError> {
        let table = self
            .table()
            .map_err(|source| DatasetError::BadAnswer { index, source })?;
        let key = self.key(&table).map_err(|e| DatasetError::BadKey {
            index,
            message: e.to_string(),
        })?;
        if !key.is_distinct_in(&table) {
            return Err(DatasetError::BadKey {
                index,
                message: "key tuples are not distinct".into(),
            });
        }
        Ok((table, key))
    }
}

pub fn parse_dataset(json: &str) -> Result<Vec<DatasetInstance>, DatasetError> {
    let data: Vec<DatasetInstance> = serde_json::from_str(json)?;
    for (i, inst) in data.iter().enumerate() {
        inst.validate(i)?;
    }
    Ok(data)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetInstance>, DatasetError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub consistency_threshold: f64,
    pub min_rows: usize,
    pub row_count_range: [usize; 2],
    pub generator: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            consistency_threshold: 0.9,
            min_rows: 3,
            row_count_range: [10, 50],
            generator: "scripted".to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("pipeline config: {0}")]
pub struct PipelineConfigError(pub &'static str);

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineConfigError> {
        if !(self.consistency_threshold > 0.0 && self.consistency_threshold <= 1.0) {
            return Err(PipelineConfigError(
                "consistency_threshold must be in (0, 1]",
            ));
        }
        if self.min_rows == 0 {
            return Err(PipelineConfigError("min_rows must be at least 1"));
        }
        if self.row_count_range[0] > self.row_count_range[1] {
            return Err(PipelineConfigError(
                "row_count_range must be [low, high] with low <= high",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BackendUnavailable,
    ValidationFailure,
    Unparseable,
    InvalidKey,
    DuplicateKeys,
    LowConsistency,
    TooFewRows,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::BackendUnavailable => "backend_unavailable",
            DropReason::ValidationFailure => "validation_failure",
            DropReason::Unparseable => "unparseable",
            DropReason::InvalidKey => "invalid_key",
            DropReason::DuplicateKeys => "duplicate_keys",
            DropReason::LowConsistency => "low_consistency",
            DropReason::TooFewRows => "too_few_rows",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Keep { consistency: f64 },
    Drop { reason: DropReason },
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep { .. })
    }
}

/// Keeps a pair whose key is valid and distinct in both tables, whose
/// consistency reaches the threshold, and whose tables both have enough rows.
pub fn filter_pair<S: AsRef<str>>(
    a: &Table,
    b: &Table,
    key: &[S],
    cfg: &PipelineConfig,
) -> Verdict {
    let drop = |reason| Verdict::Drop { reason };
    let Ok(k) = UniqueKey::new(key, b) else {
        return drop(DropReason::InvalidKey);
    };
    if k.require_columns(a).is_err() {
        return drop(DropReason::InvalidKey);
    }
    if !k.is_distinct_in(a) || !k.is_distinct_in(b) {
        return drop(DropReason::DuplicateKeys);
    }
    let c = consistency(a, b, &k);
    if c < cfg.consistency_threshold {
        return drop(DropReason::LowConsistency);
    }
    if a.num_rows() < cfg.min_rows || b.num_rows() < cfg.min_rows {
        return drop(DropReason::TooFewRows);
    }
    Verdict::Keep { consistency: c }
}

#[derive(Debug, Error, PartialEq)]
pub enum StageError {
    #[error("target_rows {got} outside [{low}, {high}]")]
    TargetRowsOutOfRange { got: usize, low: usize, high: usize },
    #[error("refined query rejected: {0}")]
    ValidationFailure(String),
    #[error("response could not be parsed: {0}")]
    Unparseable(String),
    #[error(transparent)]
    Backend(#[from] PolicyError),
}

impl StageError {
    pub fn drop_reason(&self) -> DropReason {
        match self {
            StageError::TargetRowsOutOfRange { .. } | StageError::ValidationFailure(_) => {
                DropReason::ValidationFailure
            }
            StageError::Unparseable(_) => DropReason::Unparseable,
            StageError::Backend(_) => DropReason::BackendUnavailable,
        }
    }
}

/// Column names declared by a refined query.
pub fn validate_query(query: &str) -> Result<Vec<String>, StageError> {
    let fail = |m: &str| StageError::ValidationFailure(m.to_string());
    if !query.to_lowercase().contains(FORMAT_MANDATE) {
        return Err(fail("missing the single Markdown table mandate"));
    }
    if !query.contains("```markdown") {
        return Err(fail("missing the output format block"));
    }
    let after = query
        .split_once(COLUMN_LIST_MARKER)
        .ok_or_else(|| fail("missing the column list"))?
        .1;
    let line = after
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let columns: Vec<String> = line
        .split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if columns.is_empty() || line.starts_with("```") {
        return Err(fail("empty column list"));
    }
    Ok(columns)
}

fn one_shot(
    backend: &dyn Policy,
    prompt: String,
    task: &str,
    turn: u32,
    sample_key: u64,
) -> Result<String, PolicyError> {
    let messages = vec![Message::new("user", prompt)];
    let req = GenerationRequest {
        state_hash: state_hash(&messages),
        messages,
        sampling: SamplingParams::default(),
        role: AgentKind::Lead,
        turn,
        task_text: task.to_string(),
        sample_key,
    };
    Ok(backend.generate(&req)?.text)
}

/// Stage 1: refine an intent into a constrained question. One retry on a
/// query that fails validation.
pub fn generate_query(
    intent: &str,
    target_rows: usize,
    backend: &dyn Policy,
    cfg: &PipelineConfig,
    sample_key: u64,
) -> Result<String, StageError> {
    let [low, high] = cfg.row_count_range;
    if target_rows < low || target_rows > high {
        return Err(StageError::TargetRowsOutOfRange {
            got: target_rows,
            low,
            high,
        });
    }
    let prompt = QUERY_REFINE
        .replace("{intent}", intent)
        .replace("{target_rows}", &target_rows.to_string());
    let mut last = None;
    for attempt in 1..=2u32 {
        let text = one_shot(
            backend,
            prompt.clone(),
            intent,
            attempt,
            mix64(sample_key, u64::from(attempt)),
        )?;
        let text = text.trim().to_string();
        match validate_query(&text) {
            Ok(_) => return Ok(text),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("two attempts ran"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAnswers {
    pub raw_a: String,
    pub raw_b: String,
    pub a: Table,
    pub b: Table,
    pub unique_columns: Vec<String>,
}

/// JSON array inside `<unique_columns>` tags.
pub fn parse_unique_columns(text: &str) -> Option<Vec<String>> {
    let start = text.rfind("<unique_columns>")? + "<unique_columns>".len();
    let end = start + text[start..].find("</unique_columns>")?;
    let cols: Vec<String> = serde_json::from_str(text[start..end].trim()).ok()?;
    (!cols.is_empty()).then_some(cols)
}

fn parse_response(text: &str) -> Result<Table, StageError> {
    let block = extract_answer_block(text)
        .ok_or_else(|| StageError::Unparseable("no ```markdown block".into()))?;
    parse_table(block, ParseMode::Lenient).map_err(|e| StageError::Unparseable(e.to_string()))
}

/// Stage 2: two independent answers and the model's unique columns (taken
/// from the first answer that states them).
pub fn generate_answers(
    query: &str,
    backend: &dyn Policy,
    sample_key: u64,
) -> Result<GeneratedAnswers, StageError> {
    let (raw_a, raw_b) = sample_pair(query, backend, sample_key)?;
    answers_from_responses(raw_a, raw_b)
}

fn sample_pair(
    query: &str,
    backend: &dyn Policy,
    sample_key: u64,
) -> Result<(String, String), PolicyError> {
    let prompt = ANSWER_GENERATION.replace("{question}", query);
    let a = one_shot(backend, prompt.clone(), query, 1, mix64(sample_key, 1))?;
    let b = one_shot(backend, prompt, query, 1, mix64(sample_key, 2))?;
    Ok((a, b))
}

pub fn answers_from_responses(
    raw_a: String,
    raw_b: String,
) -> Result<GeneratedAnswers, StageError> {
    let a = parse_response(&raw_a)?;
    let b = parse_response(&raw_b)?;
    let unique_columns = parse_unique_columns(&raw_a)
        .or_else(|| parse_unique_columns(&raw_b))
        .ok_or_else(|| StageError::Unparseable("no unique columns".into()))?;
    Ok(GeneratedAnswers {
        raw_a,
        raw_b,
        a,
        b,
        unique_columns,
    })
}

/// One line of a generation log: a question and its two raw responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub response_a: String,
    pub response_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub total: usize,
    pub retained: usize,
    pub dropped: BTreeMap<String, usize>,
    pub retention_rate: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

impl PipelineReport {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            total: 0,
            retained: 0,
            dropped: BTreeMap::new(),
            retention_rate: 0.0,
            provenance,
        }
    }

    pub fn record(&mut self, verdict: &Verdict) {
        self.total += 1;
        match verdict {
            Verdict::Keep { .. } => self.retained += 1,
            Verdict::Drop { reason } => {
                *self.dropped.entry(reason.as_str().to_string()).or_default() += 1
            }
        }
        self.retention_rate = self.retained as f64 / self.total as f64;
    }

    /// Retained plus every drop equals the total.
    pub fn is_balanced(&self) -> bool {
        self.retained + self.dropped.values().sum::<usize>() == self.total
    }
}

/// Stage 3 for one logged record.
pub fn filter_record(
    rec: &GenerationRecord,
    cfg: &PipelineConfig,
) -> (Verdict, Option<DatasetInstance>) {
    let answers = match answers_from_responses(rec.response_a.clone(), rec.response_b.clone()) {
        Ok(a) => a,
        Err(e) => {
            return (
                Verdict::Drop {
                    reason: e.drop_reason(),
                },
                None,
            )
        }
    };
    let verdict = filter_pair(&answers.a, &answers.b, &answers.unique_columns, cfg);
    let instance = verdict.is_keep().then(|| DatasetInstance {
        id: rec.id.clone(),
        question: rec.question.clone(),
        answer: extract_answer_block(&answers.raw_a)
            .unwrap_or_default()
            .to_string(),
        unique_columns: answers.unique_columns,
    });
    (verdict, instance)
}

/// Stage 3 over a whole log, in log order.
pub fn filter_log(
    records: &[GenerationRecord],
    cfg: &PipelineConfig,
    provenance: Provenance,
) -> (Vec<DatasetInstance>, PipelineReport) {
    let mut report = PipelineReport::new(provenance);
    let mut kept = Vec::new();
    for rec in records {
        let (verdict, inst) = filter_record(rec, cfg);
        report.record(&verdict);
        kept.extend(inst);
    }
    (kept, report)
}

/// Stages 1 and 2 for one intent, producing a log record.
pub fn generate_record(
    intent: &str,
    target_rows: usize,
    backend: &dyn Policy,
    cfg: &PipelineConfig,
    sample_key: u64,
) -> Result<GenerationRecord, StageError> {
    let question = generate_query(intent, target_rows, backend, cfg, sample_key)?;
    let (response_a, response_b) = sample_pair(&question, backend, sample_key)?;
    Ok(GenerationRecord {
        id: None,
        question,
        response_a,
        response_b,
    })
}
