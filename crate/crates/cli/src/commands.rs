use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use fanout_core::advantage::{
    group_objective, normalize_group, rescore_rollouts, token_weights, GroupAdvantages, TokenTerm,
};
use fanout_core::buffer::{collect, BufferWriter};
use fanout_core::config::Provenance;
use fanout_core::datapipe::{filter_log, DatasetInstance, GenerationRecord};
use fanout_core::metrics::UniqueKey;
use fanout_core::orchestrator::{run_group, Rollout, RolloutEnv, Schedule};
use fanout_core::reward::{compute_reward, RewardBreakdown};
use fanout_core::tabletext::Table;
use fanout_core::tools::Index;
use serde::Serialize;

use crate::error::{CliError, Context};
use crate::evaluate::{evaluate as score_predictions, Prediction};
use crate::setup::{dataset, output, read_jsonl, read_rollouts, required, write_line, Setup};
use crate::Global;

fn summary(value: &impl Serialize) {
    eprintln!(
        "{}",
        serde_json::to_string(value).expect("summary serializes")
    );
}

#[derive(Serialize)]
struct IndexSummary<'a> {
    docs: usize,
    index: &'a Path,
    #[serde(flatten)]
    provenance: Provenance,
}

pub fn index(setup: &Setup, g: &Global) -> Result<(), CliError> {
    let corpus = match &g.corpus {
        Some(c) => c.clone(),
        None => setup
            .cfg
            .tools
            .corpus
            .as_ref()
            .map(|c| setup.cfg.resolve(c))
            .ok_or_else(|| CliError::new("usage", "--corpus is required"))?,
    };
    let out = required(&g.out, "--out")?;
    let index = Index::from_corpus_file(&corpus).ctx("tools", corpus.display())?;
    index.save(out).ctx("io", out.display())?;
    let prompts = setup.prompts()?;
    let provenance = setup.cfg.provenance(
        [(
            "tools".to_string(),
            fanout_core::tools::LOCAL_TOOLS_VERSION.to_string(),
        )]
        .into(),
        &prompts,
    );
    summary(&IndexSummary {
        docs: index.len(),
        index: out,
        provenance,
    });
    Ok(())
}

/// Reference table and key for every dataset query id.
struct Truth {
    by_query: BTreeMap<String, (Table, UniqueKey)>,
}

impl Truth {
    fn new(data: &[DatasetInstance]) -> Result<Self, CliError> {
        let mut by_query = BTreeMap::new();
        for (i, inst) in data.iter().enumerate() {
            let id = inst.query_id(i);
            let tk = inst
                .validate(i)
                .ctx("input", format!("dataset instance {id}"))?;
            by_query.insert(id, tk);
        }
        Ok(Self { by_query })
    }

    fn reward(&self, r: &Rollout, setup: &Setup) -> Result<RewardBreakdown, CliError> {
        let (gt, key) = self.by_query.get(&r.query_id).ok_or_else(|| {
            CliError::new(
                "input",
                format!("query id '{}' is not in the dataset", r.query_id),
            )
        })?;
        Ok(compute_reward(r, gt, key, &setup.cfg.reward))
    }
}

#[derive(Serialize, Default)]
struct RolloutSummary {
    rollouts: usize,
    samples: usize,
    statuses: BTreeMap<String, usize>,
    #[serde(flatten)]
    provenance: Provenance,
}

pub fn rollout(
    setup: &Setup,
    g: &Global,
    collect_to: Option<&Path>,
    timestamps: bool,
) -> Result<(), CliError> {
    let data = dataset(g)?;
    let truth = match collect_to {
        Some(_) => Some(Truth::new(&data)?),
        None => None,
    };
    let prompts = setup.prompts()?;
    let policy = setup.policy()?;
    let tools = setup.tools(g.corpus.as_deref())?;
    let provenance = setup.provenance(Some(tools.as_ref()), &prompts);
    let cfg = &setup.cfg;
    let env = RolloutEnv {
        policy: policy.as_ref(),
        tools: tools.as_ref(),
        prompts: &prompts,
        limits: cfg.limits,
        sampling: cfg.sampling,
        seed: cfg.seed,
        schedule: Schedule::Parallel,
        provenance: provenance.clone(),
        wall_clock: timestamps,
        observer: None,
    };
    let mut buffer = match collect_to {
        Some(p) => Some(BufferWriter::open(p).ctx("io", p.display())?),
        None => None,
    };
    let mut out = output(&g.out)?;
    let mut sum = RolloutSummary {
        provenance,
        ..Default::default()
    };
    for (i, inst) in data.iter().enumerate() {
        let group = run_group(
            &env,
            &inst.query_id(i),
            &inst.question,
            cfg.advantage.group_size,
        );
        for r in &group {
            writeln!(out, "{}", r.to_json_line()).ctx("io", "write trajectory")?;
            sum.rollouts += 1;
            let status = serde_json::to_value(r.outcome.status).expect("status serializes");
            *sum.statuses
                .entry(status.as_str().unwrap_or_default().to_string())
                .or_default() += 1;
            if let (Some(truth), Some(buf)) = (&truth, buffer.as_mut()) {
                let reward = truth.reward(r, setup)?;
                let samples = collect(r, &reward, &cfg.limits, &prompts, &cfg.repetition)
                    .ctx("buffer", r.id())?;
                buf.append(&samples).ctx("io", "buffer")?;
                sum.samples += samples.len();
            }
        }
    }
    out.flush().ctx("io", "flush output")?;
    summary(&sum);
    Ok(())
}

#[derive(Serialize)]
struct RewardLine<'a> {
    rollout_id: String,
    query_id: &'a str,
    rollout_index: u32,
    #[serde(flatten)]
    reward: RewardBreakdown,
    trajectory_config_hash: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

pub fn reward(setup: &Setup, g: &Global, trajectories: &Path) -> Result<(), CliError> {
    let truth = Truth::new(&dataset(g)?)?;
    let rollouts = read_rollouts(trajectories)?;
    let provenance = setup.provenance(None, &setup.prompts()?);
    let mut out = output(&g.out)?;
    for r in &rollouts {
        let line = RewardLine {
            rollout_id: r.id(),
            query_id: &r.query_id,
            rollout_index: r.rollout_index,
            reward: truth.reward(r, setup)?,
            trajectory_config_hash: &r.metadata.provenance.config_hash,
            provenance: &provenance,
        };
        write_line(out.as_mut(), &line)?;
    }
    out.flush().ctx("io", "flush output")
}

#[derive(Serialize)]
struct TokenLine<'a> {
    kind: &'static str,
    query_id: &'a str,
    rollout_id: String,
    #[serde(flatten)]
    term: &'a TokenTerm,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct GroupLine<'a> {
    kind: &'static str,
    query_id: &'a str,
    group_size: usize,
    rollout_ids: Vec<String>,
    #[serde(flatten)]
    advantages: &'a GroupAdvantages,
    objective: f64,
    clip_fraction: f64,
    weighted_tokens: usize,
    active_agents: Vec<usize>,
    dropped_agents: Vec<(usize, usize)>,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

/// Rollouts grouped by query id, in first-seen order, each group sorted by
/// rollout index.
fn group_by_query(rollouts: Vec<Rollout>) -> Vec<(String, Vec<Rollout>)> {
    let mut groups: Vec<(String, Vec<Rollout>)> = Vec::new();
    for r in rollouts {
        match groups.iter_mut().find(|(q, _)| *q == r.query_id) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.query_id.clone(), vec![r])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by_key(|r| r.rollout_index);
    }
    groups
}

fn missing_logprobs(group: &[Rollout]) -> bool {
    group
        .iter()
        .flat_map(|r| &r.agents)
        .flat_map(|a| &a.turns)
        .flat_map(|t| &t.tokens)
        .any(|t| t.logprob_new.is_none())
}

pub fn advantage(
    setup: &Setup,
    g: &Global,
    trajectories: &Path,
    rescore: bool,
) -> Result<(), CliError> {
    let truth = Truth::new(&dataset(g)?)?;
    let groups = group_by_query(read_rollouts(trajectories)?);
    let prompts = setup.prompts()?;
    let provenance = setup.provenance(None, &prompts);
    let needs_policy = rescore || groups.iter().any(|(_, grp)| missing_logprobs(grp));
    let policy = if needs_policy {
        Some(setup.policy().map_err(|e| {
            CliError::new(
                "advantage",
                format!(
                    "tokens lack logprob_new and no backend can re-score them: {}",
                    e.message
                ),
            )
        })?)
    } else {
        None
    };
    let mut out = output(&g.out)?;
    for (query_id, mut group) in groups {
        if let Some(p) = &policy {
            rescore_rollouts(&mut group, p.as_ref(), &prompts)
                .ctx("backend", format!("re-scoring {query_id}"))?;
        }
        let rewards = group
            .iter()
            .map(|r| truth.reward(r, setup).map(|b| b.total))
            .collect::<Result<Vec<_>, _>>()?;
        let adv = normalize_group(&rewards).ctx("advantage", &query_id)?;
        let weights = token_weights(&group).ctx("advantage", &query_id)?;
        let report = group_objective(&group, &adv, setup.cfg.advantage.clip())
            .ctx("advantage", &query_id)?;
        for term in &report.terms {
            let line = TokenLine {
                kind: "token",
                query_id: &query_id,
                rollout_id: group[term.rollout].id(),
                term,
                config_hash: &provenance.config_hash,
            };
            write_line(out.as_mut(), &line)?;
        }
        let line = GroupLine {
            kind: "group",
            query_id: &query_id,
            group_size: group.len(),
            rollout_ids: group.iter().map(Rollout::id).collect(),
            advantages: &adv,
            objective: report.objective,
            clip_fraction: report.clip_fraction,
            weighted_tokens: report.weighted_tokens,
            active_agents: weights.active_agents,
            dropped_agents: weights.dropped,
            provenance: &provenance,
        };
        write_line(out.as_mut(), &line)?;
    }
    out.flush().ctx("io", "flush output")
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    aggregate: crate::evaluate::Aggregate,
    per_instance: Vec<crate::evaluate::InstanceScores>,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

pub fn evaluate(setup: &Setup, g: &Global, predictions: &Path) -> Result<(), CliError> {
    let data = dataset(g)?;
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let (per_instance, aggregate) = score_predictions(&data, &preds)?;
    let provenance = setup.provenance(None, &setup.prompts()?);
    let mut out = output(&g.out)?;
    let report = EvaluationReport {
        aggregate,
        per_instance,
        provenance: &provenance,
    };
    serde_json::to_writer_pretty(&mut out, &report).ctx("io", "write report")?;
    writeln!(out).ctx("io", "write report")?;
    out.flush().ctx("io", "flush output")
}

pub fn filter(
    setup: &Setup,
    g: &Global,
    log: &Path,
    report_to: Option<&Path>,
) -> Result<(), CliError> {
    let records: Vec<GenerationRecord> = read_jsonl(log)?;
    let provenance = setup.provenance(None, &setup.prompts()?);
    let (kept, report) = filter_log(&records, &setup.cfg.pipeline, provenance);
    let mut out = output(&g.out)?;
    serde_json::to_writer_pretty(&mut out, &kept).ctx("io", "write dataset")?;
    writeln!(out).ctx("io", "write dataset")?;
    out.flush().ctx("io", "flush output")?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match report_to {
        Some(p) => std::fs::write(p, text + "\n").ctx("io", p.display()),
        None => {
            eprintln!("{text}");
            Ok(())
        }
    }
}
