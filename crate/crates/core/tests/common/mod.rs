#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Mutex;

use fanout_core::buffer::{collect, BufferError, InclusionReason, TrainingSample};
use fanout_core::config::{Provenance, RunConfig};
use fanout_core::datapipe::{load_dataset, DatasetInstance};
use fanout_core::metrics::UniqueKey;
use fanout_core::orchestrator::{
    run_rollout, AgentKind, Rollout, RolloutEnv, RolloutEvent, RolloutObserver, Schedule,
};
use fanout_core::policy::{Script, ScriptEntry, ScriptedPolicy};
use fanout_core::prompts::PromptSet;
use fanout_core::reward::{compute_reward, RewardBreakdown};
use fanout_core::tabletext::{parse_table, ParseMode};
use fanout_core::tools::{Index, LocalTools, ToolBackend, ToolParams};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub struct Harness {
    pub cfg: RunConfig,
    pub policy: ScriptedPolicy,
    pub tools: LocalTools,
    pub prompts: PromptSet,
    pub tasks: Vec<DatasetInstance>,
    pub provenance: Provenance,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_script(Script::load(&fixture("script.json")).expect("fixture script"))
    }

    pub fn with_script(script: Script) -> Self {
        let cfg = RunConfig::default();
        let index = Index::from_corpus_file(&fixture("corpus.jsonl")).expect("fixture corpus");
        let tools = LocalTools::new(index, ToolParams::default());
        let prompts = PromptSet::default();
        let provenance = cfg.provenance(
            [("tools".to_string(), tools.version())]
                .into_iter()
                .collect(),
            &prompts,
        );
        Self {
            policy: ScriptedPolicy::new(script),
            tools,
            prompts,
            tasks: load_dataset(&fixture("tasks.json")).expect("fixture tasks"),
            provenance,
            cfg,
        }
    }

    pub fn env<'a>(
        &'a self,
        schedule: Schedule,
        observer: Option<&'a dyn RolloutObserver>,
    ) -> RolloutEnv<'a> {
        RolloutEnv {
            policy: &self.policy,
            tools: &self.tools,
            prompts: &self.prompts,
            limits: self.cfg.limits,
            sampling: self.cfg.sampling,
            seed: self.cfg.seed,
            schedule,
            provenance: self.provenance.clone(),
            wall_clock: false,
            observer,
        }
    }
}

#[derive(Default)]
pub struct Recorder(pub Mutex<Vec<RolloutEvent>>);

impl RolloutObserver for Recorder {
    fn observe(&self, event: RolloutEvent) {
        self.0.lock().unwrap().push(event);
    }
}

impl Recorder {
    pub fn events(&self) -> Vec<RolloutEvent> {
        self.0.lock().unwrap().clone()
    }
}

/// Every subagent spawned at lead turn `t` is terminal before the lead's
/// turn `t + 1` state is built.
pub fn barrier_holds(events: &[RolloutEvent]) -> Result<(), String> {
    let mut pending: Vec<(usize, u32)> = Vec::new();
    for e in events {
        match e {
            RolloutEvent::SubagentSpawned {
                agent_index,
                parent_turn,
            } => pending.push((*agent_index, *parent_turn)),
            RolloutEvent::SubagentTerminal { agent_index, .. } => {
                pending.retain(|(a, _)| a != agent_index)
            }
            RolloutEvent::LeadStateBuilt { turn } => {
                if let Some((a, p)) = pending.iter().find(|(_, p)| *p < *turn) {
                    return Err(format!(
                        "lead turn {turn} state built while agent {a} (spawned at {p}) ran"
                    ));
                }
            }
            RolloutEvent::ToolCallsStarted { .. } => {}
        }
    }
    Ok(())
}

/// Structural invariants of a finished rollout.
pub fn check_rollout(r: &Rollout, h: &Harness) -> Result<(), String> {
    let limits = &h.cfg.limits;
    let lead = r.lead();
    if lead.agent_index != 0 || r.agents.iter().skip(1).any(|a| a.parent_turn.is_none()) {
        return Err("agent indexing".into());
    }
    if lead.turns.len() > limits.max_lead_turns as usize {
        return Err("lead turn limit exceeded".into());
    }
    for (k, a) in r.subagents().iter().enumerate() {
        if a.agent_index != k + 1 {
            return Err(format!("subagent {k} has index {}", a.agent_index));
        }
        if a.turns.len() > limits.max_sub_turns as usize {
            return Err("subagent turn limit exceeded".into());
        }
        let parent = a.parent_turn.unwrap();
        if parent == 0 || parent as usize > lead.turns.len() {
            return Err(format!(
                "subagent {} has no parent turn {parent}",
                a.agent_index
            ));
        }
        for t in &a.turns {
            if t.tool_calls
                .as_ref()
                .is_some_and(|c| c.len() > limits.max_parallel_tool_calls)
            {
                return Err("parallel tool-call cap exceeded".into());
            }
        }
    }
    for t in 1..=lead.turns.len() as u32 {
        let spawned = r
            .subagents()
            .iter()
            .filter(|a| a.parent_turn == Some(t))
            .count();
        if spawned > limits.max_subagents_per_turn {
            return Err(format!("lead turn {t} spawned {spawned} subagents"));
        }
    }
    // Think hygiene in the lead's tool context.
    for t in &lead.turns {
        if t.tool_result_text
            .as_deref()
            .is_some_and(|s| s.contains("<think>") || s.contains("</think>"))
        {
            return Err(format!("think span in lead turn {} tool result", t.turn));
        }
    }
    // Replay: every recorded state hash is rebuilt from the record.
    for a in &r.agents {
        let states = fanout_core::orchestrator::reconstruct_states(a, &h.prompts);
        for (t, s) in a.turns.iter().zip(&states) {
            if fanout_core::policy::state_hash(s) != t.state_hash {
                return Err(format!(
                    "agent {} turn {} does not replay",
                    a.agent_index, t.turn
                ));
            }
        }
        // Isolation: subagent states hold only p_sub, q_a and its own turns.
        if a.agent_index > 0 {
            let sub_system = h.prompts.system_message(a.role);
            for s in &states {
                if s[0].content != sub_system || s[1].content != a.task_text {
                    return Err(format!("agent {} state prefix", a.agent_index));
                }
                let own: Vec<&str> = a
                    .turns
                    .iter()
                    .flat_map(|t| [Some(t.output_text.as_str()), t.tool_result_text.as_deref()])
                    .flatten()
                    .collect();
                if s[2..].iter().any(|m| !own.contains(&m.content.as_str())) {
                    return Err(format!("agent {} sees foreign content", a.agent_index));
                }
                if s.iter().any(|m| m.content.contains(&lead.task_text)) {
                    return Err(format!("agent {} sees the lead query", a.agent_index));
                }
            }
        }
    }
    Ok(())
}

pub fn entry(role: AgentKind, turn: u32, text: &str) -> ScriptEntry {
    ScriptEntry {
        role,
        turn,
        state_hash: None,
        task: None,
        text: Some(text.to_string()),
        logprobs: None,
        alternatives: vec![],
    }
}

pub fn task_entry(role: AgentKind, turn: u32, task: &str, text: &str) -> ScriptEntry {
    ScriptEntry {
        task: Some(task.to_string()),
        ..entry(role, turn, text)
    }
}

pub fn spawn_call(n: usize) -> String {
    let prompts: Vec<String> = (0..n)
        .map(|i| format!(r#"{{"prompt":"task {i}"}}"#))
        .collect();
    format!(
        r#"<tool_call>{{"name":"create_sub_agents","arguments":{{"sub_agents":[{}]}}}}</tool_call>"#,
        prompts.join(",")
    )
}

pub const SEARCH_KIWI: &str =
    r#"<tool_call>{"name":"search","arguments":{"query":"kiwi"}}</tool_call>"#;
pub const TINY_GT: &str = "| k | v |\n| --- | --- |\n| a | 1 |\n| b | 2 |";
pub const TINY_ANSWER: &str =
    "Done.\n```markdown\n| k | v |\n| --- | --- |\n| a | 1 |\n| b | 2 |\n```";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferFixture {
    /// Valid answer; subagent 2 runs out of turns.
    TurnLimitedSubagent,
    /// Prose answer; every trajectory ends cleanly.
    InvalidFormatClean,
    /// Prose answer; subagent 2 loops until the context window is full.
    InvalidFormatLooping,
}

pub struct BufferCase {
    pub harness: Harness,
    pub rollout: Rollout,
    pub reward: RewardBreakdown,
    /// `(agent_index, turn, reason)` the buffer must hold, in order.
    pub expected: Vec<(usize, u32, InclusionReason)>,
}

fn buffer_script(fx: BufferFixture) -> Vec<ScriptEntry> {
    use AgentKind::*;
    let answer = if fx == BufferFixture::TurnLimitedSubagent {
        TINY_ANSWER
    } else {
        "I could not build the table."
    };
    let mut e = vec![
        entry(Lead, 1, &spawn_call(2)),
        entry(Lead, 2, answer),
        task_entry(Subagent, 1, "task 0", "a is 1 and b is 2"),
    ];
    match fx {
        BufferFixture::TurnLimitedSubagent => {
            e.extend((1..=20).map(|t| task_entry(Subagent, t, "task 1", SEARCH_KIWI)))
        }
        BufferFixture::InvalidFormatClean => {
            e.push(task_entry(Subagent, 1, "task 1", "nothing more"))
        }
        BufferFixture::InvalidFormatLooping => {
            e.push(task_entry(Subagent, 1, "task 1", SEARCH_KIWI));
            e.push(task_entry(Subagent, 2, "task 1", &"a b ".repeat(1500)));
        }
    }
    e
}

fn tiny_reward(h: &Harness, r: &Rollout) -> RewardBreakdown {
    let gt = parse_table(TINY_GT, ParseMode::Strict).unwrap();
    let key = UniqueKey::new(&["k"], &gt).unwrap();
    compute_reward(r, &gt, &key, &h.cfg.reward)
}

pub fn buffer_case(fx: BufferFixture) -> BufferCase {
    let mut h = Harness::with_script(Script {
        entries: buffer_script(fx),
        ..Default::default()
    });
    h.prompts.lead.text = "Delegate.".into();
    h.prompts.lead_tools.text = String::new();
    if fx == BufferFixture::InvalidFormatLooping {
        // Size the window so the looping turn is cut after 600 tokens.
        let probe = run_rollout(&h.env(Schedule::Parallel, None), "q", "question", 0);
        h.cfg.limits.max_context_tokens = probe.agents[2].turns[1].state_tokens + 600;
    }
    let rollout = run_rollout(&h.env(Schedule::Parallel, None), "q", "question", 0);
    let reward = tiny_reward(&h, &rollout);
    use InclusionReason::*;
    let expected = match fx {
        BufferFixture::TurnLimitedSubagent => vec![(0, 1, Normal), (0, 2, Normal), (1, 1, Normal)],
        BufferFixture::InvalidFormatClean => vec![(0, 2, FormatPenalty)],
        BufferFixture::InvalidFormatLooping => {
            vec![(0, 2, FormatPenalty), (2, 2, RepetitionPenalty)]
        }
    };
    BufferCase {
        harness: h,
        rollout,
        reward,
        expected,
    }
}

impl BufferCase {
    pub fn collect(&self) -> Result<Vec<TrainingSample>, BufferError> {
        let cfg = &self.harness.cfg;
        collect(
            &self.rollout,
            &self.reward,
            &cfg.limits,
            &self.harness.prompts,
            &cfg.repetition,
        )
    }

    pub fn check(&self) -> Result<(), String> {
        let samples = self.collect().map_err(|e| e.to_string())?;
        let got: Vec<_> = samples
            .iter()
            .map(|s| (s.agent_index, s.turn, s.inclusion_reason))
            .collect();
        if got != self.expected {
            return Err(format!(
                "buffer holds {got:?}, expected {:?}",
                self.expected
            ));
        }
        if samples.iter().any(|s| s.reward != self.reward.total) {
            return Err("sample reward differs from rollout reward".into());
        }
        Ok(())
    }
}
