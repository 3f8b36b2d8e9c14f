mod common;

use common::{
    barrier_holds, check_rollout, entry, fixture, spawn_call, Harness, Recorder, SEARCH_KIWI,
};
use fanout_core::orchestrator::{
    run_group, run_rollout, AgentKind, AgentStatus, Rollout, Schedule, ToolCall,
};
use fanout_core::policy::{Script, ScriptEntry};

fn golden_path() -> std::path::PathBuf {
    fixture("golden/nz_north_parks.jsonl")
}

fn fixture_rollout(h: &Harness, schedule: Schedule) -> Rollout {
    let task = &h.tasks[0];
    run_rollout(&h.env(schedule, None), &task.query_id(0), &task.question, 0)
}

#[test]
fn golden_trajectory() {
    let h = Harness::new();
    let line = fixture_rollout(&h, Schedule::Parallel).to_json_line() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &line).unwrap();
    }
    let golden =
        std::fs::read_to_string(golden_path()).expect("golden file; run with UPDATE_GOLDEN=1");
    assert_eq!(line, golden);
}

#[test]
fn fixture_rollout_shape() {
    let h = Harness::new();
    let r = fixture_rollout(&h, Schedule::Parallel);
    assert_eq!(r.agents.len(), 3);
    assert_eq!(r.lead().turns.len(), 2);
    for s in r.subagents() {
        assert_eq!(s.turns.len(), 3);
        assert_eq!(s.parent_turn, Some(1));
        assert_eq!(s.status, AgentStatus::Answered);
        assert!(matches!(
            s.turns[0].tool_calls.as_deref(),
            Some([ToolCall::Search { .. }])
        ));
        assert!(s.turns[1]
            .tool_calls
            .as_ref()
            .unwrap()
            .iter()
            .all(|c| matches!(c, ToolCall::Access { .. })));
        assert!(s.turns[2].tool_calls.is_none());
    }
    assert_eq!(r.outcome.status, AgentStatus::Answered);
    assert_eq!(r.outcome.final_answer_text, r.lead().turns[1].output_text);
    check_rollout(&r, &h).unwrap();
}

#[test]
fn schedules_agree_and_barrier_holds() {
    let h = Harness::new();
    let reference = fixture_rollout(&h, Schedule::Serial).to_json_line();
    for schedule in [Schedule::Parallel, Schedule::Reversed] {
        let rec = Recorder::default();
        let task = &h.tasks[0];
        let r = run_rollout(
            &h.env(schedule, Some(&rec)),
            &task.query_id(0),
            &task.question,
            0,
        );
        assert_eq!(r.to_json_line(), reference, "{schedule:?}");
        barrier_holds(&rec.events()).unwrap();
    }
}

#[test]
fn every_fixture_task_runs_clean() {
    let h = Harness::new();
    let env = h.env(Schedule::Parallel, None);
    for (i, task) in h.tasks.iter().enumerate() {
        for r in run_group(&env, &task.query_id(i), &task.question, 4) {
            check_rollout(&r, &h).unwrap();
            assert_eq!(r.outcome.status, AgentStatus::Answered);
        }
    }
}

fn run_script(entries: Vec<ScriptEntry>) -> (Harness, Rollout) {
    let h = Harness::with_script(Script {
        entries,
        ..Default::default()
    });
    let r = run_rollout(&h.env(Schedule::Parallel, None), "q", "question", 0);
    (h, r)
}

#[test]
fn over_cap_spawn_is_an_error_result() {
    let (h, r) = run_script(vec![
        entry(AgentKind::Lead, 1, &spawn_call(11)),
        entry(AgentKind::Lead, 2, "done"),
    ]);
    let t1 = &r.lead().turns[0];
    assert!(t1.parse_error.is_some());
    assert!(t1
        .tool_result_text
        .as_ref()
        .unwrap()
        .contains("max 10 subagents"));
    assert_eq!(r.lead().turns.len(), 2);
    assert_eq!(r.agents.len(), 1);
    assert_eq!(r.outcome.final_answer_text, "done");
    check_rollout(&r, &h).unwrap();
}

#[test]
fn lead_turn_limit() {
    let mut entries: Vec<ScriptEntry> = (1..=10)
        .map(|t| entry(AgentKind::Lead, t, &spawn_call(1)))
        .collect();
    entries.push(entry(AgentKind::Subagent, 1, "nothing found"));
    let (h, r) = run_script(entries);
    assert_eq!(r.outcome.status, AgentStatus::TurnLimit);
    assert_eq!(r.outcome.final_answer_text, "");
    assert_eq!(r.lead().turns.len(), 10);
    let last = r.lead().final_turn().unwrap();
    assert_eq!(last.termination, Some(AgentStatus::TurnLimit));
    assert!(last.tool_result_text.is_none());
    assert_eq!(r.subagents().len(), 9);
    check_rollout(&r, &h).unwrap();
}

#[test]
fn subagent_turn_limit_and_parallel_cap() {
    let search = SEARCH_KIWI;
    let mut entries = vec![
        entry(AgentKind::Lead, 1, &spawn_call(2)),
        entry(AgentKind::Lead, 2, "ok"),
    ];
    entries.extend((1..=20).map(|t| entry(AgentKind::Subagent, t, search)));
    let (h, r) = run_script(entries);
    for s in r.subagents() {
        assert_eq!(s.status, AgentStatus::TurnLimit);
        assert_eq!(s.turns.len(), 20);
    }
    let ctx = r.lead().turns[0].tool_result_text.as_ref().unwrap();
    assert!(ctx.contains("## Subagent 1 (stopped: turn_limit)"));
    check_rollout(&r, &h).unwrap();

    let six = search.repeat(6);
    let (_, r) = run_script(vec![
        entry(AgentKind::Lead, 1, &spawn_call(1)),
        entry(AgentKind::Subagent, 1, &six),
        entry(AgentKind::Subagent, 2, "gave up"),
        entry(AgentKind::Lead, 2, "ok"),
    ]);
    let t1 = &r.subagents()[0].turns[0];
    assert!(t1.tool_calls.is_none());
    assert!(t1
        .tool_result_text
        .as_ref()
        .unwrap()
        .contains("max 5 tool calls"));
}

#[test]
fn malformed_loop_terminates() {
    let bad = "<tool_call>{oops</tool_call>";
    let (_, r) = run_script((1..=3).map(|t| entry(AgentKind::Lead, t, bad)).collect());
    assert_eq!(r.outcome.status, AgentStatus::MalformedToolLoop);
    assert_eq!(r.lead().turns.len(), 3);
    assert!(r.lead().turns.iter().all(|t| t.parse_error.is_some()));
}

#[test]
fn unknown_url_is_fed_back() {
    let access = r#"<tool_call>{"name":"access","arguments":{"url":"wiki/Made_Up","query":"x"}}</tool_call>"#;
    let (_, r) = run_script(vec![
        entry(AgentKind::Lead, 1, &spawn_call(1)),
        entry(AgentKind::Subagent, 1, access),
        entry(AgentKind::Subagent, 2, "no luck"),
        entry(AgentKind::Lead, 2, "ok"),
    ]);
    let res = r.subagents()[0].turns[0].tool_result_text.as_ref().unwrap();
    assert!(res.contains("unknown URL 'wiki/Made_Up'"));
    assert_eq!(r.subagents()[0].status, AgentStatus::Answered);
}

#[test]
fn context_overflow_is_a_status() {
    let long = "word ".repeat(400);
    let mut h = Harness::with_script(Script {
        entries: vec![
            entry(AgentKind::Lead, 1, &spawn_call(1)),
            entry(
                AgentKind::Subagent,
                1,
                &format!(
                    r#"{long}<tool_call>{{"name":"search","arguments":{{"query":"kiwi"}}}}</tool_call>"#
                ),
            ),
            entry(AgentKind::Subagent, 2, &long),
            entry(AgentKind::Lead, 2, "ok"),
        ],
        ..Default::default()
    });
    h.prompts.lead.text = "Delegate.".into();
    h.prompts.lead_tools.text = String::new();
    let sub_system = h.prompts.system_message(AgentKind::Subagent);
    let base = fanout_core::policy::simple_tokenize(&sub_system).len();
    h.cfg.limits.max_context_tokens = base + 700;
    let r = run_rollout(&h.env(Schedule::Parallel, None), "q", "question", 0);
    let s = &r.subagents()[0];
    assert_eq!(s.status, AgentStatus::ContextOverflow);
    assert_eq!(
        s.final_turn().unwrap().termination,
        Some(AgentStatus::ContextOverflow)
    );
    assert_eq!(r.outcome.status, AgentStatus::Answered);
}

#[test]
fn script_miss_is_policy_error() {
    let (_, r) = run_script(vec![
        entry(AgentKind::Lead, 1, &spawn_call(1)),
        entry(AgentKind::Lead, 2, "ok"),
    ]);
    assert_eq!(r.subagents()[0].status, AgentStatus::PolicyError);
    assert!(r.subagents()[0].turns.is_empty());
    assert_eq!(r.outcome.status, AgentStatus::Answered);
}

#[test]
fn subagents_are_indexed_across_lead_turns() {
    let (h, r) = run_script(vec![
        entry(AgentKind::Lead, 1, &spawn_call(2)),
        entry(AgentKind::Lead, 2, &spawn_call(3)),
        entry(AgentKind::Lead, 3, "ok"),
        entry(AgentKind::Subagent, 1, "<think>hmm</think>found it"),
    ]);
    let parents: Vec<_> = r
        .subagents()
        .iter()
        .map(|a| (a.agent_index, a.parent_turn.unwrap()))
        .collect();
    assert_eq!(parents, vec![(1, 1), (2, 1), (3, 2), (4, 2), (5, 2)]);
    check_rollout(&r, &h).unwrap();
}
