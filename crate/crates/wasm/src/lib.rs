//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string.
//! Failures come back as `{"error": "..."}` so the page never has to catch.

use fanout_core::advantage::{
    clipped_surrogate, normalize_group, surrogate_grad, token_weights_from_shapes, ClipRange,
    RolloutShape,
};
use fanout_core::metrics::{score_tables as score, UniqueKey};
use fanout_core::reward::{combine, length_penalty, RewardConfig};
use fanout_core::tabletext::{extract_answer_block, parse_table, ParseMode, Table};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_json(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn table_from(text: &str, what: &str) -> Result<Table, String> {
    let md = extract_answer_block(text).unwrap_or(text);
    parse_table(md, ParseMode::Lenient).map_err(|e| format!("{what}: {e}"))
}

pub fn score_tables_value(pred: &str, gt: &str, key_columns: &str) -> Result<Value, String> {
    let gt = table_from(gt, "reference")?;
    let pred = table_from(pred, "prediction")?;
    let cols: Vec<&str> = key_columns
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect();
    let key = UniqueKey::new(&cols, &gt).map_err(|e| e.to_string())?;
    let s = score(&pred, &gt, &key);
    Ok(json!({
        "item": s.item,
        "row": s.row,
        "success": s.success,
        "alignment": s.alignment,
        "pred_shape": [pred.num_rows(), pred.num_cols()],
        "gt_shape": [gt.num_rows(), gt.num_cols()],
    }))
}

/// Item F1, row F1 and success of `pred` against `gt`. Either table may be
/// bare markdown or wrapped in a ```` ```markdown ```` block; `key_columns`
/// is comma separated.
#[wasm_bindgen]
pub fn score_tables(pred: &str, gt: &str, key_columns: &str) -> String {
    to_json(score_tables_value(pred, gt, key_columns))
}

/// Reward breakdown under the default reward settings.
#[wasm_bindgen]
pub fn reward(answer_f1: f64, format_valid: bool, used_access: bool, length: u32) -> String {
    let b = combine(
        answer_f1.clamp(0.0, 1.0),
        format_valid,
        used_access,
        length as usize,
        &RewardConfig::default(),
    );
    json!(b).to_string()
}

/// `[[length, penalty], ...]` from 0 to `max_len` in `step` increments.
#[wasm_bindgen]
pub fn length_penalty_curve(max_len: u32, step: u32) -> String {
    let cfg = RewardConfig::default();
    let step = step.max(1);
    let pts: Vec<(u32, f64)> = (0..=max_len / step)
        .map(|i| i * step)
        .map(|l| (l, length_penalty(l as usize, &cfg)))
        .collect();
    json!(pts).to_string()
}

fn numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| format!("{what}: '{t}' is not a number"))
        })
        .collect()
}

/// Rollouts separated by `;` or newlines, agents by commas.
fn parse_shapes(text: &str, rollouts: usize) -> Result<Vec<RolloutShape>, String> {
    if text.trim().is_empty() {
        return Ok(vec![vec![vec![1]]; rollouts]);
    }
    let shapes = text
        .split([';', '\n'])
        .filter(|r| !r.trim().is_empty())
        .map(|r| {
            numbers::<usize>(r, "agent tokens").map(|ns| ns.into_iter().map(|n| vec![n]).collect())
        })
        .collect::<Result<Vec<RolloutShape>, _>>()?;
    if shapes.len() != rollouts {
        return Err(format!(
            "{} rewards but {} rollouts of agent tokens",
            rollouts,
            shapes.len()
        ));
    }
    Ok(shapes)
}

pub fn group_advantages_value(rewards: &str, agent_tokens: &str) -> Result<Value, String> {
    let rewards: Vec<f64> = numbers(rewards, "rewards")?;
    let adv = normalize_group(&rewards).map_err(|e| e.to_string())?;
    let shapes = parse_shapes(agent_tokens, rewards.len())?;
    let w = token_weights_from_shapes(&shapes).map_err(|e| e.to_string())?;
    let mass: Vec<f64> = shapes
        .iter()
        .enumerate()
        .map(|(i, agents)| {
            agents
                .iter()
                .enumerate()
                .map(|(a, t)| w.weight(i, a) * t[0] as f64)
                .sum()
        })
        .collect();
    Ok(json!({
        "mean": adv.mean,
        "std": adv.std,
        "degenerate": adv.degenerate,
        "advantages": adv.advantages,
        "weights": w.per_token,
        "active_agents": w.active_agents,
        "rollout_mass": mass,
    }))
}

/// Group-normalized advantages and per-token weights. `rewards` is a list of
/// numbers; `agent_tokens` gives each rollout's per-agent output token counts
/// (e.g. `"120,40,40; 300"`), or is empty for one single-token agent each.
#[wasm_bindgen]
pub fn group_advantages(rewards: &str, agent_tokens: &str) -> String {
    to_json(group_advantages_value(rewards, agent_tokens))
}

/// `[[ratio, surrogate, d/d logprob], ...]` for ratios in `(0, 2]`.
#[wasm_bindgen]
pub fn surrogate_curve(adv: f64, eps_low: f64, eps_high: f64, points: u32) -> String {
    let clip = ClipRange { eps_low, eps_high };
    let n = points.max(2);
    let pts: Vec<[f64; 3]> = (1..=n)
        .map(|i| 2.0 * f64::from(i) / f64::from(n))
        .map(|r| {
            [
                r,
                clipped_surrogate(r, adv, eps_low, eps_high),
                surrogate_grad(r, adv, clip),
            ]
        })
        .collect();
    json!(pts).to_string()
}
