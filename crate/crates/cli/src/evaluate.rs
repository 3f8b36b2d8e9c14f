//! Scoring of prediction files against a dataset.

use std::collections::BTreeMap;

use fanout_core::datapipe::DatasetInstance;
use fanout_core::metrics::score_tables;
use fanout_core::reward::check_format;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context};

#[derive(Debug, Clone, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub format_valid: bool,
    pub item_f1: f64,
    pub row_f1: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceScores {
    pub id: String,
    pub k: usize,
    pub samples: Vec<SampleScore>,
    pub avg_item_f1: f64,
    pub max_item_f1: f64,
    pub avg_row_f1: f64,
    pub max_row_f1: f64,
    pub avg_success: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub instances: usize,
    pub predictions: usize,
    pub item_f1_avg_at_k: f64,
    pub item_f1_max_at_k: f64,
    pub row_f1_avg_at_k: f64,
    pub row_f1_max_at_k: f64,
    pub success_avg_at_k: f64,
    pub success_pass_at_k: f64,
    /// Dataset ids with no prediction; they score zero.
    pub missing: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn max(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, f64::max)
}

pub fn score_sample(
    answer_text: &str,
    inst: &DatasetInstance,
    index: usize,
) -> Result<SampleScore, CliError> {
    let (gt, key) = inst.validate(index).ctx(
        "input",
        format!("dataset instance {}", inst.query_id(index)),
    )?;
    Ok(match check_format(answer_text) {
        (true, Some(pred)) => {
            let s = score_tables(&pred, &gt, &key);
            SampleScore {
                format_valid: true,
                item_f1: s.item.f1,
                row_f1: s.row.f1,
                success: s.success,
            }
        }
        _ => SampleScore {
            format_valid: false,
            item_f1: 0.0,
            row_f1: 0.0,
            success: false,
        },
    })
}

fn summarize(id: String, samples: Vec<SampleScore>) -> InstanceScores {
    InstanceScores {
        id,
        k: samples.len(),
        avg_item_f1: mean(samples.iter().map(|s| s.item_f1)),
        max_item_f1: max(samples.iter().map(|s| s.item_f1)),
        avg_row_f1: mean(samples.iter().map(|s| s.row_f1)),
        max_row_f1: max(samples.iter().map(|s| s.row_f1)),
        avg_success: mean(samples.iter().map(|s| f64::from(u8::from(s.success)))),
        pass: samples.iter().any(|s| s.success),
        samples,
    }
}

/// Per-instance scores in dataset order, then corpus aggregates. Every
/// prediction must name a dataset id.
pub fn evaluate(
    dataset: &[DatasetInstance],
    predictions: &[Prediction],
) -> Result<(Vec<InstanceScores>, Aggregate), CliError> {
    let ids: Vec<String> = dataset
        .iter()
        .enumerate()
        .map(|(i, d)| d.query_id(i))
        .collect();
    let mut by_id: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        if !ids.contains(&p.id) {
            return Err(CliError::new(
                "input",
                format!("prediction for unknown id '{}'", p.id),
            ));
        }
        by_id.entry(p.id.as_str()).or_default().push(p);
    }
    let mut per = Vec::with_capacity(dataset.len());
    let mut missing = Vec::new();
    for (i, (inst, id)) in dataset.iter().zip(&ids).enumerate() {
        let preds = by_id
            .get(id.as_str())
            .map(Vec::as_slice)
            .unwrap_or_default();
        if preds.is_empty() {
            missing.push(id.clone());
        }
        let samples = preds
            .iter()
            .map(|p| score_sample(&p.answer_text, inst, i))
            .collect::<Result<Vec<_>, _>>()?;
        per.push(summarize(id.clone(), samples));
    }
    let agg = Aggregate {
        instances: per.len(),
        predictions: predictions.len(),
        item_f1_avg_at_k: mean(per.iter().map(|s| s.avg_item_f1)),
        item_f1_max_at_k: mean(per.iter().map(|s| s.max_item_f1)),
        row_f1_avg_at_k: mean(per.iter().map(|s| s.avg_row_f1)),
        row_f1_max_at_k: mean(per.iter().map(|s| s.max_row_f1)),
        success_avg_at_k: mean(per.iter().map(|s| s.avg_success)),
        success_pass_at_k: mean(per.iter().map(|s| f64::from(u8::from(s.pass)))),
        missing,
    };
    Ok((per, agg))
}
