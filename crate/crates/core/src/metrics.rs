//! Item F1, Row F1 and success between a predicted and a reference table.
//!
//! Rows are aligned through the unique key columns, so scores do not depend on
//! row order. Columns are matched by normalized header name.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabletext::{normalize_cell, Table};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("unique key has no columns")]
    EmptyKey,
    #[error("key column '{0}' is not a column of the reference table")]
    UnknownKeyColumn(String),
    #[error("key column '{0}' is missing from the table")]
    MissingKeyColumn(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueKey {
    columns: Vec<String>,
}

impl UniqueKey {
    /// Builds a key from raw column names, checking them against `reference`.
    pub fn new<S: AsRef<str>>(columns: &[S], reference: &Table) -> Result<Self, MetricsError> {
        let key = Self::unchecked(columns)?;
        key.require_columns(reference).map_err(|e| match e {
            MetricsError::MissingKeyColumn(c) => MetricsError::UnknownKeyColumn(c),
            other => other,
        })?;
        Ok(key)
    }

    /// Normalizes the names without validating them against a table.
    pub fn unchecked<S: AsRef<str>>(columns: &[S]) -> Result<Self, MetricsError> {
        let columns: Vec<String> = columns
            .iter()
            .map(|c| normalize_cell(c.as_ref()).norm)
            .collect();
        if columns.is_empty() {
            return Err(MetricsError::EmptyKey);
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn require_columns(&self, table: &Table) -> Result<Vec<usize>, MetricsError> {
        self.columns
            .iter()
            .map(|c| {
                table
                    .column_index(c)
                    .ok_or_else(|| MetricsError::MissingKeyColumn(c.clone()))
            })
            .collect()
    }

    /// Per-row key tuples, or `None` when a key column is absent.
    pub fn tuples(&self, table: &Table) -> Option<Vec<Vec<String>>> {
        let idx = self.require_columns(table).ok()?;
        Some(
            table
                .rows
                .iter()
                .map(|row| {
                    idx.iter()
                        .map(|&i| row[i].comparable().to_string())
                        .collect()
                })
                .collect(),
        )
    }

    /// True when every row of `table` has a distinct key tuple.
    pub fn is_distinct_in(&self, table: &Table) -> bool {
        match self.tuples(table) {
            Some(mut t) => {
                let n = t.len();
                t.sort();
                t.dedup();
                t.len() == n
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    /// Micro scores from counts. Two empty sides score 1; otherwise an empty
    /// side scores 0 on its ratio.
    pub fn from_counts(correct: usize, predicted: usize, reference: usize) -> Self {
        if predicted == 0 && reference == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |n: usize| {
            if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            }
        };
        let f1 = if correct == 0 {
            0.0
        } else {
            (2 * correct) as f64 / (predicted + reference) as f64
        };
        Self {
            precision: ratio(predicted),
            recall: ratio(reference),
            f1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowAlignment {
    /// `(pred_row, gt_row)` pairs in prediction order.
    pub matched: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    /// `(pred_col, gt_col)` pairs for columns present on both sides.
    pub column_map: Vec<(usize, usize)>,
    /// Normalized prediction headers that the reference does not have.
    pub ignored_pred_columns: Vec<String>,
    /// Set when the prediction lacks a key column; nothing is matched then.
    pub missing_key_column: Option<String>,
    pub duplicate_gt_keys: usize,
}

/// Aligns prediction rows to reference rows by key tuple. The first
/// prediction row carrying a key claims it; later duplicates stay unmatched.
pub fn align_rows(pred: &Table, gt: &Table, key: &UniqueKey) -> RowAlignment {
    let mut out = RowAlignment::default();
    for (pc, name) in pred.headers.iter().enumerate() {
        match gt.column_index(name) {
            Some(gc) => out.column_map.push((pc, gc)),
            None => out.ignored_pred_columns.push(name.clone()),
        }
    }

    let gt_tuples = key
        .tuples(gt)
        .unwrap_or_else(|| vec![Vec::new(); gt.num_rows()]);
    let mut gt_index: HashMap<&[String], usize> = HashMap::new();
    for (i, t) in gt_tuples.iter().enumerate() {
        if gt_index.contains_key(t.as_slice()) {
            out.duplicate_gt_keys += 1;
        } else {
            gt_index.insert(t.as_slice(), i);
        }
    }
    if out.duplicate_gt_keys > 0 {
        log::warn!(
            "reference table has {} duplicate key rows; first occurrence wins",
            out.duplicate_gt_keys
        );
    }

    let mut gt_claimed = vec![false; gt.num_rows()];
    match key.tuples(pred) {
        None => {
            out.missing_key_column = key
                .columns()
                .iter()
                .find(|c| pred.column_index(c).is_none())
                .cloned();
            out.unmatched_pred = (0..pred.num_rows()).collect();
        }
        Some(pred_tuples) => {
            for (pi, t) in pred_tuples.iter().enumerate() {
                match gt_index.get(t.as_slice()) {
                    Some(&gi) if !gt_claimed[gi] => {
                        gt_claimed[gi] = true;
                        out.matched.push((pi, gi));
                    }
                    _ => out.unmatched_pred.push(pi),
                }
            }
        }
    }
    out.unmatched_gt = gt_claimed
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| i)
        .collect();
    out
}

/// Like [`align_rows`] but rejects predictions without the key columns.
pub fn align_rows_strict(
    pred: &Table,
    gt: &Table,
    key: &UniqueKey,
) -> Result<RowAlignment, MetricsError> {
    key.require_columns(pred)?;
    Ok(align_rows(pred, gt, key))
}

fn correct_cells(pred: &Table, gt: &Table, al: &RowAlignment, pr: usize, gr: usize) -> usize {
    al.column_map
        .iter()
        .filter(|&&(pc, gc)| pred.rows[pr][pc].matches(&gt.rows[gr][gc]))
        .count()
}

fn row_is_correct(pred: &Table, gt: &Table, al: &RowAlignment, pr: usize, gr: usize) -> bool {
    al.column_map.len() == gt.num_cols() && correct_cells(pred, gt, al, pr, gr) == gt.num_cols()
}

pub fn item_f1(pred: &Table, gt: &Table, key: &UniqueKey) -> ScoreTriple {
    item_f1_aligned(pred, gt, &align_rows(pred, gt, key))
}

fn item_f1_aligned(pred: &Table, gt: &Table, al: &RowAlignment) -> ScoreTriple {
    let correct: usize = al
        .matched
        .iter()
        .map(|&(pr, gr)| correct_cells(pred, gt, al, pr, gr))
        .sum();
    ScoreTriple::from_counts(correct, pred.num_cells(), gt.num_cells())
}

pub fn row_f1(pred: &Table, gt: &Table, key: &UniqueKey) -> ScoreTriple {
    row_f1_aligned(pred, gt, &align_rows(pred, gt, key))
}

fn row_f1_aligned(pred: &Table, gt: &Table, al: &RowAlignment) -> ScoreTriple {
    let correct = al
        .matched
        .iter()
        .filter(|&&(pr, gr)| row_is_correct(pred, gt, al, pr, gr))
        .count();
    ScoreTriple::from_counts(correct, pred.num_rows(), gt.num_rows())
}

/// Perfect reproduction: every row correct and no extra columns.
pub fn success(pred: &Table, gt: &Table, key: &UniqueKey) -> bool {
    let al = align_rows(pred, gt, key);
    success_aligned(pred, gt, &al)
}

fn success_aligned(pred: &Table, gt: &Table, al: &RowAlignment) -> bool {
    al.ignored_pred_columns.is_empty()
        && al.column_map.len() == gt.num_cols()
        && row_f1_aligned(pred, gt, al).f1 == 1.0
}

/// Agreement between two independent answers, `b` acting as reference.
pub fn consistency(a: &Table, b: &Table, key: &UniqueKey) -> f64 {
    item_f1(a, b, key).f1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableScores {
    pub item: ScoreTriple,
    pub row: ScoreTriple,
    pub success: bool,
    pub alignment: RowAlignment,
}

/// All three metrics from a single alignment pass.
pub fn score_tables(pred: &Table, gt: &Table, key: &UniqueKey) -> TableScores {
    let alignment = align_rows(pred, gt, key);
    TableScores {
        item: item_f1_aligned(pred, gt, &alignment),
        row: row_f1_aligned(pred, gt, &alignment),
        success: success_aligned(pred, gt, &alignment),
        alignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabletext::{parse_table, ParseMode};

    fn t(md: &str) -> Table {
        parse_table(md, ParseMode::Strict).unwrap()
    }

    fn gt() -> Table {
        t("| key | A | B |\n|---|---|---|\n| k1 | a1 | b1 |\n| k2 | a2 | b2 |")
    }

    fn pred_with_spurious_row() -> Table {
        t("| key | A | B |\n|---|---|---|\n| k1 | a1 | bX |\n| k2 | a2 | b2 |\n| k3 | a3 | b3 |")
    }

    fn key(g: &Table) -> UniqueKey {
        UniqueKey::new(&["key"], g).unwrap()
    }

    #[test]
    fn spurious_row_alignment() {
        let (p, g) = (pred_with_spurious_row(), gt());
        let al = align_rows(&p, &g, &key(&g));
        assert_eq!(al.matched, vec![(0, 0), (1, 1)]);
        assert_eq!(al.unmatched_pred, vec![2]);
        assert!(al.unmatched_gt.is_empty());
    }

    #[test]
    fn worked_item_and_row_scores() {
        // Hand count: k1 row has key+A correct (2), k2 row all 3, k3 none -> 5.
        let (p, g) = (pred_with_spurious_row(), gt());
        let k = key(&g);
        let item = item_f1(&p, &g, &k);
        assert_eq!(item.precision, 5.0 / 9.0);
        assert_eq!(item.recall, 5.0 / 6.0);
        assert_eq!(item.f1, 2.0 / 3.0);
        let row = row_f1(&p, &g, &k);
        assert_eq!(row.precision, 1.0 / 3.0);
        assert_eq!(row.recall, 1.0 / 2.0);
        assert_eq!(row.f1, 0.4);
        assert_eq!(consistency(&p, &g, &k), 2.0 / 3.0);
        assert!(!success(&p, &g, &k));
    }

    #[test]
    fn identity_and_permutation() {
        let g = gt();
        let k = key(&g);
        let s = score_tables(&g, &g, &k);
        assert_eq!(s.item.f1, 1.0);
        assert_eq!(s.row.f1, 1.0);
        assert!(s.success);
        let permuted = t("| B | key | A |\n|---|---|---|\n| b2 | k2 | a2 |\n| b1 | k1 | a1 |");
        let s = score_tables(&permuted, &g, &k);
        assert!(s.success);
        assert_eq!(s.item.f1, 1.0);
    }

    #[test]
    fn missing_one_row() {
        let g = gt();
        let p = t("| key | A | B |\n|---|---|---|\n| k2 | a2 | b2 |");
        assert_eq!(row_f1(&p, &g, &key(&g)).f1, 2.0 / 3.0);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let g = gt();
        let p = t("| key | A | B |\n|---|---|---|");
        let s = item_f1(&p, &g, &key(&g));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_wrong_cell_is_not_success() {
        let g = gt();
        let p = t("| key | A | B |\n|---|---|---|\n| k1 | a1 | b1 |\n| k2 | a2 | WRONG |");
        assert!(!success(&p, &g, &key(&g)));
    }

    #[test]
    fn extra_column_is_not_success_but_ignored_for_matching() {
        let g = gt();
        let p = t(
            "| key | A | B | C |\n|---|---|---|---|\n| k1 | a1 | b1 | x |\n| k2 | a2 | b2 | y |",
        );
        let s = score_tables(&p, &g, &key(&g));
        assert_eq!(s.row.f1, 1.0);
        assert!(!s.success);
        assert_eq!(s.alignment.ignored_pred_columns, vec!["c"]);
        assert_eq!(s.item.precision, 6.0 / 8.0);
    }

    #[test]
    fn disjoint_keys() {
        let g = gt();
        let p = t("| key | A | B |\n|---|---|---|\n| z1 | a1 | b1 |");
        assert_eq!(consistency(&p, &g, &key(&g)), 0.0);
    }

    #[test]
    fn missing_key_column_flags() {
        let g = gt();
        let p = t("| A | B |\n|---|---|\n| a1 | b1 |");
        let al = align_rows(&p, &g, &key(&g));
        assert_eq!(al.missing_key_column.as_deref(), Some("key"));
        assert!(al.matched.is_empty());
        assert!(matches!(
            align_rows_strict(&p, &g, &key(&g)),
            Err(MetricsError::MissingKeyColumn(_))
        ));
        assert_eq!(item_f1(&p, &g, &key(&g)).f1, 0.0);
    }

    #[test]
    fn duplicate_pred_keys_first_claims() {
        let g = gt();
        let p = t("| key | A | B |\n|---|---|---|\n| k1 | x | x |\n| k1 | a1 | b1 |");
        let al = align_rows(&p, &g, &key(&g));
        assert_eq!(al.matched, vec![(0, 0)]);
        assert_eq!(al.unmatched_pred, vec![1]);
    }

    #[test]
    fn duplicate_gt_keys_tolerated() {
        let g = t("| key | A |\n|---|---|\n| k1 | a |\n| k1 | b |");
        let p = t("| key | A |\n|---|---|\n| k1 | a |");
        let al = align_rows(&p, &g, &UniqueKey::new(&["key"], &g).unwrap());
        assert_eq!(al.duplicate_gt_keys, 1);
        assert_eq!(al.matched, vec![(0, 0)]);
    }

    #[test]
    fn numeric_cells_compare_as_decimals() {
        let g = t("| key | area |\n|---|---|\n| a | 1,185 |");
        let p = t("| key | area |\n|---|---|\n| a | 1185.0 |");
        assert!(success(&p, &g, &UniqueKey::new(&["key"], &g).unwrap()));
    }

    #[test]
    fn unknown_key_column() {
        let g = gt();
        assert_eq!(
            UniqueKey::new(&["nope"], &g),
            Err(MetricsError::UnknownKeyColumn("nope".into()))
        );
        assert_eq!(UniqueKey::new::<&str>(&[], &g), Err(MetricsError::EmptyKey));
    }
}
