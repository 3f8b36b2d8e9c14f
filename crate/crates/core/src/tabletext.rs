//! Markdown table answers: fenced-block extraction, parsing and cell normalization.
//!
//! Cells are compared through their normalized form. Numeric cells additionally
//! carry an exact decimal so that `1,185`, `1185` and `1185.0` compare equal.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

const FENCE_OPEN: &str = "```markdown";
const FENCE_CLOSE: &str = "```";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    RowWidthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// How ragged data rows are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Reject any row whose width differs from the header.
    #[default]
    Strict,
    /// Right-pad short rows with empty cells and drop surplus cells, with a warning.
    Lenient,
}

/// Exact decimal in canonical form: no leading integer zeros, no trailing
/// fractional zeros, and no negative zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Decimal(String);

impl Decimal {
    /// Parses `[+-]? (digits [. digits?] | . digits)`. No exponents.
    pub fn parse(s: &str) -> Option<Self> {
        let (negative, body) = match s.as_bytes().first()? {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int_part) || !all_digits(frac_part) {
            return None;
        }
        let int_part = int_part.trim_start_matches('0');
        let frac_part = frac_part.trim_end_matches('0');
        let int_part = if int_part.is_empty() { "0" } else { int_part };
        let is_zero = int_part == "0" && frac_part.is_empty();
        let mut out = String::new();
        if negative && !is_zero {
            out.push('-');
        }
        out.push_str(int_part);
        if !frac_part.is_empty() {
            out.push('.');
            out.push_str(frac_part);
        }
        Some(Decimal(out))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormCell {
    pub raw: String,
    pub norm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<Decimal>,
}

impl NormCell {
    /// Value used for equality and key matching: the canonical decimal for
    /// numeric cells, the normalized text otherwise.
    pub fn comparable(&self) -> &str {
        match &self.numeric {
            Some(d) => d.as_str(),
            None => &self.norm,
        }
    }

    pub fn matches(&self, other: &NormCell) -> bool {
        self.comparable() == other.comparable()
    }
}

/// Parsed table. Equality ignores `source_span` and raw header spelling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    #[serde(default)]
    pub raw_headers: Vec<String>,
    pub rows: Vec<Vec<NormCell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<Range<usize>>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.headers == other.headers && self.rows == other.rows
    }
}

impl Table {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn num_cells(&self) -> usize {
        self.rows.len() * self.headers.len()
    }

    pub fn column_index(&self, normalized_name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == normalized_name)
    }

    /// Renders back to a pipe table using raw header and cell text.
    pub fn render(&self) -> String {
        let headers: Vec<&str> = if self.raw_headers.len() == self.headers.len() {
            self.raw_headers.iter().map(String::as_str).collect()
        } else {
            self.headers.iter().map(String::as_str).collect()
        };
        let mut out = String::new();
        push_row(&mut out, headers.iter().copied());
        out.push('\n');
        push_row(&mut out, headers.iter().map(|_| "---"));
        for row in &self.rows {
            out.push('\n');
            push_row(&mut out, row.iter().map(|c| c.raw.as_str()));
        }
        out
    }
}

fn push_row<'a>(out: &mut String, cells: impl Iterator<Item = &'a str>) {
    out.push('|');
    for cell in cells {
        out.push(' ');
        out.push_str(&cell.replace('|', "\\|"));
        out.push_str(" |");
    }
}

/// Returns the body of the last complete ```` ```markdown ```` fenced block.
pub fn extract_answer_block(text: &str) -> Option<&str> {
    extract_answer_span(text).map(|r| &text[r])
}

/// Byte range of the body of the last complete markdown fence.
pub fn extract_answer_span(text: &str) -> Option<Range<usize>> {
    let mut last = None;
    let mut pos = 0;
    while let Some(found) = text[pos..].find(FENCE_OPEN) {
        let open = pos + found;
        let after_marker = open + FENCE_OPEN.len();
        // Body starts on the line after the opening marker.
        let body_start = match text[after_marker..].find('\n') {
            Some(nl) => after_marker + nl + 1,
            None => break,
        };
        let Some(close_rel) = text[body_start..].find(FENCE_CLOSE) else {
            break;
        };
        let close = body_start + close_rel;
        let mut body_end = close;
        if text[body_start..body_end].ends_with('\n') {
            body_end -= 1;
            if text[body_start..body_end].ends_with('\r') {
                body_end -= 1;
            }
        }
        last = Some(body_start..body_end.max(body_start));
        pos = close + FENCE_CLOSE.len();
    }
    last
}

/// Normalizes a cell or header string. The pipeline is iterated to a fixed
/// point so the result is idempotent.
pub fn normalize_cell(raw: &str) -> NormCell {
    let mut current = normalize_once(raw);
    for _ in 0..16 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    let numeric = Decimal::parse(&current);
    NormCell {
        raw: raw.trim().to_string(),
        norm: current,
        numeric,
    }
}

fn normalize_once(s: &str) -> String {
    let s: String = s.nfkc().collect::<String>().to_lowercase();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let s = strip_enclosing(&s);
    let s = s.trim_end_matches('.').trim_end();
    remove_thousands_separators(s)
}

fn strip_enclosing(s: &str) -> &str {
    const PAIRS: [(char, char); 8] = [
        ('"', '"'),
        ('\'', '\''),
        ('`', '`'),
        ('\u{201c}', '\u{201d}'),
        ('\u{2018}', '\u{2019}'),
        ('(', ')'),
        ('[', ']'),
        ('{', '}'),
    ];
    let mut s = s.trim();
    'outer: loop {
        let mut chars = s.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            return s;
        };
        for (open, close) in PAIRS {
            if first == open && last == close && encloses_whole(s, open, close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
                continue 'outer;
            }
        }
        return s;
    }
}

/// True when the opener at the start is closed by the final character and not
/// earlier, e.g. `(a)` but not `(a) and (b)`.
fn encloses_whole(s: &str, open: char, close: char) -> bool {
    if open == close {
        // Quotes: no interior occurrence.
        let inner = &s[open.len_utf8()..s.len() - close.len_utf8()];
        return !inner.contains(open);
    }
    let mut depth = 0usize;
    let last_idx = s.len() - close.len_utf8();
    for (i, c) in s.char_indices() {
        if c == open {
            depth += 1;
        } else if c == close {
            depth = depth.saturating_sub(1);
            if depth == 0 && i != last_idx {
                return false;
            }
        }
    }
    depth == 0
}

/// Removes commas sitting between a digit and a group of exactly three digits.
fn remove_thousands_separators(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ',' && i > 0 && chars[i - 1].is_ascii_digit() {
            let group = chars.get(i + 1..i + 4);
            let next = chars.get(i + 4);
            let is_group = group.is_some_and(|g| g.iter().all(char::is_ascii_digit))
                && !next.is_some_and(char::is_ascii_digit);
            if is_group {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub row: usize,
    pub message: String,
}

pub fn parse_table(md: &str, mode: ParseMode) -> Result<Table, TableError> {
    parse_table_with_warnings(md, mode).map(|(t, _)| t)
}

pub fn parse_table_with_warnings(
    md: &str,
    mode: ParseMode,
) -> Result<(Table, Vec<ParseWarning>), TableError> {
    let mut lines = md.lines().map(str::trim).filter(|l| !l.is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| TableError::MalformedTable("empty input".into()))?;
    if !header_line.contains('|') {
        return Err(TableError::MalformedTable("header row has no pipes".into()));
    }
    let raw_headers = split_row(header_line);
    if raw_headers.is_empty() {
        return Err(TableError::MalformedTable("zero columns".into()));
    }
    let sep_line = lines
        .next()
        .ok_or_else(|| TableError::MalformedTable("missing separator row".into()))?;
    let sep = split_row(sep_line);
    if !sep.iter().all(|c| is_separator_cell(c)) {
        return Err(TableError::MalformedTable("missing separator row".into()));
    }
    if sep.len() != raw_headers.len() {
        return Err(TableError::MalformedTable(format!(
            "separator has {} cells, header has {}",
            sep.len(),
            raw_headers.len()
        )));
    }

    let mut headers = Vec::with_capacity(raw_headers.len());
    for raw in &raw_headers {
        let norm = normalize_cell(raw).norm;
        if norm.is_empty() {
            return Err(TableError::MalformedTable("empty header".into()));
        }
        if headers.contains(&norm) {
            return Err(TableError::MalformedTable(format!(
                "duplicate header '{norm}'"
            )));
        }
        headers.push(norm);
    }

    let width = headers.len();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (row_idx, line) in lines.enumerate() {
        let mut cells = split_row(line);
        if cells.len() != width {
            match mode {
                ParseMode::Strict => {
                    return Err(TableError::RowWidthMismatch {
                        row: row_idx,
                        expected: width,
                        found: cells.len(),
                    })
                }
                ParseMode::Lenient => {
                    warnings.push(ParseWarning {
                        row: row_idx,
                        message: format!("row has {} cells, expected {width}", cells.len()),
                    });
                    cells.resize(width, String::new());
                }
            }
        }
        rows.push(cells.iter().map(|c| normalize_cell(c)).collect());
    }
    for w in &warnings {
        log::warn!("table row {}: {}", w.row, w.message);
    }
    Ok((
        Table {
            headers,
            raw_headers: raw_headers.iter().map(|h| h.trim().to_string()).collect(),
            rows,
            source_span: None,
        },
        warnings,
    ))
}

fn is_separator_cell(cell: &str) -> bool {
    let c = cell.trim();
    let c = c.strip_prefix(':').unwrap_or(c);
    let c = c.strip_suffix(':').unwrap_or(c);
    !c.is_empty() && c.bytes().all(|b| b == b'-')
}

/// Splits a pipe row into trimmed cells, honouring `\|` escapes and optional
/// outer pipes.
fn split_row(line: &str) -> Vec<String> {
    let line = line.trim();
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    cells.push(cur);
    if line.starts_with('|') {
        cells.remove(0);
    }
    if line.ends_with('|') && !line.ends_with("\\|") {
        cells.pop();
    }
    cells.into_iter().map(|c| c.trim().to_string()).collect()
}

/// Extracts the answer block and parses it strictly, recording where the block sat.
pub fn parse_answer(text: &str) -> Option<Table> {
    let span = extract_answer_span(text)?;
    let mut table = parse_table(&text[span.clone()], ParseMode::Strict).ok()?;
    table.source_span = Some(span);
    Some(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force fence scan: collect every (open, close) pair left to right.
    fn all_fence_bodies(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = text;
        while let Some(i) = rest.find("```markdown\n") {
            let body = &rest[i + "```markdown\n".len()..];
            match body.find("```") {
                Some(j) => {
                    out.push(body[..j].trim_end_matches('\n').to_string());
                    rest = &body[j + 3..];
                }
                None => break,
            }
        }
        out
    }

    #[test]
    fn extracts_single_block() {
        let text = "```markdown\n| A |\n|---|\n| 1 |\n```";
        assert_eq!(extract_answer_block(text), Some("| A |\n|---|\n| 1 |"));
    }

    #[test]
    fn no_fence_is_absent() {
        assert_eq!(extract_answer_block("just prose | A |"), None);
        assert_eq!(extract_answer_block("```markdown\n| A |\n"), None);
    }

    #[test]
    fn last_of_two_blocks_wins() {
        let text = "draft:\n```markdown\n| A |\n|---|\n| 1 |\n```\nfinal:\n```markdown\n| B |\n|---|\n| 2 |\n```\n";
        let oracle = all_fence_bodies(text);
        assert_eq!(oracle.len(), 2);
        assert_eq!(extract_answer_block(text), Some(oracle[1].as_str()));
    }

    #[test]
    fn normalizes_whitespace_case_punct() {
        let c = normalize_cell("  Fiordland   National Park. ");
        assert_eq!(c.norm, "fiordland national park");
        assert!(c.numeric.is_none());
    }

    #[test]
    fn thousands_separators() {
        let c = normalize_cell("12,607");
        assert_eq!(c.norm, "12607");
        assert_eq!(c.numeric.as_ref().map(Decimal::as_str), Some("12607"));
        let a = normalize_cell("1,185");
        let b = normalize_cell("1185");
        assert_eq!(a.norm, b.norm);
        assert_eq!(a.numeric, b.numeric);
        // List separators are left alone.
        assert_eq!(
            normalize_cell("Canterbury, West Coast").norm,
            "canterbury, west coast"
        );
        assert_eq!(normalize_cell("1,2").norm, "1,2");
        assert_eq!(normalize_cell("1,2345").norm, "1,2345");
    }

    #[test]
    fn enclosing_brackets_only_when_whole() {
        assert_eq!(normalize_cell("\"Nan\"").norm, "nan");
        assert_eq!(normalize_cell("(a) and (b)").norm, "(a) and (b)");
        assert_eq!(normalize_cell("[(x)]").norm, "x");
        assert_eq!(normalize_cell("Total Area (km2)").norm, "total area (km2)");
    }

    #[test]
    fn decimal_grammar() {
        assert_eq!(Decimal::parse("007.50").unwrap().as_str(), "7.5");
        assert_eq!(Decimal::parse("-0.0").unwrap().as_str(), "0");
        assert_eq!(Decimal::parse(".5").unwrap().as_str(), "0.5");
        assert_eq!(Decimal::parse("+3").unwrap().as_str(), "3");
        assert!(Decimal::parse("1e5").is_none());
        assert!(Decimal::parse("1.2.3").is_none());
        assert!(Decimal::parse("-").is_none());
        assert!(Decimal::parse(".").is_none());
        assert!(Decimal::parse("").is_none());
    }

    #[test]
    fn empty_body_table() {
        let t = parse_table("| A |\n|---|\n", ParseMode::Strict).unwrap();
        assert_eq!(t.headers, vec!["a"]);
        assert_eq!(t.num_rows(), 0);
    }

    #[test]
    fn strict_rejects_ragged_row() {
        let err = parse_table("|A|B|\n|-|-|\n|1|", ParseMode::Strict).unwrap_err();
        assert_eq!(
            err,
            TableError::RowWidthMismatch {
                row: 0,
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn lenient_pads_ragged_row() {
        let (t, warnings) =
            parse_table_with_warnings("|A|B|\n|-|-|\n|1|\n|1|2|3|", ParseMode::Lenient).unwrap();
        assert_eq!(t.rows[0].len(), 2);
        assert_eq!(t.rows[0][1].norm, "");
        assert_eq!(t.rows[1][1].norm, "2");
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn malformed_tables() {
        assert!(matches!(
            parse_table("| A | B |\n| 1 | 2 |", ParseMode::Strict),
            Err(TableError::MalformedTable(_))
        ));
        assert!(matches!(
            parse_table("| A | a. |\n|---|---|", ParseMode::Strict),
            Err(TableError::MalformedTable(_))
        ));
        assert!(matches!(
            parse_table("", ParseMode::Strict),
            Err(TableError::MalformedTable(_))
        ));
        assert!(matches!(
            parse_table("no pipes\n---", ParseMode::Strict),
            Err(TableError::MalformedTable(_))
        ));
    }

    #[test]
    fn pipes_optional_and_escaped() {
        let t = parse_table("A | B\n--- | :---:\nx \\| y | 2", ParseMode::Strict).unwrap();
        assert_eq!(t.headers, vec!["a", "b"]);
        assert_eq!(t.rows[0][0].raw, "x | y");
        let again = parse_table(&t.render(), ParseMode::Strict).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn empty_cells_survive() {
        let t = parse_table("| A | B |\n|---|---|\n|  | 2 |", ParseMode::Strict).unwrap();
        assert_eq!(t.rows[0][0].norm, "");
        assert_eq!(t.rows[0][1].norm, "2");
    }

    #[test]
    fn parse_answer_records_span() {
        let text = "<think>x</think>\n```markdown\n| A |\n|---|\n| 1 |\n```";
        let t = parse_answer(text).unwrap();
        let span = t.source_span.clone().unwrap();
        assert_eq!(&text[span], "| A |\n|---|\n| 1 |");
    }
}
