//! `search` and `access` over a local document corpus.
//!
//! The corpus is a JSONL file of `{"id", "title", "text"}` records. Document
//! ids double as URLs. Search ranks with Okapi BM25 over title and body;
//! access returns the body window with the most query-term hits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const LOCAL_TOOLS_VERSION: &str = "local-bm25/1";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("corpus format error at line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file is invalid: {0}")]
    BadIndex(#[from] serde_json::Error),
    #[error("unknown URL '{0}'")]
    UnknownUrl(String),
    #[error("tool service unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub title: String,
    pub text: String,
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusDoc>, ToolError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file))
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusDoc>, ToolError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ToolError::CorpusFormat {
            line: i + 1,
            message,
        };
        let doc: CorpusDoc = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if doc.text.trim().is_empty() {
            return Err(bad(format!("document '{}' has an empty body", doc.id)));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(bad(format!("duplicate document id '{}'", doc.id)));
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(ToolError::CorpusFormat {
            line: 0,
            message: "corpus is empty".into(),
        });
    }
    Ok(docs)
}

/// Lowercased alphanumeric terms.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolParams {
    pub search_k: usize,
    /// Words considered when picking a snippet window.
    pub snippet_words: usize,
    pub snippet_chars: usize,
    /// Words returned by `access`.
    pub access_words: usize,
}

impl Default for ToolParams {
    fn default() -> Self {
        Self {
            search_k: 5,
            snippet_words: 30,
            snippet_chars: 240,
            access_words: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexedDoc {
    id: String,
    title: String,
    text: String,
    len: u32,
}

/// Immutable inverted index. Serializes deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    docs: Vec<IndexedDoc>,
    /// term -> [(doc, term frequency)] in doc order.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avg_len: f64,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub rank: usize,
    pub doc_id: String,
    pub title: String,
    pub snippet: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResults {
    pub k: usize,
    pub hits: Vec<SearchHit>,
}

impl SearchResults {
    /// `rank. [doc_id] title — snippet`, one hit per line.
    pub fn render(&self, query: &str) -> String {
        if self.hits.is_empty() {
            return format!("No results found for query: {query}");
        }
        self.hits
            .iter()
            .map(|h| {
                format!(
                    "{}. [{}] {} \u{2014} {}",
                    h.rank, h.doc_id, h.title, h.snippet
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Index {
    pub fn build(docs: &[CorpusDoc]) -> Result<Self, ToolError> {
        if docs.is_empty() {
            return Err(ToolError::CorpusFormat {
                line: 0,
                message: "corpus is empty".into(),
            });
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut indexed = Vec::with_capacity(docs.len());
        let mut total_len = 0u64;
        for (d, doc) in docs.iter().enumerate() {
            let terms = analyze(&format!("{} {}", doc.title, doc.text));
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (t, f) in tf {
                postings
                    .entry(t.to_string())
                    .or_default()
                    .push((d as u32, f));
            }
            total_len += terms.len() as u64;
            indexed.push(IndexedDoc {
                id: doc.id.clone(),
                title: doc.title.clone(),
                text: doc.text.clone(),
                len: terms.len() as u32,
            });
        }
        let mut index = Index {
            avg_len: total_len as f64 / docs.len() as f64,
            docs: indexed,
            postings,
            by_id: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.by_id = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
    }

    pub fn from_corpus_file(path: &Path) -> Result<Self, ToolError> {
        Self::build(&read_corpus(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ToolError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let mut index: Index = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        index.rebuild_lookup();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every document with at least one query term.
    pub fn scores(&self, query: &str) -> Vec<(usize, f64)> {
        let mut qterms = analyze(query);
        qterms.sort();
        qterms.dedup();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &qterms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(d, tf) in list {
                let len = self.docs[d as usize].len as f64;
                let tf = tf as f64;
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * len / self.avg_len);
                *acc.entry(d as usize).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + norm);
            }
        }
        acc.into_iter().collect()
    }

    pub fn search(&self, query: &str, k: usize, params: &ToolParams) -> SearchResults {
        let mut scored = self.scores(query);
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0].id.cmp(&self.docs[b.0].id))
        });
        let qterms: HashSet<String> = analyze(query).into_iter().collect();
        let hits = scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (d, score))| {
                let doc = &self.docs[d];
                let window = best_window(&doc.text, &qterms, params.snippet_words);
                SearchHit {
                    rank: r + 1,
                    doc_id: doc.id.clone(),
                    title: doc.title.clone(),
                    snippet: truncate_chars(window, params.snippet_chars),
                    score,
                }
            })
            .collect();
        SearchResults { k, hits }
    }

    pub fn access(&self, url: &str, query: &str, params: &ToolParams) -> Result<String, ToolError> {
        let &d = self
            .by_id
            .get(url)
            .ok_or_else(|| ToolError::UnknownUrl(url.to_string()))?;
        let qterms: HashSet<String> = analyze(query).into_iter().collect();
        Ok(best_window(&self.docs[d].text, &qterms, params.access_words).to_string())
    }
}

/// Byte spans of whitespace-separated words.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Contiguous window of at most `width` words with the most query-term
/// occurrences; earliest window wins ties, so no hits yields the head.
pub fn best_window<'a>(text: &'a str, qterms: &HashSet<String>, width: usize) -> &'a str {
    let spans = word_spans(text);
    if spans.is_empty() || width == 0 {
        return "";
    }
    let hits: Vec<u32> = spans
        .iter()
        .map(|&(s, e)| {
            analyze(&text[s..e])
                .iter()
                .filter(|t| qterms.contains(*t))
                .count() as u32
        })
        .collect();
    let width = width.min(spans.len());
    let mut cur: u32 = hits[..width].iter().sum();
    let (mut best, mut best_start) = (cur, 0);
    for start in 1..=spans.len() - width {
        cur = cur + hits[start + width - 1] - hits[start - 1];
        if cur > best {
            best = cur;
            best_start = start;
        }
    }
    &text[spans[best_start].0..spans[best_start + width - 1].1]
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// Tool services as seen by subagents. Results are the text placed in the
/// agent's context.
pub trait ToolBackend: Send + Sync {
    fn search(&self, query: &str) -> Result<String, ToolError>;
    fn access(&self, url: &str, query: &str) -> Result<String, ToolError>;
    fn version(&self) -> String;
}

pub struct LocalTools {
    index: Index,
    params: ToolParams,
}

impl LocalTools {
    pub fn new(index: Index, params: ToolParams) -> Self {
        Self { index, params }
    }

    pub fn index(&self) -> &Index {
        &self.index
    }
}

impl ToolBackend for LocalTools {
    fn search(&self, query: &str) -> Result<String, ToolError> {
        Ok(self
            .index
            .search(query, self.params.search_k, &self.params)
            .render(query))
    }

    fn access(&self, url: &str, query: &str) -> Result<String, ToolError> {
        self.index.access(url, query, &self.params)
    }

    fn version(&self) -> String {
        LOCAL_TOOLS_VERSION.to_string()
    }
}

/// HTTP tool services: `POST {endpoint}/search {"query"}` and
/// `POST {endpoint}/access {"url", "query"}`, each answering `{"result": "..."}`.
#[cfg(feature = "remote")]
pub struct RemoteTools {
    endpoint: String,
    agent: ureq::Agent,
}

#[cfg(feature = "remote")]
impl RemoteTools {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    fn call(&self, path: &str, body: serde_json::Value) -> Result<String, ToolError> {
        let url = format!("{}/{}", self.endpoint.trim_end_matches('/'), path);
        let v: serde_json::Value = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| ToolError::Unavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::Unavailable(e.to_string()))?;
        v["result"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ToolError::Unavailable("response has no result field".into()))
    }
}

#[cfg(feature = "remote")]
impl ToolBackend for RemoteTools {
    fn search(&self, query: &str) -> Result<String, ToolError> {
        self.call("search", serde_json::json!({ "query": query }))
    }

    fn access(&self, url: &str, query: &str) -> Result<String, ToolError> {
        self.call("access", serde_json::json!({ "url": url, "query": query }))
    }

    fn version(&self) -> String {
        format!("remote:{}", self.endpoint)
    }
}
