//! Data model and parsers for collections, queries, qrels, and training data.
//!
//! File formats:
//! - collection: JSONL, one `{"doc_id": ..., "text": ...}` object per line
//! - queries: TSV, `query_id<TAB>query_text`
//! - qrels: TREC 4-column whitespace format, `qid 0 docid grade`
//! - expansions: JSONL, `{"doc_id": ..., "queries": [{"text": ..., "score"?: ...}]}`
//! - distillation groups: JSONL, `{"query_id", "query_text", "positive", "negatives"}`
//! - triples: TSV, `query_id<TAB>query_text<TAB>positive_doc<TAB>negative_doc`
//!
//! All parsed structures are immutable after load and safe to share across
//! threads; parsing itself is single-threaded per stream.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the corpus parsers. Line numbers are 1-based.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate doc_id '{id}'")]
    DuplicateDocId { line: usize, id: String },
    #[error("line {line}: duplicate query_id '{id}'")]
    DuplicateQueryId { line: usize, id: String },
    #[error("group '{query_id}': {msg}")]
    InvalidGroup { query_id: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// pieces. Order and duplicates are preserved. Total: never fails.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_owned)
        .collect()
}

/// A collection document. `tokens` is always `tokenize(text)`; construct via
/// [`Document::new`] to keep that invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Document {
            doc_id: doc_id.into(),
            text,
            tokens,
        }
    }
}

/// A query. Tokens may contain duplicates; deduplication happens at scoring
/// time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl AsRef<str>) -> Self {
        Query {
            query_id: query_id.into(),
            tokens: tokenize(text.as_ref()),
        }
    }
}

/// Relevance judgments: query_id -> doc_id -> grade. Absent pairs mean
/// grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Inserts a judgment; repeated (qid, docid) pairs keep the last grade.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Iterates over all judged queries in sorted order.
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn doc_grades(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    /// Number of documents judged relevant (grade >= `binarize_grade`) for a
    /// query.
    pub fn num_relevant(&self, query_id: &str, binarize_grade: u32) -> usize {
        self.judgments
            .get(query_id)
            .map(|docs| docs.values().filter(|&&g| g >= binarize_grade).count())
            .unwrap_or(0)
    }
}

/// One training triple: a query, a relevant document, and a non-relevant
/// document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTriple {
    pub query: Query,
    pub positive_doc: String,
    pub negative_doc: String,
}

/// One candidate document inside a distillation group, with its teacher
/// relevance score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub doc_id: String,
    pub teacher_score: f64,
}

/// A query with one positive and N hard-negative candidates plus teacher
/// scores. `candidates[positive_index]` is the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationGroup {
    pub query: Query,
    pub candidates: Vec<ScoredCandidate>,
    pub positive_index: usize,
}

#[derive(Serialize, Deserialize)]
struct RawDocument {
    doc_id: String,
    text: String,
}

/// Parses a JSONL collection. Documents keep file order; dense integer ids
/// elsewhere in the pipeline are assigned from that order.
pub fn load_collection<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if raw.doc_id.is_empty() {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: "empty doc_id".into(),
            });
        }
        if !seen.insert(raw.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                line: lineno,
                id: raw.doc_id,
            });
        }
        docs.push(Document::new(raw.doc_id, raw.text));
    }
    Ok(docs)
}

/// Writes a collection in the JSONL format read by [`load_collection`].
pub fn write_collection<W: Write>(docs: &[Document], mut writer: W) -> std::io::Result<()> {
    for doc in docs {
        let raw = RawDocument {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a TSV query log: `query_id<TAB>query_text`.
pub fn load_queries<R: BufRead>(reader: R) -> Result<Vec<Query>, CorpusError> {
    let mut queries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: lineno,
            msg: "expected `query_id<TAB>query_text`".into(),
        })?;
        if !seen.insert(qid.to_owned()) {
            return Err(CorpusError::DuplicateQueryId {
                line: lineno,
                id: qid.to_owned(),
            });
        }
        queries.push(Query::new(qid, text));
    }
    Ok(queries)
}

pub fn write_queries<W: Write>(queries: &[Query], mut writer: W) -> std::io::Result<()> {
    for q in queries {
        writeln!(writer, "{}\t{}", q.query_id, q.tokens.join(" "))?;
    }
    Ok(())
}

/// Parses TREC 4-column qrels: `qid 0 docid grade`, whitespace separated.
/// Repeated (qid, docid) pairs keep the last grade.
pub fn load_qrels<R: BufRead>(reader: R) -> Result<Qrels, CorpusError> {
    let mut qrels = Qrels::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|_| CorpusError::Parse {
            line: lineno,
            msg: format!("non-integer grade '{}'", fields[3]),
        })?;
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut writer: W) -> std::io::Result<()> {
    for qid in qrels.queries() {
        if let Some(docs) = qrels.doc_grades(qid) {
            for (doc_id, grade) in docs {
                writeln!(writer, "{qid} 0 {doc_id} {grade}")?;
            }
        }
    }
    Ok(())
}

/// Parses a TSV triples file:
/// `query_id<TAB>query_text<TAB>positive_doc<TAB>negative_doc`.
pub fn load_triples<R: BufRead>(reader: R) -> Result<Vec<TrainTriple>, CorpusError> {
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[2] == fields[3] {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: format!("positive and negative doc are both '{}'", fields[2]),
            });
        }
        triples.push(TrainTriple {
            query: Query::new(fields[0], fields[1]),
            positive_doc: fields[2].to_owned(),
            negative_doc: fields[3].to_owned(),
        });
    }
    Ok(triples)
}

pub fn write_triples<W: Write>(triples: &[TrainTriple], mut writer: W) -> std::io::Result<()> {
    for t in triples {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}",
            t.query.query_id,
            t.query.tokens.join(" "),
            t.positive_doc,
            t.negative_doc
        )?;
    }
    Ok(())
}

/// One candidate expansion query for a document; `score` is the ELECTRA-style
/// relevance score when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionQuery {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// All candidate expansion queries generated for one document, in generation
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub doc_id: String,
    pub queries: Vec<ExpansionQuery>,
}

/// Parses an expansions JSONL file: `{"doc_id": ..., "queries": [{"text",
/// "score"?}]}` per line. Whether each doc_id resolves against a collection
/// is checked at merge time, not here.
pub fn load_expansions<R: BufRead>(reader: R) -> Result<Vec<ExpansionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExpansionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_expansions<W: Write>(
    records: &[ExpansionRecord],
    mut writer: W,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawScoredDoc {
    doc_id: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGroup {
    query_id: String,
    query_text: String,
    positive: RawScoredDoc,
    negatives: Vec<RawScoredDoc>,
}

/// Parses distillation groups from JSONL. The positive is placed first, so
/// `positive_index` is always 0 after loading.
pub fn load_distillation_groups<R: BufRead>(
    reader: R,
) -> Result<Vec<DistillationGroup>, CorpusError> {
    let mut groups = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawGroup = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if raw.negatives.is_empty() {
            return Err(CorpusError::InvalidGroup {
                query_id: raw.query_id,
                msg: "empty negatives array".into(),
            });
        }
        let mut candidates = Vec::with_capacity(raw.negatives.len() + 1);
        candidates.push(ScoredCandidate {
            doc_id: raw.positive.doc_id,
            teacher_score: raw.positive.score,
        });
        for neg in raw.negatives {
            candidates.push(ScoredCandidate {
                doc_id: neg.doc_id,
                teacher_score: neg.score,
            });
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for cand in &candidates {
            if !seen.insert(cand.doc_id.as_str()) {
                return Err(CorpusError::InvalidGroup {
                    query_id: raw.query_id,
                    msg: format!("duplicate doc_id '{}' in group", cand.doc_id),
                });
            }
        }
        groups.push(DistillationGroup {
            query: Query::new(raw.query_id, &raw.query_text),
            candidates,
            positive_index: 0,
        });
    }
    Ok(groups)
}

/// Writes distillation groups in the JSONL format read by
/// [`load_distillation_groups`].
pub fn write_distillation_groups<W: Write>(
    groups: &[DistillationGroup],
    mut writer: W,
) -> std::io::Result<()> {
    for group in groups {
        let positive = &group.candidates[group.positive_index];
        let raw = RawGroup {
            query_id: group.query.query_id.clone(),
            query_text: group.query.tokens.join(" "),
            positive: RawScoredDoc {
                doc_id: positive.doc_id.clone(),
                score: positive.teacher_score,
            },
            negatives: group
                .candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != group.positive_index)
                .map(|(_, c)| RawScoredDoc {
                    doc_id: c.doc_id.clone(),
                    score: c.teacher_score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
