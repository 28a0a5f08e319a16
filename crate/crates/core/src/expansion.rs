//! Expansion-query filtration and document merging.
//!
//! Candidate queries are filtered globally: all (document, query) pairs are
//! pooled, ranked by relevance score, and the top `ceil(fraction · total)`
//! survive. Survivors are merged into their documents as injected terms.

use std::collections::BTreeSet;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Document, ExpansionRecord};

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("doc '{doc_id}': query without relevance score")]
    MissingScore { doc_id: String },
    #[error("expansion references unknown doc '{doc_id}'")]
    UnknownDoc { doc_id: String },
}

/// One entry of an expanded document's term sequence. `injected` is true
/// exactly when the term came from an expansion query and not the original
/// text (equivalently, `tf_original == 0`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedTerm {
    pub term: String,
    pub tf_original: u32,
    pub injected: bool,
}

/// A document after expansion merging: unique terms in first-occurrence
/// order, original terms before injected ones. `original_length` is the
/// original token count (before deduplication or injection).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedDocument {
    pub doc_id: String,
    pub terms: Vec<ExpandedTerm>,
    pub original_length: usize,
}

impl ExpandedDocument {
    /// Expansion-free view of a document: unique original terms with their
    /// term frequencies.
    pub fn from_document(doc: &Document) -> Self {
        let mut terms: Vec<ExpandedTerm> = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        for tok in &doc.tokens {
            if seen.insert(tok) {
                terms.push(ExpandedTerm {
                    term: tok.clone(),
                    tf_original: 0,
                    injected: false,
                });
            }
        }
        for entry in &mut terms {
            entry.tf_original = doc.tokens.iter().filter(|t| **t == entry.term).count() as u32;
        }
        ExpandedDocument {
            doc_id: doc.doc_id.clone(),
            terms,
            original_length: doc.tokens.len(),
        }
    }

    /// Appends the queries' terms that are not already present, deduplicated,
    /// in query order, flagged injected. Idempotent.
    pub fn inject_queries<S: AsRef<str>>(&mut self, queries: &[S]) {
        let mut present: HashSet<String> =
            self.terms.iter().map(|t| t.term.clone()).collect();
        for query in queries {
            for tok in tokenize(query.as_ref()) {
                if present.insert(tok.clone()) {
                    self.terms.push(ExpandedTerm {
                        term: tok,
                        tf_original: 0,
                        injected: true,
                    });
                }
            }
        }
    }

    pub fn unique_term_count(&self) -> usize {
        self.terms.len()
    }
}

/// Merges expansion queries into a document: original unique terms first
/// (with original tf), then new terms in query order with tf 0 and the
/// injected flag.
pub fn merge_expansion<S: AsRef<str>>(doc: &Document, queries: &[S]) -> ExpandedDocument {
    let mut expanded = ExpandedDocument::from_document(doc);
    expanded.inject_queries(queries);
    expanded
}

/// Outcome of a filtration pass. `threshold_score` is the lowest retained
/// score (0 when nothing was retained).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationReport {
    pub total_queries: usize,
    pub retained: usize,
    pub threshold_score: f64,
    pub fraction: f64,
}

/// Keeps the top `ceil(fraction · total)` queries of the global pool, ranked
/// by score descending with ties resolved by input order (record order, then
/// query order within a record). Per-record query order is preserved among
/// survivors. Every query must carry a score.
pub fn filter_expansions(
    records: &[ExpansionRecord],
    fraction: f64,
) -> Result<(Vec<ExpansionRecord>, FiltrationReport), ExpansionError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExpansionError::InvalidFraction(fraction));
    }

    let mut pool: Vec<(usize, usize, f64)> = Vec::new();
    for (ri, record) in records.iter().enumerate() {
        for (qi, query) in record.queries.iter().enumerate() {
            let score = query.score.ok_or_else(|| ExpansionError::MissingScore {
                doc_id: record.doc_id.clone(),
            })?;
            pool.push((ri, qi, score));
        }
    }

    let total = pool.len();
    // Stable sort: equal scores keep input order.
    pool.sort_by(|a, b| b.2.total_cmp(&a.2));
    let retained = ((fraction * total as f64).ceil() as usize).min(total);
    let threshold_score = if retained > 0 { pool[retained - 1].2 } else { 0.0 };

    let keep: HashSet<(usize, usize)> = pool[..retained]
        .iter()
        .map(|&(ri, qi, _)| (ri, qi))
        .collect();

    let filtered: Vec<ExpansionRecord> = records
        .iter()
        .enumerate()
        .map(|(ri, record)| ExpansionRecord {
            doc_id: record.doc_id.clone(),
            queries: record
                .queries
                .iter()
                .enumerate()
                .filter(|(qi, _)| keep.contains(&(ri, *qi)))
                .map(|(_, q)| q.clone())
                .collect(),
        })
        .collect();

    let report = FiltrationReport {
        total_queries: total,
        retained,
        threshold_score,
        fraction,
    };
    Ok((filtered, report))
}

/// Token-overlap Jaccard between a query and a document's unique terms.
/// Stand-in for a neural relevance scorer, for self-contained demos only.
pub fn jaccard_score(doc: &Document, query_text: &str) -> f64 {
    let d: BTreeSet<String> = doc.tokens.iter().cloned().collect();
    let q: BTreeSet<String> = tokenize(query_text).into_iter().collect();
    let inter = q.intersection(&d).count();
    let union = q.union(&d).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Fills missing query scores with the Jaccard stand-in. Fails on records
/// whose doc_id is not in the collection.
pub fn apply_standin_scores(
    records: &mut [ExpansionRecord],
    collection: &[Document],
) -> Result<(), ExpansionError> {
    let by_id: std::collections::HashMap<&str, &Document> = collection
        .iter()
        .map(|d| (d.doc_id.as_str(), d))
        .collect();
    for record in records.iter_mut() {
        let doc = by_id
            .get(record.doc_id.as_str())
            .ok_or_else(|| ExpansionError::UnknownDoc {
                doc_id: record.doc_id.clone(),
            })?;
        for query in &mut record.queries {
            if query.score.is_none() {
                query.score = Some(jaccard_score(doc, &query.text));
            }
        }
    }
    Ok(())
}

/// Truncates a document's token stream to `max_tokens`, rebuilding the text
/// from the surviving tokens (a fixed point of tokenization).
pub fn truncate_document(doc: &Document, max_tokens: usize) -> Document {
    if doc.tokens.len() <= max_tokens {
        return doc.clone();
    }
    Document::new(doc.doc_id.clone(), doc.tokens[..max_tokens].join(" "))
}

/// Truncates an expanded document's term sequence to its first `max_terms`
/// entries; `original_length` is untouched.
pub fn truncate_expanded(expanded: &ExpandedDocument, max_terms: usize) -> ExpandedDocument {
    let mut out = expanded.clone();
    out.terms.truncate(max_terms);
    out
}
