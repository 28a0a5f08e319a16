//! Quantized impact index: per-document term impacts computed by the model,
//! linearly quantized to 8 bits against a global scale, stored as a
//! compressed inverted index with canonical byte-exact serialization.

mod format;
mod varint;

pub use format::{index_to_bytes, read_index, write_index, FormatError};

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::expansion::ExpandedDocument;
use crate::impact::{featurize, term_impact, CollectionStats, ImpactModel};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("impact for term '{term}' in doc '{doc_id}' is {value}, outside [0, w_max]")]
    ImpactOutOfRange {
        doc_id: String,
        term: String,
        value: f64,
    },
    #[error("quantization input {w} outside [0, {w_max}]")]
    QuantizeRange { w: f64, w_max: f64 },
    #[error("w_max must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("duplicate doc_id '{0}'")]
    DuplicateDocId(String),
    #[error("invalid index structure: {0}")]
    Invalid(String),
}

/// One posting: a dense document id and its quantized impact. Zero-impact
/// postings are never stored, so `q_impact >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpactPosting {
    pub doc: u32,
    pub q_impact: u8,
}

/// A term's postings, sorted by doc id strictly ascending, never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostingList {
    pub term: String,
    pub postings: Vec<ImpactPosting>,
    pub max_q_impact: u8,
}

/// The inverted index. Immutable after build or read; safe for unlimited
/// concurrent readers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactIndex {
    num_docs: u32,
    w_max: f64,
    lexicon: BTreeMap<String, PostingList>,
    doc_table: Vec<String>,
}

impl ImpactIndex {
    /// Assembles an index from raw posting lists, validating every
    /// structural invariant. `max_q_impact` is computed, not trusted.
    pub fn from_parts(
        num_docs: u32,
        w_max: f64,
        lists: impl IntoIterator<Item = (String, Vec<ImpactPosting>)>,
        doc_table: Vec<String>,
    ) -> Result<Self, IndexError> {
        if doc_table.len() != num_docs as usize {
            return Err(IndexError::Invalid(format!(
                "doc table has {} entries for {} docs",
                doc_table.len(),
                num_docs
            )));
        }
        let mut lexicon = BTreeMap::new();
        for (term, postings) in lists {
            if postings.is_empty() {
                return Err(IndexError::Invalid(format!("term '{term}' has no postings")));
            }
            if term.len() > u16::MAX as usize {
                return Err(IndexError::Invalid(format!("term longer than {} bytes", u16::MAX)));
            }
            let mut max_q = 0u8;
            let mut prev: Option<u32> = None;
            for p in &postings {
                if p.q_impact == 0 {
                    return Err(IndexError::Invalid(format!(
                        "term '{term}' doc {} has zero q_impact",
                        p.doc
                    )));
                }
                if p.doc >= num_docs {
                    return Err(IndexError::Invalid(format!(
                        "term '{term}' references doc {} >= num_docs {num_docs}",
                        p.doc
                    )));
                }
                if let Some(prev) = prev {
                    if p.doc <= prev {
                        return Err(IndexError::Invalid(format!(
                            "term '{term}' postings not strictly ascending at doc {}",
                            p.doc
                        )));
                    }
                }
                prev = Some(p.doc);
                max_q = max_q.max(p.q_impact);
            }
            if lexicon
                .insert(
                    term.clone(),
                    PostingList {
                        term,
                        postings,
                        max_q_impact: max_q,
                    },
                )
                .is_some()
            {
                return Err(IndexError::Invalid("duplicate term in lists".into()));
            }
        }
        if !lexicon.is_empty() && !(w_max > 0.0 && w_max.is_finite()) {
            return Err(IndexError::BadScale(w_max));
        }
        if doc_table.iter().any(|d| d.len() > u16::MAX as usize) {
            return Err(IndexError::Invalid(format!(
                "doc_id longer than {} bytes",
                u16::MAX
            )));
        }
        Ok(ImpactIndex {
            num_docs,
            w_max,
            lexicon,
            doc_table,
        })
    }

    pub fn num_docs(&self) -> u32 {
        self.num_docs
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    /// Quantization width; fixed at 8 bits.
    pub fn bits(&self) -> u8 {
        8
    }

    pub fn num_terms(&self) -> usize {
        self.lexicon.len()
    }

    pub fn postings(&self, term: &str) -> Option<&PostingList> {
        self.lexicon.get(term)
    }

    /// Terms in lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = &PostingList> {
        self.lexicon.values()
    }

    pub fn doc_id(&self, dense: u32) -> Option<&str> {
        self.doc_table.get(dense as usize).map(String::as_str)
    }

    pub fn doc_table(&self) -> &[String] {
        &self.doc_table
    }

    /// An index with no postings is valid but unsearchable.
    pub fn is_unsearchable(&self) -> bool {
        self.lexicon.is_empty()
    }

    pub fn total_postings(&self) -> usize {
        self.lexicon.values().map(|l| l.postings.len()).sum()
    }

    /// Debug dump: one term per line, `{"term":…,"postings":[[doc,q],…]}`,
    /// lexicographic term order.
    pub fn write_debug_dump<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for list in self.lexicon.values() {
            let postings: Vec<[u32; 2]> = list
                .postings
                .iter()
                .map(|p| [p.doc, u32::from(p.q_impact)])
                .collect();
            let line = serde_json::json!({ "term": list.term, "postings": postings });
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Linear 8-bit quantization against the global scale: round-half-up of
/// `w·255/w_max`, with positive impacts clamped up to 1 so a matching term
/// is never dropped from the index.
pub fn quantize_impact(w: f64, w_max: f64) -> Result<u8, IndexError> {
    if !(w_max > 0.0 && w_max.is_finite()) {
        return Err(IndexError::BadScale(w_max));
    }
    if !(0.0..=w_max).contains(&w) {
        return Err(IndexError::QuantizeRange { w, w_max });
    }
    let q = (w / w_max * 255.0).round() as u8;
    if w > 0.0 && q == 0 {
        Ok(1)
    } else {
        Ok(q)
    }
}

/// Raw (pre-quantization) impacts for one document: every unique term,
/// original and injected, zero impacts retained.
#[derive(Debug, Clone, PartialEq)]
pub struct DocImpacts {
    pub doc_id: String,
    pub impacts: BTreeMap<String, f64>,
}

/// Evaluates the model on every term of every expanded document.
pub fn compute_collection_impacts(
    model: &ImpactModel,
    docs: &[ExpandedDocument],
) -> Vec<DocImpacts> {
    let stats = CollectionStats::build(docs);
    docs.iter()
        .map(|doc| {
            let impacts = doc
                .terms
                .iter()
                .enumerate()
                .map(|(pos, entry)| {
                    (
                        entry.term.clone(),
                        term_impact(model, &featurize(doc, pos, &stats)),
                    )
                })
                .collect();
            DocImpacts {
                doc_id: doc.doc_id.clone(),
                impacts,
            }
        })
        .collect()
}

/// Builds the inverted index. Documents get dense ids in input order;
/// `w_max` is the global maximum raw impact unless overridden; zero-impact
/// postings are dropped. An all-zero collection yields a valid, empty,
/// unsearchable index.
pub fn build_index(
    impacts: &[DocImpacts],
    w_max_override: Option<f64>,
) -> Result<ImpactIndex, IndexError> {
    let mut doc_table = Vec::with_capacity(impacts.len());
    let mut seen = std::collections::HashSet::new();
    for doc in impacts {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(IndexError::DuplicateDocId(doc.doc_id.clone()));
        }
        doc_table.push(doc.doc_id.clone());
    }

    let global_max = impacts
        .iter()
        .flat_map(|d| d.impacts.values())
        .cloned()
        .fold(0.0f64, f64::max);
    let w_max = w_max_override.unwrap_or(global_max);

    let mut lists: BTreeMap<String, Vec<ImpactPosting>> = BTreeMap::new();
    for (dense, doc) in impacts.iter().enumerate() {
        for (term, &w) in &doc.impacts {
            if !w.is_finite() || w < 0.0 || (w_max > 0.0 && w > w_max) {
                return Err(IndexError::ImpactOutOfRange {
                    doc_id: doc.doc_id.clone(),
                    term: term.clone(),
                    value: w,
                });
            }
            if w == 0.0 {
                continue;
            }
            let q = quantize_impact(w, w_max)?;
            lists.entry(term.clone()).or_default().push(ImpactPosting {
                doc: dense as u32,
                q_impact: q,
            });
        }
    }

    ImpactIndex::from_parts(impacts.len() as u32, w_max, lists, doc_table)
}
