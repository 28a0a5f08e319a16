//! Canonical binary serialization.
//!
//! Layout (integers little-endian):
//! ```text
//! "IMPX"            magic, 4 bytes
//! version           u8 = 1
//! num_docs          u32
//! w_max             f64 as IEEE-754 bits (u64)
//! term_count        u32
//! per term, in lexicographic order:
//!   term_len u16, term bytes (UTF-8)
//!   posting_count u32
//!   max_q_impact u8
//!   payload_len u32
//!   payload: per posting, varint doc gap then impact u8
//!            (first gap = first doc id, later gaps = diff to predecessor)
//! doc table:
//!   count u32; per doc: len u16, doc_id bytes (UTF-8)
//! ```
//! Equal indexes always produce identical bytes.

use std::io::Write;

use thiserror::Error;

use super::varint::{read_varint, write_varint};
use super::{ImpactIndex, ImpactPosting};

const MAGIC: &[u8; 4] = b"IMPX";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("byte {offset}: bad magic, expected \"IMPX\"")]
    BadMagic { offset: usize },
    #[error("byte {offset}: unsupported version {version}")]
    BadVersion { offset: usize, version: u8 },
    #[error("byte {offset}: unexpected end of input")]
    Truncated { offset: usize },
    #[error("byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes an index; equal indexes produce identical bytes.
pub fn index_to_bytes(index: &ImpactIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&index.num_docs().to_le_bytes());
    out.extend_from_slice(&index.w_max().to_bits().to_le_bytes());
    out.extend_from_slice(&(index.num_terms() as u32).to_le_bytes());

    for list in index.terms() {
        out.extend_from_slice(&(list.term.len() as u16).to_le_bytes());
        out.extend_from_slice(list.term.as_bytes());
        out.extend_from_slice(&(list.postings.len() as u32).to_le_bytes());
        out.push(list.max_q_impact);

        let mut payload = Vec::new();
        let mut prev: Option<u32> = None;
        for p in &list.postings {
            let gap = match prev {
                None => u64::from(p.doc),
                Some(prev) => u64::from(p.doc - prev),
            };
            write_varint(gap, &mut payload);
            payload.push(p.q_impact);
            prev = Some(p.doc);
        }
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }

    out.extend_from_slice(&(index.doc_table().len() as u32).to_le_bytes());
    for doc_id in index.doc_table() {
        out.extend_from_slice(&(doc_id.len() as u16).to_le_bytes());
        out.extend_from_slice(doc_id.as_bytes());
    }
    out
}

pub fn write_index<W: Write>(index: &ImpactIndex, mut writer: W) -> Result<(), FormatError> {
    writer.write_all(&index_to_bytes(index))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated { offset: self.pos });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64, FormatError> {
        let start = self.pos;
        read_varint(self.bytes, &mut self.pos).ok_or(FormatError::Truncated { offset: start })
    }

    fn utf8(&mut self, len: usize) -> Result<String, FormatError> {
        let offset = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed {
            offset,
            msg: "invalid UTF-8".into(),
        })
    }
}

/// Parses an index, validating magic, version, term order, posting order,
/// impact and payload consistency, and the doc-table size.
pub fn read_index(bytes: &[u8]) -> Result<ImpactIndex, FormatError> {
    let mut r = Reader { bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(FormatError::BadMagic { offset: 0 });
    }
    let version_offset = r.pos;
    let version = r.u8()?;
    if version != VERSION {
        return Err(FormatError::BadVersion {
            offset: version_offset,
            version,
        });
    }

    let num_docs = r.u32()?;
    let w_max = f64::from_bits(r.u64()?);
    if w_max.is_nan() {
        return Err(FormatError::Malformed {
            offset: r.pos - 8,
            msg: "w_max is NaN".into(),
        });
    }
    let term_count = r.u32()?;

    let mut lists: Vec<(String, Vec<ImpactPosting>)> = Vec::with_capacity(term_count as usize);
    let mut prev_term: Option<String> = None;
    for _ in 0..term_count {
        let term_len = r.u16()? as usize;
        let term_offset = r.pos;
        let term = r.utf8(term_len)?;
        if let Some(prev) = &prev_term {
            if term <= *prev {
                return Err(FormatError::Malformed {
                    offset: term_offset,
                    msg: format!("term '{term}' out of lexicographic order"),
                });
            }
        }

        let posting_count = r.u32()?;
        if posting_count == 0 {
            return Err(FormatError::Malformed {
                offset: r.pos - 4,
                msg: format!("term '{term}' has zero postings"),
            });
        }
        let stored_max = r.u8()?;
        let payload_len = r.u32()? as usize;
        let payload_start = r.pos;

        let mut postings = Vec::with_capacity(posting_count as usize);
        let mut doc: u64 = 0;
        let mut max_q = 0u8;
        for i in 0..posting_count {
            let gap_offset = r.pos;
            let gap = r.varint()?;
            if i > 0 && gap == 0 {
                return Err(FormatError::Malformed {
                    offset: gap_offset,
                    msg: format!("term '{term}': zero gap breaks strict doc order"),
                });
            }
            doc = if i == 0 {
                gap
            } else {
                doc.checked_add(gap).ok_or_else(|| FormatError::Malformed {
                    offset: gap_offset,
                    msg: format!("term '{term}': doc id overflow"),
                })?
            };
            if doc >= u64::from(num_docs) {
                return Err(FormatError::Malformed {
                    offset: gap_offset,
                    msg: format!("term '{term}': doc {doc} >= num_docs {num_docs}"),
                });
            }
            let q_offset = r.pos;
            let q_impact = r.u8()?;
            if q_impact == 0 {
                return Err(FormatError::Malformed {
                    offset: q_offset,
                    msg: format!("term '{term}': zero q_impact stored"),
                });
            }
            max_q = max_q.max(q_impact);
            postings.push(ImpactPosting {
                doc: doc as u32,
                q_impact,
            });
        }

        if r.pos - payload_start != payload_len {
            return Err(FormatError::Malformed {
                offset: payload_start,
                msg: format!(
                    "term '{term}': payload length {} does not match postings ({} consumed)",
                    payload_len,
                    r.pos - payload_start
                ),
            });
        }
        if stored_max != max_q {
            return Err(FormatError::Malformed {
                offset: payload_start,
                msg: format!(
                    "term '{term}': stored max_q_impact {stored_max} != computed {max_q}"
                ),
            });
        }

        prev_term = Some(term.clone());
        lists.push((term, postings));
    }

    let table_count = r.u32()?;
    if table_count != num_docs {
        return Err(FormatError::Malformed {
            offset: r.pos - 4,
            msg: format!("doc table has {table_count} entries for {num_docs} docs"),
        });
    }
    let mut doc_table = Vec::with_capacity(table_count as usize);
    for _ in 0..table_count {
        let len = r.u16()? as usize;
        doc_table.push(r.utf8(len)?);
    }

    if r.pos != bytes.len() {
        return Err(FormatError::Malformed {
            offset: r.pos,
            msg: "trailing bytes after doc table".into(),
        });
    }

    ImpactIndex::from_parts(num_docs, w_max, lists, doc_table).map_err(|e| {
        FormatError::Malformed {
            offset: 0,
            msg: e.to_string(),
        }
    })
}
