//! Run files and retrieval quality metrics: MRR, NDCG, recall at fixed
//! depths, and mean response time over a query log.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Qrels, Query};
use crate::index::ImpactIndex;
use crate::search::maxscore_daat;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("query {query_id}: ranks are not contiguous from 1 (found {found} at position {pos})")]
    BadRanks {
        query_id: String,
        found: u32,
        pos: usize,
    },
    #[error("empty query log")]
    NoQueries,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One run line: `query_id Q0 doc_id rank score tag`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
    pub tag: String,
}

/// A ranked retrieval run. Within a query, entries are ordered by
/// (score desc, doc_id asc) with ranks 1..n and no gaps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrecRun {
    pub entries: Vec<RunEntry>,
}

impl TrecRun {
    /// Appends one query's results. `ranked` is (doc_id, score); ties by
    /// score are canonicalized to doc_id ascending before ranks are
    /// assigned, so emitted files do not depend on internal doc numbering.
    pub fn push_ranked(&mut self, query_id: &str, ranked: &[(String, f64)], tag: &str) {
        let mut ordered: Vec<&(String, f64)> = ranked.iter().collect();
        ordered.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores must not be NaN")
                .then_with(|| a.0.cmp(&b.0))
        });
        for (i, (doc_id, score)) in ordered.into_iter().enumerate() {
            self.entries.push(RunEntry {
                query_id: query_id.to_string(),
                doc_id: doc_id.clone(),
                rank: (i + 1) as u32,
                score: *score,
                tag: tag.to_string(),
            });
        }
    }

    /// Ranked doc_ids per query, in rank order.
    pub fn by_query(&self) -> BTreeMap<&str, Vec<&RunEntry>> {
        let mut map: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(&e.query_id).or_default().push(e);
        }
        for ranked in map.values_mut() {
            ranked.sort_by_key(|e| e.rank);
        }
        map
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), EvalError> {
        for e in &self.entries {
            writeln!(
                writer,
                "{} Q0 {} {} {} {}",
                e.query_id, e.doc_id, e.rank, e.score, e.tag
            )?;
        }
        Ok(())
    }

    /// Parses run lines, validating field count, numeric fields, and rank
    /// contiguity per query.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(EvalError::Parse {
                    line: lineno,
                    msg: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let rank: u32 = fields[3].parse().map_err(|_| EvalError::Parse {
                line: lineno,
                msg: format!("bad rank '{}'", fields[3]),
            })?;
            let score: f64 = fields[4].parse().map_err(|_| EvalError::Parse {
                line: lineno,
                msg: format!("bad score '{}'", fields[4]),
            })?;
            entries.push(RunEntry {
                query_id: fields[0].to_string(),
                doc_id: fields[2].to_string(),
                rank,
                score,
                tag: fields[5].to_string(),
            });
        }
        let run = TrecRun { entries };
        for (qid, ranked) in run.by_query() {
            for (pos, e) in ranked.iter().enumerate() {
                if e.rank != (pos + 1) as u32 {
                    return Err(EvalError::BadRanks {
                        query_id: qid.to_string(),
                        found: e.rank,
                        pos: pos + 1,
                    });
                }
            }
        }
        Ok(run)
    }
}

/// Mean reciprocal rank at `cutoff`. A document counts as relevant when its
/// grade is >= `binarize_grade`. The mean runs over the queries present in
/// the qrels; queries without a single relevant document contribute 0.
pub fn mrr_at(run: &TrecRun, qrels: &Qrels, cutoff: usize, binarize_grade: u32) -> f64 {
    let by_query = run.by_query();
    if qrels.num_queries() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for qid in qrels.queries() {
        if let Some(ranked) = by_query.get(qid) {
            for e in ranked.iter().take(cutoff) {
                if qrels.grade(qid, &e.doc_id) >= binarize_grade {
                    total += 1.0 / f64::from(e.rank);
                    break;
                }
            }
        }
    }
    total / qrels.num_queries() as f64
}

/// Normalized discounted cumulative gain at `cutoff` with gains 2^grade − 1
/// and discounts log2(rank + 1). A query whose ideal DCG is zero scores 0.
pub fn ndcg_at(run: &TrecRun, qrels: &Qrels, cutoff: usize) -> f64 {
    let by_query = run.by_query();
    if qrels.num_queries() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for qid in qrels.queries() {
        let mut dcg = 0.0;
        if let Some(ranked) = by_query.get(qid) {
            for e in ranked.iter().take(cutoff) {
                let grade = qrels.grade(qid, &e.doc_id);
                if grade > 0 {
                    dcg += gain(grade) / f64::from(e.rank + 1).log2();
                }
            }
        }
        let mut grades: Vec<u32> = qrels
            .doc_grades(qid)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let ideal: f64 = grades
            .iter()
            .take(cutoff)
            .enumerate()
            .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
            .sum();
        if ideal > 0.0 {
            total += dcg / ideal;
        }
    }
    total / qrels.num_queries() as f64
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Fraction of relevant documents found in the top `depth`, averaged over
/// the qrels queries that have at least one relevant document; queries with
/// none are excluded from the mean entirely.
pub fn recall_at(run: &TrecRun, qrels: &Qrels, depth: usize, binarize_grade: u32) -> f64 {
    let by_query = run.by_query();
    let mut total = 0.0;
    let mut counted = 0usize;
    for qid in qrels.queries() {
        let relevant = qrels.num_relevant(qid, binarize_grade);
        if relevant == 0 {
            continue;
        }
        counted += 1;
        let mut found = 0usize;
        if let Some(ranked) = by_query.get(qid) {
            for e in ranked.iter().take(depth) {
                if qrels.grade(qid, &e.doc_id) >= binarize_grade {
                    found += 1;
                }
            }
        }
        total += found as f64 / relevant as f64;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Mean response time in milliseconds of MaxScore top-k retrieval over the
/// query log: one untimed warm-up pass, then `repetitions` timed passes,
/// single-threaded, averaged over repetitions × queries.
pub fn measure_mrt(
    index: &ImpactIndex,
    queries: &[Query],
    k: usize,
    repetitions: usize,
) -> Result<f64, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let reps = repetitions.max(1);
    for q in queries {
        let _ = maxscore_daat(index, q, k);
    }
    let mut total_ns = 0u128;
    for _ in 0..reps {
        for q in queries {
            let start = std::time::Instant::now();
            let _ = maxscore_daat(index, q, k);
            total_ns += start.elapsed().as_nanos();
        }
    }
    Ok(total_ns as f64 / (reps * queries.len()) as f64 / 1.0e6)
}

/// Aggregated quality report for one run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrt_ms: Option<f64>,
    pub num_queries: usize,
}

impl MetricsReport {
    /// Computes the standard report: MRR@10, NDCG@10, and recall at each of
    /// `recall_depths`. `num_queries` is the number of qrels queries.
    pub fn compute(run: &TrecRun, qrels: &Qrels, recall_depths: &[usize], binarize_grade: u32) -> Self {
        let recall_at = recall_depths
            .iter()
            .map(|&d| (d, recall_at(run, qrels, d, binarize_grade)))
            .collect();
        MetricsReport {
            mrr_at_10: mrr_at(run, qrels, 10, binarize_grade),
            ndcg_at_10: ndcg_at(run, qrels, 10),
            recall_at,
            mrt_ms: None,
            num_queries: qrels.num_queries(),
        }
    }

    /// Plain-text table with aligned columns.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("MRR@10".to_string(), format!("{:.4}", self.mrr_at_10)),
            ("NDCG@10".to_string(), format!("{:.4}", self.ndcg_at_10)),
        ];
        for (depth, value) in &self.recall_at {
            rows.push((format!("Recall@{depth}"), format!("{value:.4}")));
        }
        if let Some(mrt) = self.mrt_ms {
            rows.push(("MRT(ms)".to_string(), format!("{mrt:.4}")));
        }
        rows.push(("queries".to_string(), self.num_queries.to_string()));
        let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<width$}  {value}\n"));
        }
        out
    }
}
