//! Top-k disjunctive retrieval over the impact index: an exhaustive
//! document-at-a-time oracle and MaxScore dynamic pruning.
//!
//! Scoring is pure integer arithmetic: a document's score is the sum of the
//! stored quantized impacts of the query terms it matches. The global
//! ordering rule is (score descending, doc ascending); both engines apply it
//! identically, which is what makes entry-for-entry differential testing
//! possible.

use std::collections::BinaryHeap;
use std::time::Instant;

use crate::corpus::Query;
use crate::index::{ImpactIndex, PostingList};

/// One retrieved document (dense id) with its integer score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredDoc {
    pub doc: u32,
    pub score: u64,
}

/// Retrieval result: entries sorted by (score desc, doc asc), at most
/// `k_requested` of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopKResult {
    pub entries: Vec<ScoredDoc>,
    pub k_requested: usize,
}

/// Work counters for one query evaluation. `postings_touched` counts each
/// (list, position) whose payload was consumed, at most once per position,
/// so it can never exceed the total postings of the query's terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub postings_touched: usize,
    pub docs_scored: usize,
    pub elapsed_ns: u64,
}

/// Deduplicates query terms, drops out-of-vocabulary ones, and returns the
/// matching posting lists sorted by (max_q_impact ascending, term ascending).
pub fn prepare_query<'a>(index: &'a ImpactIndex, query: &Query) -> Vec<&'a PostingList> {
    let distinct: std::collections::BTreeSet<&str> =
        query.tokens.iter().map(String::as_str).collect();
    let mut handles: Vec<&PostingList> = distinct
        .into_iter()
        .filter_map(|t| index.postings(t))
        .collect();
    handles.sort_by(|a, b| {
        a.max_q_impact
            .cmp(&b.max_q_impact)
            .then_with(|| a.term.cmp(&b.term))
    });
    handles
}

/// Bounded top-k collector enforcing the (score desc, doc asc) order. Kept
/// as a min-heap of the current best k; `worst()` is the running threshold.
struct TopK {
    k: usize,
    // Reverse ordering via HeapEntry's Ord: the heap's max is the WORST of
    // the kept entries under the preference rule.
    heap: BinaryHeap<HeapEntry>,
}

/// Orders so that the heap's maximum is the least-preferred entry:
/// lower score is "greater"; at equal scores a larger doc id is "greater".
#[derive(PartialEq, Eq)]
struct HeapEntry(ScoredDoc);

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .0
            .score
            .cmp(&self.0.score)
            .then_with(|| self.0.doc.cmp(&other.0.doc))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl TopK {
    fn new(k: usize) -> Self {
        assert!(k >= 1, "k must be >= 1");
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Current k-th best score, defined only once k entries are held.
    fn threshold(&self) -> Option<u64> {
        if self.heap.len() == self.k {
            self.heap.peek().map(|e| e.0.score)
        } else {
            None
        }
    }

    fn insert(&mut self, entry: ScoredDoc) {
        if self.heap.len() < self.k {
            self.heap.push(HeapEntry(entry));
            return;
        }
        // Full: the candidate enters only if it beats the current worst
        // under (score desc, doc asc).
        let worst = self.heap.peek().expect("heap is full");
        let beats = entry.score > worst.0.score
            || (entry.score == worst.0.score && entry.doc < worst.0.doc);
        if beats {
            self.heap.pop();
            self.heap.push(HeapEntry(entry));
        }
    }

    fn into_result(self, k_requested: usize) -> TopKResult {
        let mut entries: Vec<ScoredDoc> = self.heap.into_iter().map(|e| e.0).collect();
        entries.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.doc.cmp(&b.doc)));
        TopKResult {
            entries,
            k_requested,
        }
    }
}

/// Read cursor over one posting list with consumed-position accounting.
/// `high_water` marks how far consumption has been counted, so a position
/// is counted at most once no matter how often seeks revisit it.
struct Cursor<'a> {
    list: &'a PostingList,
    pos: usize,
    high_water: usize,
}

impl<'a> Cursor<'a> {
    fn new(list: &'a PostingList) -> Self {
        Cursor {
            list,
            pos: 0,
            high_water: 0,
        }
    }

    fn current_doc(&self) -> Option<u32> {
        self.list.postings.get(self.pos).map(|p| p.doc)
    }

    fn current_impact(&self) -> u64 {
        u64::from(self.list.postings[self.pos].q_impact)
    }

    /// Counts the current position as consumed (once) and steps past it.
    fn consume(&mut self, touched: &mut usize) {
        if self.pos >= self.high_water {
            *touched += 1;
            self.high_water = self.pos + 1;
        }
        self.pos += 1;
    }

    /// Counts the current position as examined without stepping past it.
    fn mark_examined(&mut self, touched: &mut usize) {
        if self.pos >= self.high_water {
            *touched += 1;
            self.high_water = self.pos + 1;
        }
    }

    /// Galloping seek (doubling then binary search) to the first posting
    /// with doc >= target. Returns that doc if any.
    fn seek(&mut self, target: u32) -> Option<u32> {
        let postings = &self.list.postings;
        let len = postings.len();
        if self.pos >= len {
            return None;
        }
        if postings[self.pos].doc >= target {
            return Some(postings[self.pos].doc);
        }
        // postings[pos].doc < target: gallop an upper bound.
        let mut step = 1usize;
        let mut hi = self.pos + step;
        while hi < len && postings[hi].doc < target {
            step <<= 1;
            hi = self.pos + step;
        }
        let lo = self.pos + step / 2; // postings[lo].doc < target holds
        let upper = hi.min(len);
        let idx = lo + postings[lo..upper].partition_point(|p| p.doc < target);
        self.pos = idx;
        postings.get(idx).map(|p| p.doc)
    }
}

/// Scores every document in the union of the query's posting lists by a
/// full document-at-a-time merge. The safe oracle.
pub fn exhaustive_daat(index: &ImpactIndex, query: &Query, k: usize) -> (TopKResult, SearchStats) {
    let start = Instant::now();
    let handles = prepare_query(index, query);
    let mut cursors: Vec<Cursor> = handles.iter().map(|h| Cursor::new(h)).collect();
    let mut topk = TopK::new(k);
    let mut stats = SearchStats::default();

    loop {
        let candidate = cursors.iter().filter_map(Cursor::current_doc).min();
        let Some(candidate) = candidate else { break };
        let mut score = 0u64;
        for cursor in &mut cursors {
            if cursor.current_doc() == Some(candidate) {
                score += cursor.current_impact();
                cursor.consume(&mut stats.postings_touched);
            }
        }
        stats.docs_scored += 1;
        topk.insert(ScoredDoc {
            doc: candidate,
            score,
        });
    }

    stats.elapsed_ns = start.elapsed().as_nanos() as u64;
    (topk.into_result(k), stats)
}

/// MaxScore dynamic pruning. Lists are ordered by max impact ascending with
/// prefix upper bounds `ub[i] = Σ_{j≤i} max_j`; once the running threshold θ
/// (k-th best score) reaches ub[i], lists 0..=i become non-essential and are
/// only probed by seek. Candidates are drawn from the essential lists in
/// ascending doc order; non-essential lists are probed from the largest
/// bound down, stopping as soon as score + ub[i] ≤ θ.
///
/// Safety of the ≤ θ cutoffs: documents are visited in ascending id order,
/// so every held top-k entry has a smaller doc id than the current
/// candidate; a candidate that can at best tie θ loses the (score desc,
/// doc asc) tie and can never enter. Results are therefore identical to
/// [`exhaustive_daat`], entry for entry.
pub fn maxscore_daat(index: &ImpactIndex, query: &Query, k: usize) -> (TopKResult, SearchStats) {
    let start = Instant::now();
    let handles = prepare_query(index, query);
    let n = handles.len();
    let mut cursors: Vec<Cursor> = handles.iter().map(|h| Cursor::new(h)).collect();
    let mut stats = SearchStats::default();
    let mut topk = TopK::new(k);

    // Prefix upper bounds over the max-ascending list order.
    let mut ub = Vec::with_capacity(n);
    let mut acc = 0u64;
    for h in &handles {
        acc += u64::from(h.max_q_impact);
        ub.push(acc);
    }

    let mut first_essential = 0usize;
    loop {
        // Threshold only exists once the heap holds k entries.
        if let Some(theta) = topk.threshold() {
            while first_essential < n && ub[first_essential] <= theta {
                first_essential += 1;
            }
            if first_essential == n {
                break; // no unseen document can beat the k-th score
            }
        }

        let candidate = cursors[first_essential..]
            .iter()
            .filter_map(Cursor::current_doc)
            .min();
        let Some(candidate) = candidate else { break };

        let mut score = 0u64;
        for cursor in &mut cursors[first_essential..] {
            if cursor.current_doc() == Some(candidate) {
                score += cursor.current_impact();
                cursor.consume(&mut stats.postings_touched);
            }
        }
        stats.docs_scored += 1;

        // Probe non-essential lists, largest bound first; stop when even the
        // full remaining bound cannot lift the candidate past θ.
        let theta = topk.threshold();
        for i in (0..first_essential).rev() {
            if let Some(theta) = theta {
                if score + ub[i] <= theta {
                    break;
                }
            }
            if cursors[i].seek(candidate) == Some(candidate) {
                cursors[i].mark_examined(&mut stats.postings_touched);
                score += cursors[i].current_impact();
            } else if cursors[i].current_doc().is_some() {
                cursors[i].mark_examined(&mut stats.postings_touched);
            }
        }

        topk.insert(ScoredDoc {
            doc: candidate,
            score,
        });
    }

    stats.elapsed_ns = start.elapsed().as_nanos() as u64;
    (topk.into_result(k), stats)
}
