//! Learned sparse retrieval at desk scale.
//!
//! The pipeline runs in six stages, each owned by one module:
//!
//! 1. [`corpus`] — collections, queries, qrels, and training data, plus the
//!    shared tokenizer.
//! 2. [`textgen`] — an n-gram language model with top-k/top-p and beam-search
//!    decoding for generating document expansion queries.
//! 3. [`expansion`] — global percentile filtration of expansion queries and
//!    merging of survivors into expanded documents.
//! 4. [`impact`] — the term-impact scoring model, ranking and distillation
//!    losses with analytic gradients, and a deterministic trainer.
//! 5. [`index`] — 8-bit quantized impact postings with a canonical binary
//!    serialization.
//! 6. [`search`] — exhaustive document-at-a-time retrieval and MaxScore
//!    dynamic pruning, instrumented for differential testing.
//! 7. [`eval`] — MRR/NDCG/recall metrics, response-time measurement, and
//!    TREC run files.
//!
//! [`synth`] generates seeded synthetic corpora and indexes for tests,
//! benchmarks, and self-contained demos.

pub mod corpus;
pub mod eval;
pub mod expansion;
pub mod impact;
pub mod index;
pub mod search;
pub mod synth;
pub mod textgen;

pub use corpus::{
    tokenize, DistillationGroup, Document, ExpansionQuery, ExpansionRecord, Qrels, Query,
    ScoredCandidate, TrainTriple,
};
pub use expansion::{ExpandedDocument, ExpandedTerm, FiltrationReport};
pub use impact::{FeatureVector, ImpactModel, LossKind, TrainingConfig, FEATURE_DIM};
pub use index::{ImpactIndex, ImpactPosting, PostingList};
pub use search::{ScoredDoc, SearchStats, TopKResult};
pub use eval::{MetricsReport, RunEntry, TrecRun};
