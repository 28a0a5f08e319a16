//! Toy n-gram language model and the sampling procedures used to generate
//! expansion queries: combined top-k/top-p (nucleus) sampling and
//! length-normalized beam search.
//!
//! The model is a Laplace-smoothed n-gram counter. It exists to exercise the
//! generation/expansion pipeline deterministically at desk scale; output
//! fluency is a non-goal, the sampling math is the point.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

/// End-of-sequence marker. Lives in the model vocabulary; never collides with
/// corpus terms because tokenization strips non-alphanumerics.
pub const EOS: &str = "</s>";

/// Start padding for contexts at the beginning of a sequence. Never part of
/// the vocabulary, only of context keys.
const START: &str = "<s>";

#[derive(Debug, Error)]
pub enum TextgenError {
    #[error("cannot build a language model from an empty collection")]
    EmptyCollection,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Laplace-smoothed n-gram model. Immutable after build; sampling takes
/// explicit RNG state, so concurrent use with independent RNGs is safe.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    /// context (order-1 terms, `<s>`-padded) -> term -> count
    counts: HashMap<Vec<String>, BTreeMap<String, u64>>,
    /// all observed terms plus the end marker
    vocabulary: BTreeSet<String>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn count(&self, context: &[String], term: &str) -> u64 {
        let key = self.normalize_context(context);
        self.counts
            .get(&key)
            .and_then(|dist| dist.get(term))
            .copied()
            .unwrap_or(0)
    }

    /// Keeps the last `order-1` elements, left-padding with the start marker.
    /// Contexts of any length are accepted; callers may pass the whole
    /// generated prefix.
    fn normalize_context(&self, context: &[String]) -> Vec<String> {
        let want = self.order - 1;
        let tail = &context[context.len().saturating_sub(want)..];
        let mut key = Vec::with_capacity(want);
        key.resize(want - tail.len(), START.to_owned());
        key.extend(tail.iter().cloned());
        key
    }
}

/// Discrete distribution over terms. Always normalized: probabilities sum to
/// 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: BTreeMap<String, f64>,
}

impl TokenDistribution {
    /// Wraps a probability map, asserting normalization.
    pub fn new(probs: BTreeMap<String, f64>) -> Self {
        let total: f64 = probs.values().sum();
        assert!(
            (total - 1.0).abs() <= 1e-9,
            "distribution sums to {total}, expected 1"
        );
        assert!(probs.values().all(|&p| p >= 0.0));
        TokenDistribution { probs }
    }

    pub fn probs(&self) -> &BTreeMap<String, f64> {
        &self.probs
    }

    pub fn prob(&self, term: &str) -> f64 {
        self.probs.get(term).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }
}

/// Sampling hyperparameters for query generation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub p: f64,
    pub max_len: usize,
    pub num_queries: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 50,
            p: 0.95,
            max_len: 8,
            num_queries: 80,
            seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), TextgenError> {
        if self.k < 1 {
            return Err(TextgenError::InvalidConfig("k must be >= 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(TextgenError::InvalidConfig(format!(
                "p must be in (0, 1], got {}",
                self.p
            )));
        }
        if self.max_len < 1 {
            return Err(TextgenError::InvalidConfig("max_len must be >= 1".into()));
        }
        if self.num_queries < 1 {
            return Err(TextgenError::InvalidConfig(
                "num_queries must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Tallies n-gram counts over every document: each token stream is padded
/// with `order-1` start markers and closed with the end marker.
pub fn build_ngram_model(
    collection: &[Document],
    order: usize,
    alpha: f64,
) -> Result<NGramModel, TextgenError> {
    if collection.is_empty() {
        return Err(TextgenError::EmptyCollection);
    }
    if order < 1 {
        return Err(TextgenError::InvalidConfig("order must be >= 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(TextgenError::InvalidConfig("alpha must be > 0".into()));
    }

    let mut counts: HashMap<Vec<String>, BTreeMap<String, u64>> = HashMap::new();
    let mut vocabulary: BTreeSet<String> = BTreeSet::new();
    vocabulary.insert(EOS.to_owned());

    let pad = order - 1;
    for doc in collection {
        vocabulary.extend(doc.tokens.iter().cloned());
        let mut seq: Vec<String> = Vec::with_capacity(pad + doc.tokens.len() + 1);
        seq.resize(pad, START.to_owned());
        seq.extend(doc.tokens.iter().cloned());
        seq.push(EOS.to_owned());
        for i in pad..seq.len() {
            let context = seq[i - pad..i].to_vec();
            *counts.entry(context).or_default().entry(seq[i].clone()).or_insert(0) += 1;
        }
    }

    Ok(NGramModel {
        order,
        alpha,
        counts,
        vocabulary,
    })
}

/// Laplace-smoothed next-token distribution:
/// P(t|c) = (count(c,t) + α) / (Σ_t' count(c,t') + α·|V|).
/// Unseen contexts yield the uniform distribution over the vocabulary.
pub fn next_token_dist(model: &NGramModel, context: &[String]) -> TokenDistribution {
    let key = model.normalize_context(context);
    let observed = model.counts.get(&key);
    let total: u64 = observed.map(|d| d.values().sum()).unwrap_or(0);
    let v = model.vocabulary.len() as f64;
    let denom = total as f64 + model.alpha * v;

    let mut probs = BTreeMap::new();
    let mut acc = 0.0;
    for term in &model.vocabulary {
        let c = observed.and_then(|d| d.get(term)).copied().unwrap_or(0);
        let p = (c as f64 + model.alpha) / denom;
        acc += p;
        probs.insert(term.clone(), p);
    }
    // Exact renormalization guards accumulated rounding; acc is already
    // 1 ± few ulps.
    if acc != 1.0 {
        for p in probs.values_mut() {
            *p /= acc;
        }
    }
    TokenDistribution { probs }
}

/// Two-stage filter: (1) keep the k highest-probability tokens (ties broken
/// by lexicographic term order) and renormalize; (2) over the renormalized
/// set, keep the smallest descending-probability prefix whose cumulative
/// probability reaches p, and renormalize again.
pub fn filter_top_k_top_p(dist: &TokenDistribution, k: usize, p: f64) -> TokenDistribution {
    assert!(k >= 1, "k must be >= 1");
    assert!(p > 0.0 && p <= 1.0, "p must be in (0, 1]");

    let mut ranked: Vec<(&String, f64)> = dist.probs.iter().map(|(t, &pr)| (t, pr)).collect();
    // Descending probability; lexicographic term order breaks exact ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);

    let kept_total: f64 = ranked.iter().map(|(_, pr)| pr).sum();
    for (_, pr) in &mut ranked {
        *pr /= kept_total;
    }

    let mut nucleus = Vec::with_capacity(ranked.len());
    let mut cum = 0.0;
    for (term, pr) in ranked {
        nucleus.push((term, pr));
        cum += pr;
        if cum >= p - 1e-12 {
            break;
        }
    }

    let nucleus_total: f64 = nucleus.iter().map(|(_, pr)| pr).sum();
    let probs: BTreeMap<String, f64> = nucleus
        .into_iter()
        .map(|(term, pr)| (term.clone(), pr / nucleus_total))
        .collect();
    TokenDistribution { probs }
}

/// Inverse-CDF draw over the distribution, walking terms in lexicographic
/// order. Deterministic for a fixed RNG state.
pub fn sample_from<R: Rng>(dist: &TokenDistribution, rng: &mut R) -> String {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = None;
    for (term, &p) in &dist.probs {
        cum += p;
        if u < cum {
            return term.clone();
        }
        last = Some(term);
    }
    // Floating-point slack: the final cumulative may land a hair under u.
    last.expect("non-empty distribution").clone()
}

/// Derives an independent RNG for stream `stream` of a run seeded with
/// `seed` (splitmix64 finalizer over the combined value). Used to give each
/// document its own generator so per-document output is independent of
/// collection order and batching.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Autoregressively samples one query for `doc`. The context is seeded with
/// the document's first `order-1` tokens; each step samples from the
/// top-k/top-p filtered next-token distribution; generation stops at the end
/// marker or after `max_len` tokens.
pub fn sample_query<R: Rng>(
    model: &NGramModel,
    doc: &Document,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> String {
    sample_query_tokens(model, doc, cfg, rng).join(" ")
}

/// Token-level variant of [`sample_query`]; exposed so callers can check
/// per-step support membership.
pub fn sample_query_tokens<R: Rng>(
    model: &NGramModel,
    doc: &Document,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Vec<String> {
    let prefix_len = doc.tokens.len().min(model.order - 1);
    // Virtual sequence = document prefix ++ sampled tokens; the model
    // normalizes it to the trailing order-1 window.
    let mut seq: Vec<String> = doc.tokens[..prefix_len].to_vec();
    let mut out = Vec::new();
    while out.len() < cfg.max_len {
        let dist = next_token_dist(model, &seq);
        let filtered = filter_top_k_top_p(&dist, cfg.k, cfg.p);
        let tok = sample_from(&filtered, rng);
        if tok == EOS {
            break;
        }
        seq.push(tok.clone());
        out.push(tok);
    }
    out
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<String>,
    logp: f64,
    /// Number of probability factors in `logp`: one per emitted token, plus
    /// one for the end marker if the hypothesis finished on it. Hypotheses
    /// cut off at max_len carry no end-marker factor.
    factors: u32,
    finished: bool,
}

impl Hypothesis {
    fn norm(&self) -> f64 {
        self.logp / self.factors as f64
    }
}

/// Ranks by normalized log-probability descending; ties by lexicographic
/// token order, then fewer factors first.
fn rank(beam: &mut Vec<Hypothesis>) {
    beam.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then_with(|| a.factors.cmp(&b.factors))
    });
}

/// Length-normalized beam search over the model, seeded like
/// [`sample_query`] with the document's first `order-1` tokens. Finished and
/// live hypotheses compete for the same `width` slots each step; a
/// hypothesis finishes on the end marker or by reaching `max_len` tokens.
/// Returns up to `n` distinct query texts, best first; fully deterministic.
pub fn beam_search_queries(
    model: &NGramModel,
    doc: &Document,
    width: usize,
    max_len: usize,
    n: usize,
) -> Vec<String> {
    assert!(width >= n && n >= 1, "need width >= n >= 1");
    assert!(max_len >= 1, "max_len must be >= 1");

    let prefix_len = doc.tokens.len().min(model.order - 1);
    let prefix: Vec<String> = doc.tokens[..prefix_len].to_vec();

    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        logp: 0.0,
        factors: 0,
        finished: false,
    }];

    while beam.iter().any(|h| !h.finished) {
        let mut next: Vec<Hypothesis> = Vec::new();
        for hyp in beam.drain(..) {
            if hyp.finished {
                next.push(hyp);
                continue;
            }
            let mut seq = prefix.clone();
            seq.extend(hyp.tokens.iter().cloned());
            let dist = next_token_dist(model, &seq);
            for (term, &p) in dist.probs() {
                let mut child = hyp.clone();
                child.logp += p.ln();
                child.factors += 1;
                if term == EOS {
                    child.finished = true;
                } else {
                    child.tokens.push(term.clone());
                    if child.tokens.len() >= max_len {
                        child.finished = true;
                    }
                }
                next.push(child);
            }
        }
        rank(&mut next);
        next.truncate(width);
        beam = next;
    }

    // The same surface text can appear twice (end-marker-finished vs cut off
    // at max_len); keep the better-ranked occurrence.
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for hyp in &beam {
        if seen.insert(hyp.tokens.clone()) {
            out.push(hyp.tokens.join(" "));
            if out.len() == n {
                break;
            }
        }
    }
    out
}
