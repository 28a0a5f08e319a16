//! Term-impact scoring: a linear+ReLU model over hand-built term features,
//! the four training objectives with analytic gradients, and a deterministic
//! gradient-descent trainer.
//!
//! Query-document score = Σ over distinct query terms present in the
//! document of relu(w · features(term, doc)).

mod losses;
mod train;

pub use losses::{
    kl_score_gradient, loss_in_batch, loss_kl_distill, loss_margin_mse, loss_pairwise_ce,
    score_candidates, LossValue, ScoreSet,
};
pub use train::{grad_check, train, LossKind, TrainData, TrainReport, TrainingConfig};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Query;
use crate::expansion::ExpandedDocument;

/// Feature dimension. Layout:
/// `[log(1+tf_original), injected, log(1+unique terms in doc),
///   log(1+collection df), 1/(1+first position), 1]`.
pub const FEATURE_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum ImpactError {
    #[error("unknown doc '{doc_id}'")]
    UnknownDoc { doc_id: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("loss '{loss}' requires {expected} data")]
    DataMismatch { loss: &'static str, expected: &'static str },
    #[error("bad model file: {0}")]
    ModelFormat(String),
}

/// Per-(term, document) feature vector, dimension [`FEATURE_DIM`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

/// Collection-level statistics needed for featurization.
#[derive(Debug, Clone, Default)]
pub struct CollectionStats {
    /// term -> number of (expanded) documents containing it
    df: HashMap<String, u32>,
    pub num_docs: usize,
}

impl CollectionStats {
    pub fn build(docs: &[ExpandedDocument]) -> Self {
        let mut df: HashMap<String, u32> = HashMap::new();
        for doc in docs {
            for entry in &doc.terms {
                *df.entry(entry.term.clone()).or_insert(0) += 1;
            }
        }
        CollectionStats {
            df,
            num_docs: docs.len(),
        }
    }

    pub fn df(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }
}

/// Features for the term at `position` in `doc.terms`.
pub fn featurize(
    doc: &ExpandedDocument,
    position: usize,
    stats: &CollectionStats,
) -> FeatureVector {
    let entry = &doc.terms[position];
    FeatureVector([
        (1.0 + entry.tf_original as f64).ln(),
        if entry.injected { 1.0 } else { 0.0 },
        (1.0 + doc.unique_term_count() as f64).ln(),
        (1.0 + stats.df(&entry.term) as f64).ln(),
        1.0 / (1.0 + position as f64),
        1.0,
    ])
}

/// A document reduced to its per-term feature vectors, ready for scoring.
#[derive(Debug, Clone)]
pub struct FeaturizedDoc {
    pub doc_id: String,
    features: HashMap<String, FeatureVector>,
}

impl FeaturizedDoc {
    pub fn term_features(&self, term: &str) -> Option<&FeatureVector> {
        self.features.get(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &FeatureVector)> {
        self.features.iter().map(|(t, f)| (t.as_str(), f))
    }
}

/// Featurized collection keyed by doc_id; the resolution target for training
/// data and scoring.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    docs: HashMap<String, FeaturizedDoc>,
}

impl DocStore {
    pub fn build(expanded: &[ExpandedDocument]) -> Self {
        let stats = CollectionStats::build(expanded);
        Self::build_with_stats(expanded, &stats)
    }

    pub fn build_with_stats(expanded: &[ExpandedDocument], stats: &CollectionStats) -> Self {
        let mut docs = HashMap::with_capacity(expanded.len());
        for doc in expanded {
            let features = doc
                .terms
                .iter()
                .enumerate()
                .map(|(pos, entry)| (entry.term.clone(), featurize(doc, pos, stats)))
                .collect();
            docs.insert(
                doc.doc_id.clone(),
                FeaturizedDoc {
                    doc_id: doc.doc_id.clone(),
                    features,
                },
            );
        }
        DocStore { docs }
    }

    pub fn get(&self, doc_id: &str) -> Option<&FeaturizedDoc> {
        self.docs.get(doc_id)
    }

    pub fn resolve(&self, doc_id: &str) -> Result<&FeaturizedDoc, ImpactError> {
        self.get(doc_id).ok_or_else(|| ImpactError::UnknownDoc {
            doc_id: doc_id.to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    feature_version: u32,
    weights: Vec<f64>,
}

/// The learned scoring head: one weight per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactModel {
    weights: [f64; FEATURE_DIM],
}

impl ImpactModel {
    pub fn zeros() -> Self {
        ImpactModel {
            weights: [0.0; FEATURE_DIM],
        }
    }

    pub fn from_weights(weights: [f64; FEATURE_DIM]) -> Self {
        ImpactModel { weights }
    }

    pub fn weights(&self) -> &[f64; FEATURE_DIM] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64; FEATURE_DIM] {
        &mut self.weights
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawModel {
            feature_version: 1,
            weights: self.weights.to_vec(),
        })
        .expect("model serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, ImpactError> {
        let raw: RawModel =
            serde_json::from_str(s).map_err(|e| ImpactError::ModelFormat(e.to_string()))?;
        if raw.feature_version != 1 {
            return Err(ImpactError::ModelFormat(format!(
                "unsupported feature_version {}",
                raw.feature_version
            )));
        }
        let weights: [f64; FEATURE_DIM] = raw.weights.try_into().map_err(|v: Vec<f64>| {
            ImpactError::ModelFormat(format!("expected {} weights, got {}", FEATURE_DIM, v.len()))
        })?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ImpactError::ModelFormat("non-finite weight".into()));
        }
        Ok(ImpactModel { weights })
    }
}

/// relu(weights · features): the model's impact for one term occurrence.
pub fn term_impact(model: &ImpactModel, features: &FeatureVector) -> f64 {
    let pre: f64 = model
        .weights
        .iter()
        .zip(features.0.iter())
        .map(|(w, f)| w * f)
        .sum();
    pre.max(0.0)
}

/// Whether the ReLU passes gradient for this pre-activation. The kink at
/// exactly 0 is taken on the active side so that training can leave the
/// all-zero initialization (where every pre-activation is 0).
fn relu_active(pre: f64) -> bool {
    pre >= 0.0
}

/// Query-document score: Σ over distinct query terms present in the document
/// of their impacts. Terms absent from the document contribute 0.
pub fn score(model: &ImpactModel, query: &Query, doc: &FeaturizedDoc) -> f64 {
    let distinct: BTreeSet<&str> = query.tokens.iter().map(String::as_str).collect();
    distinct
        .iter()
        .filter_map(|t| doc.term_features(t))
        .map(|f| term_impact(model, f))
        .sum()
}

/// Score plus its gradient with respect to the weights:
/// d score / d w = Σ over matched, ReLU-active terms of their features.
pub(crate) fn score_and_grad(
    model: &ImpactModel,
    query: &Query,
    doc: &FeaturizedDoc,
) -> (f64, [f64; FEATURE_DIM]) {
    let distinct: BTreeSet<&str> = query.tokens.iter().map(String::as_str).collect();
    let mut total = 0.0;
    let mut grad = [0.0; FEATURE_DIM];
    for term in distinct {
        if let Some(features) = doc.term_features(term) {
            let pre: f64 = model
                .weights
                .iter()
                .zip(features.0.iter())
                .map(|(w, f)| w * f)
                .sum();
            if pre > 0.0 {
                total += pre;
            }
            if relu_active(pre) {
                for (g, f) in grad.iter_mut().zip(features.0.iter()) {
                    *g += f;
                }
            }
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::expansion::merge_expansion;

    fn store_for(docs: &[(&str, &str, &[&str])]) -> DocStore {
        let expanded: Vec<ExpandedDocument> = docs
            .iter()
            .map(|(id, text, queries)| merge_expansion(&Document::new(*id, *text), queries))
            .collect();
        DocStore::build(&expanded)
    }

    #[test]
    fn zero_model_gives_zero_impact() {
        let model = ImpactModel::zeros();
        let f = FeatureVector([1.0, 0.0, 2.0, 3.0, 0.5, 1.0]);
        assert_eq!(term_impact(&model, &f), 0.0);
    }

    #[test]
    fn bias_only_model_gives_constant_impact() {
        let model = ImpactModel::from_weights([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let f1 = FeatureVector([9.0, 1.0, 4.0, 2.0, 0.1, 1.0]);
        let f2 = FeatureVector([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(term_impact(&model, &f1), 1.0);
        assert_eq!(term_impact(&model, &f2), 1.0);
    }

    #[test]
    fn negative_preactivation_clamps_to_zero() {
        let model = ImpactModel::from_weights([0.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
        let f = FeatureVector([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(term_impact(&model, &f), 0.0);
    }

    #[test]
    fn score_sums_matched_distinct_terms() {
        // Doc d contains a and c; impacts under a bias-only model are 1 per
        // matched term, so overlap size is the score.
        let store = store_for(&[("d", "a c", &[])]);
        let doc = store.get("d").unwrap();
        let model = ImpactModel::from_weights([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(score(&model, &Query::new("q", "a b"), doc), 1.0);
        assert_eq!(score(&model, &Query::new("q", "a a b"), doc), 1.0); // dedupe
        assert_eq!(score(&model, &Query::new("q", "x y"), doc), 0.0);
    }

    #[test]
    fn score_monotone_in_matched_term_weight() {
        let store = store_for(&[("d", "a b", &[])]);
        let doc = store.get("d").unwrap();
        let q = Query::new("q", "a");
        let lo = score(
            &ImpactModel::from_weights([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &q,
            doc,
        );
        let hi = score(
            &ImpactModel::from_weights([0.4, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &q,
            doc,
        );
        assert!(hi >= lo);
        assert!(lo >= 0.0);
    }

    #[test]
    fn featurize_layout() {
        let doc = merge_expansion(&Document::new("d", "a b a"), &["b c"]);
        let stats = CollectionStats::build(std::slice::from_ref(&doc));
        // position 0 = term a (tf 2, original), position 2 = term c (injected)
        let fa = featurize(&doc, 0, &stats);
        assert!((fa.0[0] - (3.0f64).ln()).abs() < 1e-12);
        assert_eq!(fa.0[1], 0.0);
        assert!((fa.0[2] - (4.0f64).ln()).abs() < 1e-12); // 3 unique terms
        assert!((fa.0[3] - (2.0f64).ln()).abs() < 1e-12); // df(a) = 1
        assert_eq!(fa.0[4], 1.0);
        assert_eq!(fa.0[5], 1.0);

        let fc = featurize(&doc, 2, &stats);
        assert_eq!(fc.0[0], 0.0); // tf_original 0
        assert_eq!(fc.0[1], 1.0); // injected
        assert!((fc.0[4] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let model = ImpactModel::from_weights([0.5, -1.0, 0.25, 0.0, 2.0, -0.125]);
        let json = model.to_json();
        assert!(json.contains("\"feature_version\":1"));
        let back = ImpactModel::from_json(&json).unwrap();
        assert_eq!(back, model);

        assert!(ImpactModel::from_json("{\"feature_version\":2,\"weights\":[0,0,0,0,0,0]}").is_err());
        assert!(ImpactModel::from_json("{\"feature_version\":1,\"weights\":[0,0]}").is_err());
        assert!(ImpactModel::from_json("not json").is_err());
    }

    #[test]
    fn unknown_doc_resolution_fails() {
        let store = store_for(&[("d", "a", &[])]);
        assert!(matches!(
            store.resolve("missing"),
            Err(ImpactError::UnknownDoc { .. })
        ));
    }
}
