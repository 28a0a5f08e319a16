//! Deterministic gradient-descent trainer and the finite-difference
//! gradient checker.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    loss_in_batch, loss_kl_distill, loss_margin_mse, loss_pairwise_ce, LossValue,
};
use super::{DocStore, ImpactError, ImpactModel, FEATURE_DIM};
use crate::corpus::{DistillationGroup, TrainTriple};

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PairwiseCe,
    InBatch,
    KlDistill,
    MarginMse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::PairwiseCe => "pairwise_ce",
            LossKind::InBatch => "in_batch",
            LossKind::KlDistill => "kl_distill",
            LossKind::MarginMse => "margin_mse",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = ImpactError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairwise_ce" => Ok(LossKind::PairwiseCe),
            "in_batch" => Ok(LossKind::InBatch),
            "kl_distill" => Ok(LossKind::KlDistill),
            "margin_mse" => Ok(LossKind::MarginMse),
            other => Err(ImpactError::InvalidConfig(format!(
                "unknown loss '{other}' (expected pairwise_ce, in_batch, kl_distill, or margin_mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss_kind: LossKind::KlDistill,
            learning_rate: 0.05,
            batch_size: 8,
            temperature: 1.0,
            epochs: 20,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ImpactError> {
        if !(self.learning_rate > 0.0) {
            return Err(ImpactError::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(ImpactError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(ImpactError::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Training data matching the loss family: triples for the cross-entropy
/// losses, teacher-scored groups for the distillation losses.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Triples(&'a [TrainTriple]),
    Groups(&'a [DistillationGroup]),
}

impl TrainData<'_> {
    fn len(&self) -> usize {
        match self {
            TrainData::Triples(t) => t.len(),
            TrainData::Groups(g) => g.len(),
        }
    }
}

/// Per-epoch mean losses (measured during the epoch, before each update) and
/// the number of gradient-descent steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Plain gradient descent from zero-initialized weights. Instances are
/// shuffled each epoch with a ChaCha stream seeded by `config.seed`, batched
/// into chunks of `batch_size`, and each chunk produces one update. Fully
/// deterministic for a fixed seed.
pub fn train(
    config: &TrainingConfig,
    data: TrainData,
    store: &DocStore,
) -> Result<(ImpactModel, TrainReport), ImpactError> {
    config.validate()?;
    if data.len() == 0 {
        return Err(ImpactError::EmptyData);
    }
    match (config.loss_kind, &data) {
        (LossKind::PairwiseCe | LossKind::InBatch, TrainData::Groups(_)) => {
            return Err(ImpactError::DataMismatch {
                loss: config.loss_kind.name(),
                expected: "triples",
            });
        }
        (LossKind::KlDistill | LossKind::MarginMse, TrainData::Triples(_)) => {
            return Err(ImpactError::DataMismatch {
                loss: config.loss_kind.name(),
                expected: "distillation groups",
            });
        }
        _ => {}
    }

    let mut model = ImpactModel::zeros();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let lv = batch_loss(&model, config, data, chunk, store)?;
            for (w, g) in model.weights_mut().iter_mut().zip(lv.gradient.iter()) {
                *w -= config.learning_rate * g;
            }
            steps += 1;
            loss_sum += lv.loss * chunk.len() as f64;
            weight_sum += chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / weight_sum);
    }

    Ok((model, TrainReport { epoch_losses, steps }))
}

/// Mean loss and gradient over one shuffled chunk of instance indices.
fn batch_loss(
    model: &ImpactModel,
    config: &TrainingConfig,
    data: TrainData,
    chunk: &[usize],
    store: &DocStore,
) -> Result<LossValue, ImpactError> {
    match (config.loss_kind, data) {
        (LossKind::InBatch, TrainData::Triples(triples)) => {
            let batch: Vec<TrainTriple> = chunk.iter().map(|&i| triples[i].clone()).collect();
            loss_in_batch(model, &batch, store)
        }
        (LossKind::PairwiseCe, TrainData::Triples(triples)) => mean_over(chunk, |i| {
            loss_pairwise_ce(model, &triples[i], store)
        }),
        (LossKind::KlDistill, TrainData::Groups(groups)) => mean_over(chunk, |i| {
            loss_kl_distill(model, &groups[i], store, config.temperature)
        }),
        (LossKind::MarginMse, TrainData::Groups(groups)) => mean_over(chunk, |i| {
            loss_margin_mse(model, &groups[i], store)
        }),
        _ => unreachable!("kind/data mismatch rejected above"),
    }
}

fn mean_over<F>(chunk: &[usize], mut f: F) -> Result<LossValue, ImpactError>
where
    F: FnMut(usize) -> Result<LossValue, ImpactError>,
{
    let mut loss = 0.0;
    let mut gradient = [0.0; FEATURE_DIM];
    for &i in chunk {
        let lv = f(i)?;
        loss += lv.loss;
        for (acc, g) in gradient.iter_mut().zip(lv.gradient.iter()) {
            *acc += g;
        }
    }
    let scale = 1.0 / chunk.len() as f64;
    loss *= scale;
    for g in &mut gradient {
        *g *= scale;
    }
    Ok(LossValue { loss, gradient })
}

/// Central finite differences against the analytic gradient. Returns the
/// maximum per-weight relative error, with denominators floored at 1e-8.
pub fn grad_check<F>(f: F, model: &ImpactModel, eps: f64) -> f64
where
    F: Fn(&ImpactModel) -> LossValue,
{
    assert!(eps > 0.0, "eps must be positive");
    let analytic = f(model).gradient;
    let mut max_rel = 0.0f64;
    for d in 0..FEATURE_DIM {
        let mut plus = model.clone();
        plus.weights_mut()[d] += eps;
        let mut minus = model.clone();
        minus.weights_mut()[d] -= eps;
        let numeric = (f(&plus).loss - f(&minus).loss) / (2.0 * eps);
        let denom = analytic[d].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[d] - numeric).abs() / denom);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Query, ScoredCandidate};
    use crate::expansion::merge_expansion;
    use crate::impact::DocStore;

    /// Separable toy data: positives contain a marker term the negatives
    /// lack; queries ask for the marker.
    fn separable() -> (Vec<TrainTriple>, DocStore) {
        let mut expanded = Vec::new();
        let mut triples = Vec::new();
        for i in 0..6 {
            let pos_id = format!("p{i}");
            let neg_id = format!("n{i}");
            expanded.push(merge_expansion::<&str>(
                &Document::new(pos_id.clone(), format!("marker filler{i} common")),
                &[],
            ));
            expanded.push(merge_expansion::<&str>(
                &Document::new(neg_id.clone(), format!("other filler{i} common")),
                &[],
            ));
            triples.push(TrainTriple {
                query: Query::new(format!("q{i}"), "marker"),
                positive_doc: pos_id,
                negative_doc: neg_id,
            });
        }
        let store = DocStore::build(&expanded);
        (triples, store)
    }

    #[test]
    fn zero_epochs_returns_zero_model() {
        let (triples, store) = separable();
        let config = TrainingConfig {
            loss_kind: LossKind::PairwiseCe,
            epochs: 0,
            ..TrainingConfig::default()
        };
        let (model, report) = train(&config, TrainData::Triples(&triples), &store).unwrap();
        assert_eq!(model, ImpactModel::zeros());
        assert!(report.epoch_losses.is_empty());
        assert_eq!(report.steps, 0);
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let (triples, store) = separable();
        let config = TrainingConfig {
            loss_kind: LossKind::PairwiseCe,
            learning_rate: 0.1,
            batch_size: 2,
            epochs: 10,
            ..TrainingConfig::default()
        };
        let (_, report) = train(&config, TrainData::Triples(&triples), &store).unwrap();
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        assert!(
            last < first,
            "expected improvement, got first={first} last={last}"
        );
        assert_eq!(report.steps, 3 * 10); // ceil(6/2) batches × 10 epochs
    }

    #[test]
    fn same_seed_gives_bitwise_identical_weights() {
        let (triples, store) = separable();
        let config = TrainingConfig {
            loss_kind: LossKind::InBatch,
            learning_rate: 0.07,
            batch_size: 3,
            epochs: 4,
            seed: 99,
            ..TrainingConfig::default()
        };
        let (m1, r1) = train(&config, TrainData::Triples(&triples), &store).unwrap();
        let (m2, r2) = train(&config, TrainData::Triples(&triples), &store).unwrap();
        for (a, b) in m1.weights().iter().zip(m2.weights().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(r1, r2);
    }

    #[test]
    fn kl_training_works_on_groups() {
        let (_, store) = separable();
        let groups: Vec<DistillationGroup> = (0..6)
            .map(|i| DistillationGroup {
                query: Query::new(format!("q{i}"), "marker"),
                candidates: vec![
                    ScoredCandidate { doc_id: format!("p{i}"), teacher_score: 8.0 },
                    ScoredCandidate { doc_id: format!("n{i}"), teacher_score: 0.5 },
                ],
                positive_index: 0,
            })
            .collect();
        let config = TrainingConfig {
            loss_kind: LossKind::KlDistill,
            learning_rate: 0.2,
            batch_size: 2,
            epochs: 15,
            ..TrainingConfig::default()
        };
        let (model, report) = train(&config, TrainData::Groups(&groups), &store).unwrap();
        assert!(*report.epoch_losses.last().unwrap() < report.epoch_losses[0]);
        // The marker term should have picked up positive impact.
        let q = Query::new("q", "marker");
        assert!(
            crate::impact::score(&model, &q, store.get("p0").unwrap())
                > crate::impact::score(&model, &q, store.get("n0").unwrap())
        );
    }

    #[test]
    fn empty_data_and_mismatches_rejected() {
        let (triples, store) = separable();
        let config = TrainingConfig::default(); // kl_distill
        assert!(matches!(
            train(&config, TrainData::Groups(&[]), &store),
            Err(ImpactError::EmptyData)
        ));
        assert!(matches!(
            train(&config, TrainData::Triples(&triples), &store),
            Err(ImpactError::DataMismatch { .. })
        ));
        let config = TrainingConfig {
            loss_kind: LossKind::PairwiseCe,
            ..TrainingConfig::default()
        };
        assert!(matches!(
            train(&config, TrainData::Groups(&[]), &store),
            Err(ImpactError::EmptyData)
        ));
    }

    #[test]
    fn grad_check_calibrates_on_quadratic() {
        // f(w) = Σ (w_i − c_i)², ∇ = 2(w − c): centered differences are exact
        // up to floating-point noise.
        let c = [0.3, -0.7, 1.1, 0.0, 2.5, -1.2];
        let f = |m: &ImpactModel| {
            let mut loss = 0.0;
            let mut gradient = [0.0; FEATURE_DIM];
            for i in 0..FEATURE_DIM {
                let d = m.weights()[i] - c[i];
                loss += d * d;
                gradient[i] = 2.0 * d;
            }
            LossValue { loss, gradient }
        };
        let model = ImpactModel::from_weights([1.0, 0.5, -0.25, 2.0, 0.0, 3.0]);
        let err = grad_check(f, &model, 1e-5);
        assert!(err < 1e-6, "calibration error {err}");
    }
}
