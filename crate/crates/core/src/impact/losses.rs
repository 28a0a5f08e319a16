//! The four training objectives. Each returns the loss and its analytic
//! gradient with respect to the model weights, chained through the score
//! function and the ReLU.
//!
//! Softmax-based losses are computed with max-subtracted log-sum-exp.

use super::{score, score_and_grad, DocStore, ImpactError, ImpactModel, FEATURE_DIM};
use crate::corpus::{DistillationGroup, Query, TrainTriple};

/// Loss and weight-space gradient for one instance (or batch mean).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub gradient: [f64; FEATURE_DIM],
}

/// Student scores for one query's candidate documents.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet(pub Vec<f64>);

/// Scores a query against each candidate doc_id in order.
pub fn score_candidates(
    model: &ImpactModel,
    query: &Query,
    doc_ids: &[&str],
    store: &DocStore,
) -> Result<ScoreSet, ImpactError> {
    let mut scores = Vec::with_capacity(doc_ids.len());
    for doc_id in doc_ids {
        scores.push(score(model, query, store.resolve(doc_id)?));
    }
    Ok(ScoreSet(scores))
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| x - lse).collect()
}

fn axpy(acc: &mut [f64; FEATURE_DIM], a: f64, x: &[f64; FEATURE_DIM]) {
    for (acc_i, x_i) in acc.iter_mut().zip(x.iter()) {
        *acc_i += a * x_i;
    }
}

/// Softmax cross-entropy over `[s+, s−]`: −log softmax([s+, s−])[0].
/// Evaluated as the batch loss of the single-triple batch, so it is
/// bit-identical to [`loss_in_batch`] with B = 1 by construction.
pub fn loss_pairwise_ce(
    model: &ImpactModel,
    triple: &TrainTriple,
    store: &DocStore,
) -> Result<LossValue, ImpactError> {
    loss_in_batch(model, std::slice::from_ref(triple), store)
}

/// In-batch negatives: for query i the candidates are
/// `[d_i+, d_i−] ++ {d_j+}_{j≠i}` (B+1 of them); per-query loss is
/// −log softmax(scores)[0]; the batch loss is the mean over queries.
pub fn loss_in_batch(
    model: &ImpactModel,
    batch: &[TrainTriple],
    store: &DocStore,
) -> Result<LossValue, ImpactError> {
    if batch.is_empty() {
        return Err(ImpactError::EmptyData);
    }
    let b = batch.len();
    let mut total_loss = 0.0;
    let mut total_grad = [0.0; FEATURE_DIM];

    for (i, triple) in batch.iter().enumerate() {
        let mut doc_ids: Vec<&str> = vec![&triple.positive_doc, &triple.negative_doc];
        for (j, other) in batch.iter().enumerate() {
            if j != i {
                doc_ids.push(&other.positive_doc);
            }
        }

        let mut scores = Vec::with_capacity(doc_ids.len());
        let mut grads = Vec::with_capacity(doc_ids.len());
        for doc_id in &doc_ids {
            let (s, g) = score_and_grad(model, &triple.query, store.resolve(doc_id)?);
            scores.push(s);
            grads.push(g);
        }

        let log_probs = log_softmax(&scores);
        total_loss += -log_probs[0];
        for (j, grad_j) in grads.iter().enumerate() {
            // dL/ds_j = softmax_j − [j = 0]
            let coeff = log_probs[j].exp() - if j == 0 { 1.0 } else { 0.0 };
            axpy(&mut total_grad, coeff, grad_j);
        }
    }

    let scale = 1.0 / b as f64;
    total_loss *= scale;
    for g in &mut total_grad {
        *g *= scale;
    }
    Ok(LossValue {
        loss: total_loss,
        gradient: total_grad,
    })
}

/// Score-space gradient of KL(P‖Q) distillation: `(Q_j − P_j)/τ` where
/// P = softmax(teacher/τ) and Q = softmax(student/τ). Exposed so the
/// mass-conservation property Σ_j (Q_j − P_j) = 0 can be checked directly.
pub fn kl_score_gradient(teacher: &[f64], student: &[f64], tau: f64) -> Vec<f64> {
    let p: Vec<f64> = log_softmax(&teacher.iter().map(|t| t / tau).collect::<Vec<_>>())
        .iter()
        .map(|lp| lp.exp())
        .collect();
    let q: Vec<f64> = log_softmax(&student.iter().map(|s| s / tau).collect::<Vec<_>>())
        .iter()
        .map(|lq| lq.exp())
        .collect();
    p.iter().zip(q.iter()).map(|(pj, qj)| (qj - pj) / tau).collect()
}

fn validate_group(group: &DistillationGroup) -> Result<(), ImpactError> {
    if group.candidates.len() < 2 {
        return Err(ImpactError::InvalidConfig(format!(
            "group '{}' needs at least 2 candidates",
            group.query.query_id
        )));
    }
    if group.positive_index >= group.candidates.len() {
        return Err(ImpactError::InvalidConfig(format!(
            "group '{}' positive_index out of range",
            group.query.query_id
        )));
    }
    Ok(())
}

/// KL divergence distillation: loss = Σ_j P_j·log(P_j/Q_j) with
/// P = softmax(teacher/τ), Q = softmax(student/τ); dL/ds_j = (Q_j − P_j)/τ.
pub fn loss_kl_distill(
    model: &ImpactModel,
    group: &DistillationGroup,
    store: &DocStore,
    tau: f64,
) -> Result<LossValue, ImpactError> {
    validate_group(group)?;
    if !(tau > 0.0) {
        return Err(ImpactError::InvalidConfig(format!(
            "temperature must be > 0, got {tau}"
        )));
    }

    let mut student = Vec::with_capacity(group.candidates.len());
    let mut grads = Vec::with_capacity(group.candidates.len());
    for cand in &group.candidates {
        let (s, g) = score_and_grad(model, &group.query, store.resolve(&cand.doc_id)?);
        student.push(s);
        grads.push(g);
    }
    let teacher: Vec<f64> = group.candidates.iter().map(|c| c.teacher_score).collect();

    let log_p = log_softmax(&teacher.iter().map(|t| t / tau).collect::<Vec<_>>());
    let log_q = log_softmax(&student.iter().map(|s| s / tau).collect::<Vec<_>>());

    let mut loss = 0.0;
    let mut gradient = [0.0; FEATURE_DIM];
    for j in 0..teacher.len() {
        let p_j = log_p[j].exp();
        let q_j = log_q[j].exp();
        loss += p_j * (log_p[j] - log_q[j]);
        axpy(&mut gradient, (q_j - p_j) / tau, &grads[j]);
    }
    Ok(LossValue { loss, gradient })
}

/// Margin-MSE distillation: mean over negatives j of
/// ((s+ − s_j) − (t+ − t_j))².
pub fn loss_margin_mse(
    model: &ImpactModel,
    group: &DistillationGroup,
    store: &DocStore,
) -> Result<LossValue, ImpactError> {
    validate_group(group)?;

    let pos = &group.candidates[group.positive_index];
    let (s_plus, g_plus) =
        score_and_grad(model, &group.query, store.resolve(&pos.doc_id)?);
    let t_plus = pos.teacher_score;

    let negatives: Vec<_> = group
        .candidates
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != group.positive_index)
        .map(|(_, c)| c)
        .collect();
    let m = negatives.len() as f64;

    let mut loss = 0.0;
    let mut gradient = [0.0; FEATURE_DIM];
    let mut residual_sum = 0.0;
    for neg in negatives {
        let (s_j, g_j) = score_and_grad(model, &group.query, store.resolve(&neg.doc_id)?);
        let r = (s_plus - s_j) - (t_plus - neg.teacher_score);
        loss += r * r;
        residual_sum += r;
        // dL/ds_j = −2r/M
        axpy(&mut gradient, -2.0 * r / m, &g_j);
    }
    loss /= m;
    // dL/ds+ = (2/M) Σ r
    axpy(&mut gradient, 2.0 * residual_sum / m, &g_plus);
    Ok(LossValue { loss, gradient })
}
