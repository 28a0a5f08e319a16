//! Seeded synthetic data generators: random indexes and queries for
//! differential testing of the two retrieval engines, kink-free loss
//! instances for gradient checking, and a topic-marker toy corpus for the
//! end-to-end training demo.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Document, DistillationGroup, Qrels, Query, ScoredCandidate, TrainTriple};
use crate::expansion::{merge_expansion, ExpandedDocument};
use crate::impact::{
    loss_in_batch, loss_kl_distill, loss_margin_mse, loss_pairwise_ce, DocStore, ImpactModel,
    LossValue, FEATURE_DIM,
};
use crate::index::{ImpactIndex, ImpactPosting};

/// Shape of the per-posting impact distribution in [`random_index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpactDraw {
    /// Document frequencies and impacts both uniform.
    Uniform,
    /// Skewed frequencies: frequent terms get long lists with small
    /// impacts, rare terms short lists with large impacts. This is the
    /// regime where threshold pruning pays off.
    Zipfian,
}

/// Builds a random valid index: 1..=max_docs documents, 1..=max_vocab
/// terms, strictly ascending postings, impacts in 1..=255.
pub fn random_index<R: Rng>(
    rng: &mut R,
    max_docs: u32,
    max_vocab: usize,
    draw: ImpactDraw,
) -> ImpactIndex {
    let num_docs = rng.gen_range(1..=max_docs);
    let vocab = rng.gen_range(1..=max_vocab);
    sized_index(rng, num_docs, vocab, draw)
}

/// [`random_index`] with the document count and vocabulary size fixed.
pub fn sized_index<R: Rng>(
    rng: &mut R,
    num_docs: u32,
    vocab: usize,
    draw: ImpactDraw,
) -> ImpactIndex {
    assert!(num_docs >= 1 && vocab >= 1);
    let mut lists = Vec::with_capacity(vocab);
    for r in 0..vocab {
        let (df, max_impact) = match draw {
            ImpactDraw::Uniform => (rng.gen_range(1..=num_docs as usize), 255u32),
            ImpactDraw::Zipfian => {
                let df = ((num_docs as f64 / (r + 1) as f64).round() as usize).clamp(1, num_docs as usize);
                let hi = (255 * (r as u32 + 1) / vocab as u32).clamp(1, 255);
                (df, hi)
            }
        };
        let mut docs: Vec<usize> =
            rand::seq::index::sample(rng, num_docs as usize, df).into_vec();
        docs.sort_unstable();
        let postings: Vec<ImpactPosting> = docs
            .into_iter()
            .map(|d| ImpactPosting {
                doc: d as u32,
                q_impact: rng.gen_range(1..=max_impact) as u8,
            })
            .collect();
        lists.push((format!("t{r:04}"), postings));
    }
    let doc_table = (0..num_docs).map(|i| format!("d{i:05}")).collect();
    ImpactIndex::from_parts(num_docs, 1.0, lists, doc_table)
        .expect("generated lists satisfy the index invariants")
}

/// Draws a query of min_terms..=max_terms distinct vocabulary terms
/// (occasionally plus one out-of-vocabulary term).
pub fn random_query<R: Rng>(
    rng: &mut R,
    index: &ImpactIndex,
    min_terms: usize,
    max_terms: usize,
) -> Query {
    let vocab: Vec<&str> = index.terms().map(|l| l.term.as_str()).collect();
    let want = rng.gen_range(min_terms..=max_terms).min(vocab.len()).max(1);
    let mut terms: Vec<&str> = rand::seq::index::sample(rng, vocab.len(), want)
        .into_iter()
        .map(|i| vocab[i])
        .collect();
    if rng.gen_bool(0.1) {
        terms.push("qoov");
    }
    terms.shuffle(rng);
    let id = format!("q{:08x}", rng.gen::<u32>());
    Query::new(id, terms.join(" "))
}

/// A self-consistent randomized training setup for gradient checks: a
/// featurized document store, a batch of triples, one distillation group,
/// and a model, generated so that no matched (query, document) term sits
/// within `KINK_MARGIN` of the ReLU kink. Finite-difference probes with
/// eps <= 1e-4 therefore never cross the kink. Draws whose loss gradients
/// have nonzero components below `GRAD_MARGIN` (exact cancellations) are
/// also rejected, keeping every component resolvable by central
/// differences in f64.
pub struct LossInstance {
    pub store: DocStore,
    pub triples: Vec<TrainTriple>,
    pub group: DistillationGroup,
    pub model: ImpactModel,
}

const KINK_MARGIN: f64 = 1e-3;
const GRAD_MARGIN: f64 = 1e-5;

pub fn random_loss_instance<R: Rng>(
    rng: &mut R,
    batch_size: usize,
    group_size: usize,
) -> LossInstance {
    assert!(batch_size >= 1 && group_size >= 2);
    let vocab: Vec<String> = (0..12).map(|i| format!("w{i:02}")).collect();
    let random_text = |rng: &mut R| -> String {
        let len = rng.gen_range(3..=8);
        (0..len)
            .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
            .collect::<Vec<_>>()
            .join(" ")
    };

    for _attempt in 0..200 {
        // Documents: positives/negatives for each triple plus the group's
        // candidates, some with injected expansion terms.
        let mut documents = Vec::new();
        let mut expansions: Vec<Vec<String>> = Vec::new();
        let add_doc = |rng: &mut R, id: String, documents: &mut Vec<Document>, expansions: &mut Vec<Vec<String>>| {
            documents.push(Document::new(id, random_text(rng)));
            let inject = if rng.gen_bool(0.3) {
                vec![random_text(rng)]
            } else {
                Vec::new()
            };
            expansions.push(inject);
        };
        for i in 0..batch_size {
            add_doc(rng, format!("p{i}"), &mut documents, &mut expansions);
            add_doc(rng, format!("n{i}"), &mut documents, &mut expansions);
        }
        for j in 0..group_size {
            add_doc(rng, format!("g{j}"), &mut documents, &mut expansions);
        }
        let expanded: Vec<ExpandedDocument> = documents
            .iter()
            .zip(&expansions)
            .map(|(d, inj)| merge_expansion(d, inj))
            .collect();
        let store = DocStore::build(&expanded);

        let triples: Vec<TrainTriple> = (0..batch_size)
            .map(|i| TrainTriple {
                query: Query::new(format!("tq{i}"), random_text(rng)),
                positive_doc: format!("p{i}"),
                negative_doc: format!("n{i}"),
            })
            .collect();
        let group = DistillationGroup {
            query: Query::new("gq", random_text(rng)),
            candidates: (0..group_size)
                .map(|j| ScoredCandidate {
                    doc_id: format!("g{j}"),
                    teacher_score: rng.gen_range(-2.0..8.0),
                })
                .collect(),
            positive_index: 0,
        };

        let mut weights = [0.0; FEATURE_DIM];
        for w in &mut weights {
            *w = rng.gen_range(-1.0..1.0);
        }
        let model = ImpactModel::from_weights(weights);

        // Reject draws where any matched term's pre-activation is close to
        // the kink for any (query, document) pair the losses can evaluate.
        let queries: Vec<&Query> = triples
            .iter()
            .map(|t| &t.query)
            .chain(std::iter::once(&group.query))
            .collect();
        let mut ok = true;
        'outer: for doc in &expanded {
            let feat = store.get(&doc.doc_id).expect("doc was just stored");
            for query in &queries {
                for tok in &query.tokens {
                    if let Some(f) = feat.term_features(tok) {
                        let pre: f64 = model
                            .weights()
                            .iter()
                            .zip(f.0.iter())
                            .map(|(w, x)| w * x)
                            .sum();
                        if pre.abs() < KINK_MARGIN {
                            ok = false;
                            break 'outer;
                        }
                    }
                }
            }
        }
        if !ok {
            continue;
        }

        // Also reject draws whose analytic gradients carry near-zero
        // components born from cancellation: a central difference at
        // ε = 1e-5 has ~1e-11 of rounding noise, which a 1e-8-floored
        // relative error inflates to ~1e-3 even for a correct gradient.
        // Exact structural zeros survive — there both sides are bitwise 0.
        let conditioned = |lv: &LossValue| {
            lv.gradient
                .iter()
                .all(|&c| c == 0.0 || c.abs() >= GRAD_MARGIN)
        };
        let mut evals: Vec<LossValue> = Vec::new();
        for triple in &triples {
            evals.push(loss_pairwise_ce(&model, triple, &store).expect("valid triple"));
        }
        evals.push(loss_in_batch(&model, &triples, &store).expect("valid batch"));
        for tau in [0.7, 0.8, 1.0] {
            evals.push(loss_kl_distill(&model, &group, &store, tau).expect("valid group"));
        }
        evals.push(loss_margin_mse(&model, &group, &store).expect("valid group"));
        if evals.iter().all(conditioned) {
            return LossInstance {
                store,
                triples,
                group,
                model,
            };
        }
    }
    panic!("could not draw a well-conditioned loss instance in 200 attempts");
}

/// Parameters of the topic-marker toy corpus.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub num_docs: usize,
    pub num_topics: usize,
    pub num_fillers: usize,
    pub doc_len: usize,
    pub num_train_groups: usize,
    pub negatives_per_group: usize,
    pub num_heldout_queries: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            num_docs: 200,
            num_topics: 10,
            num_fillers: 80,
            doc_len: 12,
            num_train_groups: 50,
            negatives_per_group: 9,
            num_heldout_queries: 50,
            seed: 42,
        }
    }
}

/// A complete toy retrieval setup. Every document opens with its topic's
/// marker term followed by random filler terms; queries pair a marker with
/// fillers, so a useful model must push marker impacts up and filler
/// impacts down.
pub struct ToyData {
    pub documents: Vec<Document>,
    pub heldout_queries: Vec<Query>,
    pub qrels: Qrels,
    pub groups: Vec<DistillationGroup>,
    pub triples: Vec<TrainTriple>,
}

// rng stream id separating toy-corpus draws from other users of the seed
const TOY_STREAM: u64 = 0x70;

pub fn toy_corpus(spec: &ToySpec) -> ToyData {
    assert!(spec.num_topics >= 2, "need at least two topics for negatives");
    assert!(spec.num_fillers >= 2 && spec.doc_len >= 2);
    assert!(spec.num_docs >= spec.num_topics);
    let max_topic_size = (spec.num_docs + spec.num_topics - 1) / spec.num_topics;
    assert!(
        spec.num_docs - max_topic_size >= spec.negatives_per_group,
        "not enough off-topic documents for the requested negatives"
    );
    let mut rng = crate::textgen::derive_rng(spec.seed, TOY_STREAM);

    let marker = |t: usize| format!("marker{t:02}");
    let filler = |j: usize| format!("filler{j:02}");
    let topic_of = |i: usize| i % spec.num_topics;

    let documents: Vec<Document> = (0..spec.num_docs)
        .map(|i| {
            let mut tokens = vec![marker(topic_of(i))];
            for _ in 1..spec.doc_len {
                tokens.push(filler(rng.gen_range(0..spec.num_fillers)));
            }
            Document::new(format!("doc{i:04}"), tokens.join(" "))
        })
        .collect();

    let two_fillers = |rng: &mut rand_chacha::ChaCha8Rng| {
        let a = rng.gen_range(0..spec.num_fillers);
        let mut b = rng.gen_range(0..spec.num_fillers);
        while b == a {
            b = rng.gen_range(0..spec.num_fillers);
        }
        (filler(a), filler(b))
    };

    let mut heldout_queries = Vec::with_capacity(spec.num_heldout_queries);
    let mut qrels = Qrels::new();
    for q in 0..spec.num_heldout_queries {
        let t = topic_of(q);
        let (fa, fb) = two_fillers(&mut rng);
        let qid = format!("hq{q:03}");
        heldout_queries.push(Query::new(&qid, format!("{} {fa} {fb}", marker(t))));
        for (i, doc) in documents.iter().enumerate() {
            if topic_of(i) == t {
                qrels.insert(&qid, &doc.doc_id, 1);
            }
        }
    }

    let mut groups = Vec::with_capacity(spec.num_train_groups);
    let mut triples = Vec::with_capacity(spec.num_train_groups);
    for g in 0..spec.num_train_groups {
        let t = topic_of(g);
        let (fa, fb) = two_fillers(&mut rng);
        let query = Query::new(format!("tq{g:03}"), format!("{} {fa} {fb}", marker(t)));

        let topic_docs: Vec<usize> = (0..spec.num_docs).filter(|&i| topic_of(i) == t).collect();
        let positive = topic_docs[rng.gen_range(0..topic_docs.len())];

        // Hard negatives first: off-topic documents sharing a query filler.
        let mut off_topic: Vec<usize> = (0..spec.num_docs).filter(|&i| topic_of(i) != t).collect();
        off_topic.shuffle(&mut rng);
        let mut negatives: Vec<usize> = Vec::with_capacity(spec.negatives_per_group);
        for &i in &off_topic {
            if negatives.len() >= spec.negatives_per_group / 2 {
                break;
            }
            let toks = &documents[i].tokens;
            if toks.contains(&fa) || toks.contains(&fb) {
                negatives.push(i);
            }
        }
        for &i in &off_topic {
            if negatives.len() >= spec.negatives_per_group {
                break;
            }
            if !negatives.contains(&i) {
                negatives.push(i);
            }
        }

        let mut candidates = vec![ScoredCandidate {
            doc_id: documents[positive].doc_id.clone(),
            teacher_score: 8.0 + rng.gen_range(0.0..1.0),
        }];
        for &i in &negatives {
            candidates.push(ScoredCandidate {
                doc_id: documents[i].doc_id.clone(),
                teacher_score: rng.gen_range(0.0..1.0),
            });
        }
        triples.push(TrainTriple {
            query: query.clone(),
            positive_doc: documents[positive].doc_id.clone(),
            negative_doc: documents[negatives[0]].doc_id.clone(),
        });
        groups.push(DistillationGroup {
            query,
            candidates,
            positive_index: 0,
        });
    }

    ToyData {
        documents,
        heldout_queries,
        qrels,
        groups,
        triples,
    }
}
