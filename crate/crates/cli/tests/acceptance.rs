//! Acceptance battery: eleven independently runnable criteria covering the
//! retrieval engines, training losses, quantization, serialization, the
//! sampler, filtration, metrics, and the end-to-end binary pipeline.
//!
//! Run with `cargo test -p lsr-cli --test acceptance`; each test prints one
//! PASS line (visible with `--nocapture`) and pins its tolerances as
//! constants below.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsr_core::corpus::{DistillationGroup, ScoredCandidate};
use lsr_core::eval::{mrr_at, ndcg_at, recall_at, TrecRun};
use lsr_core::expansion::{filter_expansions, ExpandedDocument};
use lsr_core::impact::{
    grad_check, kl_score_gradient, loss_in_batch, loss_kl_distill, loss_margin_mse,
    loss_pairwise_ce, score_candidates, train, DocStore, LossKind, TrainData, TrainingConfig,
};
use lsr_core::index::{
    build_index, compute_collection_impacts, index_to_bytes, quantize_impact, read_index,
};
use lsr_core::search::{exhaustive_daat, maxscore_daat, prepare_query};
use lsr_core::synth::{
    random_index, random_loss_instance, random_query, sized_index, toy_corpus, ImpactDraw,
    ToySpec,
};
use lsr_core::textgen::{
    build_ngram_model, derive_rng, filter_top_k_top_p, next_token_dist, sample_from,
    sample_query, SamplerConfig, EOS,
};
use lsr_core::{Document, ExpansionQuery, ExpansionRecord};

// Pinned tolerances and budgets.
const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const KL_MASS_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-12;
const LOSS_REDUCTION: f64 = 0.5;
const MRR_FLOOR: f64 = 0.9;
const PRUNE_WIN_RATE: f64 = 0.9;
const SAFETY_BUDGET: Duration = Duration::from_secs(60);
const E2E_BUDGET: Duration = Duration::from_secs(120);

#[test]
fn criterion_01_maxscore_matches_exhaustive_everywhere() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut comparisons = 0usize;
    for trial in 0..200 {
        let draw = if trial % 2 == 0 {
            ImpactDraw::Zipfian
        } else {
            ImpactDraw::Uniform
        };
        let index = random_index(&mut rng, 2000, 500, draw);
        for _ in 0..2 {
            let query = random_query(&mut rng, &index, 1, 8);
            for k in [1usize, 10, 100] {
                let (ex, _) = exhaustive_daat(&index, &query, k);
                let (mx, _) = maxscore_daat(&index, &query, k);
                assert_eq!(
                    mx.entries, ex.entries,
                    "trial {trial} k={k} query {:?}",
                    query.tokens
                );
                comparisons += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed < SAFETY_BUDGET,
        "safety battery took {elapsed:?}, budget {SAFETY_BUDGET:?}"
    );
    println!(
        "PASS criterion 01: maxscore == exhaustive on 200 indexes \
         ({comparisons} comparisons in {elapsed:?})"
    );
}

#[test]
fn criterion_02_pruning_beats_exhaustive_on_zipfian_collection() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    let index = sized_index(&mut rng, 10_000, 300, ImpactDraw::Zipfian);
    let mut wins = 0usize;
    let total = 100usize;
    for _ in 0..total {
        let query = random_query(&mut rng, &index, 2, 6);
        let (ex, ex_stats) = exhaustive_daat(&index, &query, 10);
        let (mx, mx_stats) = maxscore_daat(&index, &query, 10);
        assert_eq!(mx.entries, ex.entries);
        if mx_stats.postings_touched < ex_stats.postings_touched {
            wins += 1;
        }
    }
    assert!(
        wins as f64 >= PRUNE_WIN_RATE * total as f64,
        "maxscore touched strictly fewer postings on only {wins}/{total} queries"
    );
    println!("PASS criterion 02: pruning won on {wins}/{total} queries at k=10");
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let inst = random_loss_instance(&mut rng, 3, 5);
        let store = &inst.store;
        let errs = [
            grad_check(
                |m| loss_pairwise_ce(m, &inst.triples[0], store).unwrap(),
                &inst.model,
                FD_EPS,
            ),
            grad_check(
                |m| loss_in_batch(m, &inst.triples, store).unwrap(),
                &inst.model,
                FD_EPS,
            ),
            grad_check(
                |m| loss_kl_distill(m, &inst.group, store, 0.7).unwrap(),
                &inst.model,
                FD_EPS,
            ),
            grad_check(
                |m| loss_margin_mse(m, &inst.group, store).unwrap(),
                &inst.model,
                FD_EPS,
            ),
        ];
        for err in errs {
            assert!(err <= FD_TOL, "finite-difference error {err} > {FD_TOL}");
            worst = worst.max(err);
        }
    }

    // KL at student == teacher is exactly zero.
    for _ in 0..20 {
        let inst = random_loss_instance(&mut rng, 1, 6);
        let ids: Vec<&str> = inst.group.candidates.iter().map(|c| c.doc_id.as_str()).collect();
        let scores = score_candidates(&inst.model, &inst.group.query, &ids, &inst.store).unwrap();
        let group = DistillationGroup {
            query: inst.group.query.clone(),
            candidates: ids
                .iter()
                .zip(scores.0.iter())
                .map(|(id, &s)| ScoredCandidate {
                    doc_id: id.to_string(),
                    teacher_score: s,
                })
                .collect(),
            positive_index: 0,
        };
        let value = loss_kl_distill(&inst.model, &group, &inst.store, 1.0).unwrap();
        assert_eq!(value.loss, 0.0, "self-distillation loss must be exactly 0");
    }

    // Gradient mass conservation: sum over candidates of (Q - P)/tau is 0.
    for _ in 0..50 {
        let n = rng.gen_range(2..12);
        let teacher: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let student: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let tau = rng.gen_range(0.2..3.0);
        let mass: f64 = kl_score_gradient(&teacher, &student, tau).iter().sum();
        assert!(
            mass.abs() <= KL_MASS_TOL,
            "gradient mass {mass} exceeds {KL_MASS_TOL}"
        );
    }
    println!(
        "PASS criterion 03: 50 FD checks per loss within {FD_TOL} (worst {worst:.2e}), \
         KL self-distillation exactly 0, gradient mass within {KL_MASS_TOL}"
    );
}

#[test]
fn criterion_04_single_triple_batch_is_bitwise_pairwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    for i in 0..100 {
        let inst = random_loss_instance(&mut rng, 1, 2);
        let triple = &inst.triples[0];
        let a = loss_pairwise_ce(&inst.model, triple, &inst.store).unwrap();
        let b = loss_in_batch(&inst.model, std::slice::from_ref(triple), &inst.store).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "triple {i}: loss bits differ");
        for d in 0..a.gradient.len() {
            assert_eq!(
                a.gradient[d].to_bits(),
                b.gradient[d].to_bits(),
                "triple {i}: gradient[{d}] bits differ"
            );
        }
    }
    println!("PASS criterion 04: in-batch B=1 bitwise-equals pairwise on 100 triples");
}

#[test]
fn criterion_05_training_recovers_topic_markers() {
    let toy = toy_corpus(&ToySpec::default());
    let expanded: Vec<ExpandedDocument> = toy
        .documents
        .iter()
        .map(ExpandedDocument::from_document)
        .collect();
    let store = DocStore::build(&expanded);
    let config = TrainingConfig {
        loss_kind: LossKind::KlDistill,
        learning_rate: 0.05,
        batch_size: 10,
        temperature: 1.0,
        epochs: 40,
        seed: 42,
    };
    let (model, report) = train(&config, TrainData::Groups(&toy.groups), &store).unwrap();
    assert_eq!(report.steps, 200, "50 groups / batch 10 over 40 epochs");

    let first = report.epoch_losses[0];
    let last = *report.epoch_losses.last().unwrap();
    assert!(
        last <= first * LOSS_REDUCTION,
        "mean loss fell only {first} -> {last}"
    );

    let impacts = compute_collection_impacts(&model, &expanded);
    let index = build_index(&impacts, None).unwrap();
    let mut run = TrecRun::default();
    for query in &toy.heldout_queries {
        let (result, _) = maxscore_daat(&index, query, 1000);
        let ranked: Vec<(String, f64)> = result
            .entries
            .iter()
            .map(|e| (index.doc_id(e.doc).unwrap().to_string(), e.score as f64))
            .collect();
        run.push_ranked(&query.query_id, &ranked, "acc5");
    }
    let mrr = mrr_at(&run, &toy.qrels, 10, 1);
    assert!(
        mrr >= MRR_FLOOR,
        "MRR@10 {mrr} below {MRR_FLOOR} on held-out queries"
    );
    println!(
        "PASS criterion 05: 200 steps, loss {first:.3} -> {last:.3}, MRR@10 {mrr:.3} \
         on {} held-out queries",
        toy.heldout_queries.len()
    );
}

#[test]
fn criterion_06_quantization_monotone_with_bounded_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC6);
    let mut checked = 0usize;
    for _ in 0..100 {
        let w_max = rng.gen_range(-3.0f64..5.0).exp();
        let mut ws: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..=w_max)).collect();
        ws.push(0.0);
        ws.push(w_max);
        ws.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut prev_q = 0u8;
        for (i, &w) in ws.iter().enumerate() {
            let q = quantize_impact(w, w_max).unwrap();
            if i > 0 {
                assert!(q >= prev_q, "monotonicity violated at w={w}, w_max={w_max}");
            }
            prev_q = q;
            let reconstructed = f64::from(q) * w_max / 255.0;
            assert!(
                (w - reconstructed).abs() <= w_max / 255.0 + 1e-12,
                "reconstruction error for w={w}, w_max={w_max}"
            );
            checked += 1;
        }
        assert_eq!(quantize_impact(0.0, w_max).unwrap(), 0, "0 must map to 0");
        assert_eq!(
            quantize_impact(w_max, w_max).unwrap(),
            255,
            "w_max must map to 255"
        );
    }
    assert!(checked >= 100_000);
    println!("PASS criterion 06: quantization monotone with bounded error over {checked} draws");
}

#[test]
fn criterion_07_serialization_round_trips_canonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC7);
    for trial in 0..100 {
        let draw = if trial % 2 == 0 {
            ImpactDraw::Zipfian
        } else {
            ImpactDraw::Uniform
        };
        let index = random_index(&mut rng, 400, 80, draw);
        let bytes = index_to_bytes(&index);
        let back = read_index(&bytes).unwrap_or_else(|e| panic!("trial {trial}: {e}"));

        assert_eq!(back.num_docs(), index.num_docs());
        assert_eq!(back.w_max().to_bits(), index.w_max().to_bits());
        assert_eq!(back.num_terms(), index.num_terms());
        for (a, b) in back.terms().zip(index.terms()) {
            assert_eq!(a.term, b.term);
            assert_eq!(a.max_q_impact, b.max_q_impact);
            assert_eq!(a.postings, b.postings);
        }
        assert_eq!(
            index_to_bytes(&back),
            bytes,
            "trial {trial}: re-serialization must be byte-identical"
        );
    }
    println!("PASS criterion 07: 100 indexes round-trip with byte-identical re-serialization");
}

#[test]
fn criterion_08_sampler_respects_filtered_support() {
    let docs: Vec<Document> = [
        "the quick brown fox jumps over the lazy dog",
        "the quick red fox runs past the brown dog",
        "a lazy dog sleeps while the quick fox jumps",
        "brown foxes and red dogs run over lazy cats",
    ]
    .iter()
    .enumerate()
    .map(|(i, text)| Document::new(format!("d{i}"), *text))
    .collect();
    let model = build_ngram_model(&docs, 2, 0.5).unwrap();

    // Every one of 10^4 seeded draws lies in the filtered support.
    let mut rng = derive_rng(0xACC8, 0);
    let mut context: Vec<String> = Vec::new();
    for _ in 0..10_000 {
        let dist = next_token_dist(&model, &context);
        let filtered = filter_top_k_top_p(&dist, 5, 0.8);
        let tok = sample_from(&filtered, &mut rng);
        assert!(
            filtered.probs().contains_key(&tok),
            "sampled token '{tok}' outside the filtered support"
        );
        if tok == EOS || context.len() > 12 {
            context.clear();
        } else {
            context.push(tok);
        }
    }

    // k = |V|, p = 1 is the identity filter.
    let v = model.vocabulary().len();
    let contexts: [&[String]; 2] = [&[], &[("quick".to_string())]];
    for ctx in contexts {
        let dist = next_token_dist(&model, ctx);
        let identity = filter_top_k_top_p(&dist, v, 1.0);
        assert_eq!(identity.probs().len(), dist.probs().len());
        for (term, &p) in dist.probs() {
            let q = identity.prob(term);
            assert!(
                (p - q).abs() <= IDENTITY_TOL,
                "identity filter moved P({term}) by {}",
                (p - q).abs()
            );
        }
    }

    // A fixed seed reproduces output bytes.
    let cfg = SamplerConfig {
        k: 5,
        p: 0.8,
        max_len: 6,
        num_queries: 50,
        seed: 7,
    };
    let sample_all = || -> String {
        let mut out = String::new();
        for (i, doc) in docs.iter().enumerate() {
            let mut rng = derive_rng(cfg.seed, i as u64);
            for _ in 0..cfg.num_queries {
                out.push_str(&sample_query(&model, doc, &cfg, &mut rng));
                out.push('\n');
            }
        }
        out
    };
    assert_eq!(sample_all(), sample_all(), "same seed must reproduce bytes");

    // Support is non-increasing (and nested) as p decreases.
    let grid = [1.0, 0.95, 0.5, 0.1];
    let mut rng = derive_rng(0xACC8, 1);
    for _ in 0..200 {
        let len = rng.gen_range(0..3);
        let ctx: Vec<String> = (0..len)
            .map(|_| {
                let words = ["the", "quick", "fox", "dog", "lazy"];
                words[rng.gen_range(0..words.len())].to_string()
            })
            .collect();
        let dist = next_token_dist(&model, &ctx);
        let mut prev: Option<std::collections::BTreeSet<String>> = None;
        for &p in &grid {
            let support: std::collections::BTreeSet<String> =
                filter_top_k_top_p(&dist, 5, p).probs().keys().cloned().collect();
            if let Some(prev) = &prev {
                assert!(
                    support.is_subset(prev),
                    "support for p={p} is not nested in the previous one"
                );
            }
            prev = Some(support);
        }
    }
    println!(
        "PASS criterion 08: 10^4 draws in support, identity filter within {IDENTITY_TOL}, \
         byte-reproducible, support nested over p grid"
    );
}

#[test]
fn criterion_09_filtration_keeps_exactly_the_top_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC9);
    for round in 0..100 {
        let n = rng.gen_range(1..400);
        let all_ties = round % 10 == 0;
        let records: Vec<ExpansionRecord> = (0..n)
            .map(|i| ExpansionRecord {
                doc_id: format!("d{i}"),
                queries: vec![ExpansionQuery {
                    text: format!("q{i}"),
                    score: Some(if all_ties {
                        3.25
                    } else {
                        // Coarse grid forces plenty of ties.
                        f64::from(rng.gen_range(0..6u32)) / 2.0
                    }),
                }],
            })
            .collect();

        let (kept, report) = filter_expansions(&records, 0.3).unwrap();
        let expected = (0.3 * n as f64).ceil() as usize;
        let kept_scores: Vec<f64> = kept
            .iter()
            .flat_map(|r| r.queries.iter().map(|q| q.score.unwrap()))
            .collect();
        assert_eq!(kept_scores.len(), expected, "round {round}: retained count");
        assert_eq!(report.retained, expected);
        assert_eq!(report.total_queries, n);

        let min_kept = kept_scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_dropped = records
            .iter()
            .filter(|r| !kept.iter().any(|k| k.doc_id == r.doc_id && !k.queries.is_empty()))
            .flat_map(|r| r.queries.iter().map(|q| q.score.unwrap()))
            .fold(f64::NEG_INFINITY, f64::max);
        if max_dropped.is_finite() {
            assert!(
                min_kept >= max_dropped,
                "round {round}: kept {min_kept} below dropped {max_dropped}"
            );
        }

        if all_ties {
            // Stable tie-breaking: the first ceil(0.3 n) queries in input
            // order survive.
            let kept_ids: Vec<&str> = kept
                .iter()
                .filter(|r| !r.queries.is_empty())
                .map(|r| r.doc_id.as_str())
                .collect();
            let expected_ids: Vec<String> = (0..expected).map(|i| format!("d{i}")).collect();
            assert_eq!(
                kept_ids,
                expected_ids.iter().map(String::as_str).collect::<Vec<_>>(),
                "round {round}: all-ties filtration must keep input order"
            );
        }
    }
    println!("PASS criterion 09: filtration retains exactly ceil(0.3 N) over 100 fuzzed rounds");
}

#[test]
fn criterion_10_metric_fixtures_and_recall_monotonicity() {
    use std::io::BufReader;
    let qrels = |lines: &str| lsr_core::corpus::load_qrels(BufReader::new(lines.as_bytes())).unwrap();

    // MRR fixture: ranks 1, 2, and absent -> (1 + 0.5 + 0)/3.
    let q = qrels("q1 0 d1 1\nq2 0 d2 1\nq3 0 d3 1\n");
    let mut run = TrecRun::default();
    run.push_ranked("q1", &[("d1".into(), 9.0), ("x".into(), 8.0)], "t");
    run.push_ranked("q2", &[("x".into(), 9.0), ("d2".into(), 8.0)], "t");
    run.push_ranked("q3", &[("x".into(), 9.0), ("y".into(), 8.0)], "t");
    let mrr = mrr_at(&run, &q, 10, 1);
    assert!((mrr - 0.5).abs() <= METRIC_TOL, "MRR fixture: got {mrr}");

    // NDCG fixture: qrels {d1: 3, d2: 1}, run [d2, d1].
    let q = qrels("q1 0 d1 3\nq1 0 d2 1\n");
    let mut run = TrecRun::default();
    run.push_ranked("q1", &[("d2".into(), 9.0), ("d1".into(), 8.0)], "t");
    let got = ndcg_at(&run, &q, 10);
    let log2_3 = 3f64.log2();
    let expected = (1.0 + 7.0 / log2_3) / (7.0 + 1.0 / log2_3);
    assert!(
        (got - expected).abs() <= METRIC_TOL,
        "NDCG fixture: got {got}, expected {expected}"
    );

    // Recall fixture: 1 of 2 relevant in the top 2.
    let q = qrels("q1 0 d1 1\nq1 0 d2 1\n");
    let mut run = TrecRun::default();
    run.push_ranked(
        "q1",
        &[("d1".into(), 9.0), ("x".into(), 8.0), ("d2".into(), 7.0)],
        "t",
    );
    let got = recall_at(&run, &q, 2, 1);
    assert!((got - 0.5).abs() <= METRIC_TOL, "recall fixture: got {got}");

    // Monotonicity across the depth grid on fuzzed runs.
    let depths = [10usize, 100, 200, 400, 600, 800, 1000];
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCA);
    for round in 0..30 {
        let num_docs = rng.gen_range(50..1200);
        let num_queries = rng.gen_range(1..8);
        let mut qrels = lsr_core::corpus::Qrels::new();
        let mut run = TrecRun::default();
        for qi in 0..num_queries {
            let qid = format!("q{qi}");
            for d in 0..num_docs {
                if rng.gen_bool(0.05) {
                    qrels.insert(&qid, format!("d{d}"), rng.gen_range(1..4u32));
                }
            }
            let mut ranked: Vec<(String, f64)> = (0..num_docs)
                .map(|d| (format!("d{d}"), rng.gen_range(0.0..100.0)))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            ranked.truncate(1000);
            run.push_ranked(&qid, &ranked, "fuzz");
        }
        let values: Vec<f64> = depths.iter().map(|&d| recall_at(&run, &qrels, d, 1)).collect();
        for w in values.windows(2) {
            assert!(
                w[0] <= w[1] + 1e-15,
                "round {round}: recall decreased across depths: {values:?}"
            );
        }
    }
    println!(
        "PASS criterion 10: metric fixtures within {METRIC_TOL}, recall monotone over \
         depth grid on 30 fuzzed runs"
    );
}

#[test]
fn criterion_11_end_to_end_pipeline_under_budget() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let start = Instant::now();

    let run_step = |args: &[&str]| -> String {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_lsr"))
            .current_dir(dir)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "lsr {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).expect("utf-8")
    };

    run_step(&["gen-toy", "--out", "."]);
    run_step(&["expand"]);
    run_step(&["filter", "--standin-scorer"]);
    run_step(&["train"]);
    run_step(&["index"]);
    run_step(&["search"]);
    let json = run_step(&["eval", "--json"]);

    let elapsed = start.elapsed();
    assert!(
        elapsed < E2E_BUDGET,
        "pipeline took {elapsed:?}, budget {E2E_BUDGET:?}"
    );

    // The emitted run parses as a valid TREC run with 1-based dense ranks.
    let file = std::fs::File::open(dir.join("run.trec")).unwrap();
    let run = TrecRun::read(std::io::BufReader::new(file)).unwrap();
    assert!(!run.entries.is_empty());
    let queries: std::collections::BTreeSet<&str> =
        run.entries.iter().map(|e| e.query_id.as_str()).collect();
    assert_eq!(queries.len(), 50, "one ranking per held-out query");

    // Every metric in the report is a value in [0, 1].
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    let mut metrics = vec![
        ("mrr_at_10", report["mrr_at_10"].as_f64().unwrap()),
        ("ndcg_at_10", report["ndcg_at_10"].as_f64().unwrap()),
    ];
    for (depth, value) in report["recall_at"].as_object().unwrap() {
        metrics.push(("recall", value.as_f64().unwrap()));
        let _ = depth;
    }
    for (name, value) in &metrics {
        assert!(
            (0.0..=1.0).contains(value),
            "{name} = {value} outside [0, 1]"
        );
    }
    println!(
        "PASS criterion 11: end-to-end pipeline in {elapsed:?} with {} metrics in [0, 1]",
        metrics.len()
    );
}

// Shared sanity check: the acceptance battery's own query generator only
// produces queries whose vocabulary terms exist in the index.
#[test]
fn acceptance_query_generator_hits_the_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let index = random_index(&mut rng, 100, 20, ImpactDraw::Uniform);
    for _ in 0..50 {
        let query = random_query(&mut rng, &index, 1, 8);
        let handles = prepare_query(&index, &query);
        assert!(handles.len() <= query.tokens.len());
    }
}
