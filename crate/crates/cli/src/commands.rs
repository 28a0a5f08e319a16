//! The seven pipeline subcommands. Every command loads what it needs from
//! the shared config, does one stage of work, and writes its outputs to the
//! configured paths.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lsr_core::corpus::{
    self, CorpusError, Document, ExpansionQuery, ExpansionRecord, Query,
};
use lsr_core::eval::{measure_mrt, EvalError, MetricsReport, TrecRun};
use lsr_core::expansion::{
    apply_standin_scores, filter_expansions, merge_expansion, truncate_document,
    truncate_expanded, ExpandedDocument,
};
use lsr_core::impact::{train, DocStore, ImpactModel, LossKind, TrainData};
use lsr_core::index::{
    build_index, compute_collection_impacts, index_to_bytes, read_index, ImpactIndex,
};
use lsr_core::search::{exhaustive_daat, maxscore_daat};
use lsr_core::synth::{toy_corpus, ToySpec};
use lsr_core::textgen::{beam_search_queries, build_ngram_model, derive_rng, sample_query};

use crate::config::PipelineConfig;

/// Command failures, each mapped to a stable process exit code:
/// I/O -> 2, validation -> 3, empty result -> 4.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Validation(String),
    Empty(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Empty(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(msg) | CliError::Validation(msg) | CliError::Empty(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn open_input(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("cannot open {what} {}: {e}", path.display())))
}

fn create_output(path: &Path, what: &str) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {what} {}: {e}", path.display())))
}

fn load_collection(config: &PipelineConfig) -> Result<Vec<Document>, CliError> {
    let reader = open_input(&config.paths.collection, "collection")?;
    Ok(corpus::load_collection(reader)?)
}

/// How expansion queries are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Strategy {
    /// Top-k/top-p sampling, num_queries independent draws per document.
    #[default]
    Sample,
    /// Length-normalized beam search, the num_queries best distinct texts.
    Beam,
}

/// Generates expansion queries for every document and writes them as JSONL.
pub fn cmd_expand(
    config: &PipelineConfig,
    strategy: Strategy,
    beam_width: Option<usize>,
) -> Result<(), CliError> {
    let docs = load_collection(config)?;
    let model =
        build_ngram_model(&docs, config.ngram_order, config.ngram_alpha).map_err(validation)?;
    config.sampler.validate().map_err(validation)?;

    let width = beam_width.unwrap_or(config.sampler.num_queries);
    if strategy == Strategy::Beam && width < config.sampler.num_queries {
        return Err(CliError::Validation(format!(
            "beam width {width} is smaller than num_queries {}",
            config.sampler.num_queries
        )));
    }

    let mut records = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let texts: Vec<String> = match strategy {
            Strategy::Sample => {
                // One rng stream per document: output is independent of any
                // future batching of this loop.
                let mut rng = derive_rng(config.sampler.seed, i as u64);
                (0..config.sampler.num_queries)
                    .map(|_| sample_query(&model, doc, &config.sampler, &mut rng))
                    .collect()
            }
            Strategy::Beam => beam_search_queries(
                &model,
                doc,
                width,
                config.sampler.max_len,
                config.sampler.num_queries,
            ),
        };
        records.push(ExpansionRecord {
            doc_id: doc.doc_id.clone(),
            queries: texts
                .into_iter()
                .map(|text| ExpansionQuery { text, score: None })
                .collect(),
        });
    }

    let mut out = create_output(&config.paths.expansions, "expansions file")?;
    corpus::write_expansions(&records, &mut out)?;
    out.flush()?;
    log::info!(
        "expanded {} documents ({:?}, {} queries each) -> {}",
        records.len(),
        strategy,
        config.sampler.num_queries,
        config.paths.expansions.display()
    );
    Ok(())
}

/// Keeps the global top fraction of expansion queries by score and prints
/// the filtration report as JSON.
pub fn cmd_filter(config: &PipelineConfig, standin_scorer: bool) -> Result<(), CliError> {
    let mut records = corpus::load_expansions(open_input(&config.paths.expansions, "expansions")?)?;
    if standin_scorer {
        let docs = load_collection(config)?;
        apply_standin_scores(&mut records, &docs).map_err(validation)?;
    }
    let (filtered, report) = filter_expansions(&records, config.fraction).map_err(validation)?;

    let mut out = create_output(&config.paths.filtered_expansions, "filtered expansions")?;
    corpus::write_expansions(&filtered, &mut out)?;
    out.flush()?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

/// The collection with expansion queries merged in. Prefers filtered
/// expansions when they exist, falls back to raw expansions, and otherwise
/// uses the original documents unchanged.
fn load_expanded_collection(config: &PipelineConfig) -> Result<Vec<ExpandedDocument>, CliError> {
    let mut docs = load_collection(config)?;
    if config.truncate_before_merge {
        if let Some(max) = config.max_doc_tokens {
            for doc in &mut docs {
                *doc = truncate_document(doc, max);
            }
        }
    }

    let source = [&config.paths.filtered_expansions, &config.paths.expansions]
        .into_iter()
        .find(|p| p.exists());
    let mut queries_by_doc: std::collections::HashMap<String, Vec<String>> =
        std::collections::HashMap::new();
    if let Some(path) = source {
        log::info!("merging expansions from {}", path.display());
        let records = corpus::load_expansions(open_input(path, "expansions")?)?;
        let known: std::collections::HashSet<&str> =
            docs.iter().map(|d| d.doc_id.as_str()).collect();
        for record in records {
            if !known.contains(record.doc_id.as_str()) {
                return Err(CliError::Validation(format!(
                    "expansion record for unknown doc_id '{}'",
                    record.doc_id
                )));
            }
            queries_by_doc
                .entry(record.doc_id)
                .or_default()
                .extend(record.queries.into_iter().map(|q| q.text));
        }
    }

    Ok(docs
        .iter()
        .map(|doc| {
            let queries = queries_by_doc.remove(&doc.doc_id).unwrap_or_default();
            let merged = merge_expansion(doc, &queries);
            match config.max_doc_tokens {
                Some(max) if !config.truncate_before_merge => truncate_expanded(&merged, max),
                _ => merged,
            }
        })
        .collect())
}

/// Trains the impact model and writes it as JSON plus a per-epoch loss
/// trace CSV.
pub fn cmd_train(config: &PipelineConfig) -> Result<(), CliError> {
    let expanded = load_expanded_collection(config)?;
    let store = DocStore::build(&expanded);

    let needs_groups = matches!(
        config.training.loss_kind,
        LossKind::KlDistill | LossKind::MarginMse
    );
    let triples;
    let groups;
    let data = if needs_groups {
        let path = config.paths.groups.as_ref().ok_or_else(|| {
            CliError::Validation(format!(
                "loss {} requires a distillation groups file (paths.groups)",
                config.training.loss_kind.name()
            ))
        })?;
        groups = corpus::load_distillation_groups(open_input(path, "groups")?)?;
        TrainData::Groups(&groups)
    } else {
        let path = config.paths.triples.as_ref().ok_or_else(|| {
            CliError::Validation(format!(
                "loss {} requires a triples file (paths.triples)",
                config.training.loss_kind.name()
            ))
        })?;
        triples = corpus::load_triples(open_input(path, "triples")?)?;
        TrainData::Triples(&triples)
    };

    let (model, report) = train(&config.training, data, &store).map_err(validation)?;

    let mut model_out = create_output(&config.paths.model, "model file")?;
    model_out.write_all(model.to_json().as_bytes())?;
    model_out.write_all(b"\n")?;
    model_out.flush()?;

    let mut trace = create_output(&config.paths.trace, "loss trace")?;
    writeln!(trace, "epoch,mean_loss")?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(trace, "{},{}", epoch + 1, loss)?;
    }
    trace.flush()?;

    log::info!(
        "trained {} for {} steps -> {}",
        config.training.loss_kind.name(),
        report.steps,
        config.paths.model.display()
    );
    Ok(())
}

/// Computes impacts for the (expanded) collection, builds the quantized
/// index, and writes it. Prints the index headline numbers.
pub fn cmd_index(
    config: &PipelineConfig,
    no_expansion: bool,
    debug_dump: Option<&Path>,
) -> Result<(), CliError> {
    let expanded = if no_expansion {
        let mut docs = load_collection(config)?;
        if let Some(max) = config.max_doc_tokens {
            for doc in &mut docs {
                *doc = truncate_document(doc, max);
            }
        }
        docs.iter().map(ExpandedDocument::from_document).collect()
    } else {
        load_expanded_collection(config)?
    };

    let model_text = std::fs::read_to_string(&config.paths.model).map_err(|e| {
        CliError::Io(format!(
            "cannot read model {}: {e}",
            config.paths.model.display()
        ))
    })?;
    let model = ImpactModel::from_json(&model_text).map_err(validation)?;

    let impacts = compute_collection_impacts(&model, &expanded);
    let index = build_index(&impacts, None).map_err(validation)?;

    let bytes = index_to_bytes(&index);
    std::fs::write(&config.paths.index, &bytes).map_err(|e| {
        CliError::Io(format!(
            "cannot write index {}: {e}",
            config.paths.index.display()
        ))
    })?;

    if let Some(path) = debug_dump {
        let mut out = create_output(path, "debug dump")?;
        index.write_debug_dump(&mut out)?;
        out.flush()?;
    }

    println!(
        "num_docs={} num_terms={} w_max={}",
        index.num_docs(),
        index.num_terms(),
        index.w_max()
    );
    if index.is_unsearchable() {
        return Err(CliError::Empty(
            "index has no postings: every term impact is zero (is the model trained?)".into(),
        ));
    }
    Ok(())
}

fn load_index(config: &PipelineConfig) -> Result<ImpactIndex, CliError> {
    let bytes = std::fs::read(&config.paths.index).map_err(|e| {
        CliError::Io(format!(
            "cannot read index {}: {e}",
            config.paths.index.display()
        ))
    })?;
    read_index(&bytes).map_err(validation)
}

fn load_query_log(config: &PipelineConfig) -> Result<Vec<Query>, CliError> {
    Ok(corpus::load_queries(open_input(
        &config.paths.queries,
        "queries",
    )?)?)
}

/// Retrieves the top k documents for every query and writes a TREC run.
/// `oracle` switches from MaxScore to the exhaustive engine; both produce
/// identical files.
pub fn cmd_search(config: &PipelineConfig, oracle: bool) -> Result<(), CliError> {
    let index = load_index(config)?;
    let queries = load_query_log(config)?;
    let k = config.retrieval_k;

    let mut run = TrecRun::default();
    let mut touched = 0usize;
    for query in &queries {
        let (result, stats) = if oracle {
            exhaustive_daat(&index, query, k)
        } else {
            maxscore_daat(&index, query, k)
        };
        touched += stats.postings_touched;
        let ranked: Vec<(String, f64)> = result
            .entries
            .iter()
            .map(|e| {
                let doc_id = index
                    .doc_id(e.doc)
                    .expect("index results reference the doc table")
                    .to_string();
                (doc_id, e.score as f64)
            })
            .collect();
        run.push_ranked(&query.query_id, &ranked, &config.run_tag);
    }

    let mut out = create_output(&config.paths.run, "run file")?;
    run.write(&mut out).map_err(eval_error)?;
    out.flush()?;
    log::info!(
        "searched {} queries (k={k}, engine={}, postings touched {touched}) -> {}",
        queries.len(),
        if oracle { "exhaustive" } else { "maxscore" },
        config.paths.run.display()
    );
    Ok(())
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Io(io) => CliError::Io(io.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

/// Scores the run file against the qrels and prints a metrics report;
/// `bench` additionally measures mean response time over the query log.
pub fn cmd_eval(config: &PipelineConfig, bench: bool, json: bool) -> Result<(), CliError> {
    let qrels_path = config.paths.qrels.as_ref().ok_or_else(|| {
        CliError::Validation("eval requires a qrels file (paths.qrels)".into())
    })?;
    let qrels = corpus::load_qrels(open_input(qrels_path, "qrels")?)?;
    let run = TrecRun::read(open_input(&config.paths.run, "run file")?).map_err(eval_error)?;

    let mut report = MetricsReport::compute(
        &run,
        &qrels,
        &config.metric_cutoffs,
        config.binarize_grade,
    );
    if bench {
        let index = load_index(config)?;
        let queries = load_query_log(config)?;
        let mrt = measure_mrt(
            &index,
            &queries,
            config.retrieval_k,
            config.bench_repetitions,
        )
        .map_err(eval_error)?;
        report.mrt_ms = Some(mrt);
    }

    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

/// Writes the bundled synthetic corpus plus a ready-to-run config into a
/// directory.
pub fn cmd_gen_toy(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let spec = ToySpec {
        seed,
        ..ToySpec::default()
    };
    let toy = toy_corpus(&spec);

    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let path = out_dir.join(name);
        let mut out = create_output(&path, name)?;
        f(&mut out)?;
        out.flush()?;
        Ok::<_, CliError>(())
    };
    write("collection.jsonl", &|w| {
        corpus::write_collection(&toy.documents, w)
    })?;
    write("queries.tsv", &|w| {
        corpus::write_queries(&toy.heldout_queries, w)
    })?;
    write("qrels.txt", &|w| corpus::write_qrels(&toy.qrels, w))?;
    write("groups.jsonl", &|w| {
        corpus::write_distillation_groups(&toy.groups, w)
    })?;
    write("triples.tsv", &|w| corpus::write_triples(&toy.triples, w))?;

    // Training settings sized to the toy corpus: 50 groups / batch 10 over
    // 40 epochs = 200 gradient steps, which comfortably separates the topic
    // markers from the filler vocabulary.
    let mut config = PipelineConfig::default();
    config.paths.qrels = Some(PathBuf::from("qrels.txt"));
    config.paths.groups = Some(PathBuf::from("groups.jsonl"));
    config.paths.triples = Some(PathBuf::from("triples.tsv"));
    config.sampler.seed = seed;
    config.training.seed = seed;
    config.training.batch_size = 10;
    config.training.epochs = 40;
    let config_path = out_dir.join("config.json");
    let mut out = create_output(&config_path, "config")?;
    serde_json::to_writer_pretty(&mut out, &config).map_err(|e| CliError::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;

    println!(
        "wrote toy corpus ({} docs, {} queries, {} groups) and {}",
        toy.documents.len(),
        toy.heldout_queries.len(),
        toy.groups.len(),
        config_path.display()
    );
    Ok(())
}
