//! End-to-end scenario execution: a JSON config describing mode, dataset,
//! partitioning, and training goes in; models, ranked results, and overlap
//! reports come out.
//!
//! Three modes share one pipeline skeleton. `centralized` trains one model
//! on the pooled data and reports it against itself. `joint` federates one
//! shared model across site workers over the message-passing runtime, then
//! answers queries by broadcast search. `mapped` trains per-site models and
//! cross-space mappers on a public corpus, then answers queries by
//! translating vectors into each target site's space (with an optional
//! untranslated control arm). Every mode also trains the centralized
//! baseline on the pooled data — the reference side of every report.
//!
//! Determinism: the master seed is the only randomness input. Each stage
//! draws its own seed by labeled derivation, and seed fields inside
//! sub-configs (training, synthetic datasets, mappers) are overwritten, so
//! identical scenarios produce byte-identical outputs across runs and
//! thread schedules. Persisted round logs keep losses but not wall times
//! for the same reason.

pub mod datagen;
pub mod runtime;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::graph::{
    partition_graph, partition_owners, read_edge_list, write_edge_list, Graph,
};
use crate::corpus::walks::{generate_walks, WalkConfig};
use crate::corpus::{
    partition_corpus, read_corpus_file, write_corpus_file, Corpus, CorpusError, PartitionPolicy,
    PartitionSpec,
};
use crate::embedding::io::save_model;
use crate::embedding::{train, EmbeddingError, EmbeddingModel, TrainMode, TrainingConfig};
use crate::evaluation::{
    id_set, mean_sim_k, top_ids, write_overlap_csv, write_overlap_json, EvaluationError,
    OverlapReport,
};
use crate::federation::{
    Aggregation, FederationConfig, FederationError, JointOutcome, RoundMetric, SiteId,
};
use crate::mapper::io::save_mapper;
use crate::mapper::{train_mapper, MapperConfig, MapperError, MapperModel};
use crate::rng::{derive_seed, derive_seed_indexed};
use crate::search::{
    local_topk, result_records, write_results_jsonl, ResultRecord, SearchError, SearchQuery,
    SearchResult,
};

use self::datagen::{
    generate_community_graph, generate_text_corpus, SyntheticGraphSpec, SyntheticTextSpec,
};
use self::runtime::{
    fan_out_joint, fan_out_mapped, run_joint_training_threaded, serve_searches, RuntimeError,
    SearchJob, SearchSite,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn corpus_code(e: &CorpusError) -> i32 {
    match e {
        CorpusError::InvalidPartition(_) | CorpusError::InvalidSpec(_) => 2,
        _ => 3,
    }
}

fn embedding_code(e: &EmbeddingError) -> i32 {
    match e {
        EmbeddingError::InvalidConfig(_) => 2,
        EmbeddingError::NonFiniteWeights { .. } => 4,
        EmbeddingError::Corpus(c) => corpus_code(c),
        _ => 3,
    }
}

fn federation_code(e: &FederationError) -> i32 {
    match e {
        FederationError::InvalidConfig(_) => 2,
        FederationError::Embedding(em) => embedding_code(em),
        FederationError::Corpus(c) => corpus_code(c),
        _ => 3,
    }
}

fn mapper_code(e: &MapperError) -> i32 {
    match e {
        MapperError::InvalidConfig(_) => 2,
        MapperError::Embedding(em) => embedding_code(em),
        _ => 3,
    }
}

fn search_code(e: &SearchError) -> i32 {
    match e {
        SearchError::Embedding(em) => embedding_code(em),
        SearchError::Mapper(m) => mapper_code(m),
        _ => 3,
    }
}

impl ScenarioError {
    /// Process exit code: 2 for config problems, 3 for data problems,
    /// 4 for numeric failures (non-finite weights), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Corpus(e) => corpus_code(e),
            ScenarioError::Embedding(e) => embedding_code(e),
            ScenarioError::Federation(e) => federation_code(e),
            ScenarioError::Mapper(e) => mapper_code(e),
            ScenarioError::Search(e) => search_code(e),
            ScenarioError::Evaluation(_) => 3,
            ScenarioError::Io { .. } => 3,
            ScenarioError::Runtime(e) => match e {
                RuntimeError::Federation(f) => federation_code(f),
                RuntimeError::Search(s) => search_code(s),
                _ => 1,
            },
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One model on the pooled data; the report compares it to itself.
    Centralized,
    /// Sites co-train one shared model, searched by broadcast.
    Joint,
    /// Per-site models plus learned cross-space mappers.
    Mapped,
}

/// Where a dataset comes from. File paths load as-is; synthetic specs are
/// generated on the fly with their seed re-derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// TSV file, one `<doc_id>\t<raw text>` per line.
    TextFile { path: PathBuf },
    /// Generated topic-mixture documents.
    SyntheticText(SyntheticTextSpec),
    /// Whitespace edge list; `#` comments and blank lines skipped.
    EdgeListFile { path: PathBuf },
    /// Generated planted-community graph.
    SyntheticGraph(SyntheticGraphSpec),
}

impl DatasetSpec {
    fn is_text(&self) -> bool {
        matches!(
            self,
            DatasetSpec::TextFile { .. } | DatasetSpec::SyntheticText(_)
        )
    }
}

/// Round structure of a joint run; the embedding config rides along in the
/// scenario's `training` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSpec {
    pub rounds: usize,
    pub local_batches_per_round: usize,
    pub early_stop_delta: Option<f64>,
}

impl Default for FederationSpec {
    fn default() -> Self {
        FederationSpec {
            rounds: 40,
            local_batches_per_round: 1,
            early_stop_delta: None,
        }
    }
}

/// Which queries run and how results are judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    /// Result-list depth; clamped so every list can actually fill.
    pub k: usize,
    /// Explicit query item ids; wins over `num_queries`.
    #[serde(default)]
    pub query_ids: Option<Vec<String>>,
    /// First N queryable items (in the baseline model's item order).
    #[serde(default)]
    pub num_queries: Option<usize>,
    /// Mapped mode only: also run the raw-vector control arm.
    #[serde(default = "default_true")]
    pub unmapped_control: bool,
}

fn default_true() -> bool {
    true
}

fn default_min_count() -> u64 {
    2
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            k: 10,
            query_ids: None,
            num_queries: None,
            unmapped_control: true,
        }
    }
}

/// One end-to-end experiment, loadable from JSON.
///
/// The master `seed` is the only randomness input: every stage derives its
/// own stream from it, and seed fields inside sub-configs are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mode: Mode,
    pub dataset: DatasetSpec,
    /// Walk generation for graph datasets; defaults apply when omitted.
    #[serde(default)]
    pub walks: Option<WalkConfig>,
    pub num_sites: usize,
    /// Cross-edge handling for graph partitions; text corpora are always
    /// dealt uniformly. Defaults to keeping cross-site edges.
    #[serde(default)]
    pub partition_policy: Option<PartitionPolicy>,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    pub training: TrainingConfig,
    #[serde(default)]
    pub federation: FederationSpec,
    #[serde(default)]
    pub mapper: MapperConfig,
    /// Pivot corpus for mapper training; required in mapped mode.
    #[serde(default)]
    pub public_dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: &str| Err(ScenarioError::Config(msg.into()));
        if self.num_sites == 0 {
            return fail("num_sites must be at least 1");
        }
        self.training.validate().map_err(ScenarioError::Embedding)?;
        if self.evaluation.k == 0 {
            return fail("evaluation.k must be at least 1");
        }
        if self.evaluation.num_queries == Some(0) {
            return fail("evaluation.num_queries must be at least 1 when set");
        }
        if self
            .evaluation
            .query_ids
            .as_ref()
            .is_some_and(Vec::is_empty)
        {
            return fail("evaluation.query_ids must be non-empty when set");
        }

        let text = self.dataset.is_text();
        match (text, self.training.mode) {
            (true, TrainMode::SkipGram) => {
                return fail("text datasets train document vectors, not skip-gram")
            }
            (false, TrainMode::PvDm) => {
                return fail("graph datasets train skip-gram over walks, not document vectors")
            }
            _ => {}
        }
        if text && self.walks.is_some() {
            return fail("walks only apply to graph datasets");
        }
        match (text, self.partition_policy) {
            (true, Some(p)) if p != PartitionPolicy::Uniform => {
                return fail("text corpora only partition uniformly")
            }
            (false, Some(PartitionPolicy::Uniform)) => {
                return fail("graph partitions must pick a cross-edge policy")
            }
            _ => {}
        }

        match self.mode {
            Mode::Mapped => {
                if !text {
                    return fail("mapped mode requires a text dataset");
                }
                if self.num_sites < 2 {
                    return fail("mapped mode needs at least 2 sites");
                }
                match &self.public_dataset {
                    None => return fail("mapped mode requires a public_dataset"),
                    Some(spec) if !spec.is_text() => {
                        return fail("the public dataset must be text")
                    }
                    Some(_) => {}
                }
                self.mapper.validate().map_err(ScenarioError::Mapper)?;
            }
            Mode::Joint => {
                if self.federation.rounds == 0 || self.federation.local_batches_per_round == 0 {
                    return fail("federation rounds and local_batches_per_round must be at least 1");
                }
            }
            Mode::Centralized => {}
        }
        Ok(())
    }

    fn partition_spec(&self, text: bool) -> PartitionSpec {
        let policy = self.partition_policy.unwrap_or(if text {
            PartitionPolicy::Uniform
        } else {
            PartitionPolicy::KeepCrossEdges
        });
        PartitionSpec {
            num_sites: self.num_sites,
            policy,
            seed: derive_seed(self.seed, "partition"),
        }
    }

    fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            rounds: self.federation.rounds,
            local_batches_per_round: self.federation.local_batches_per_round,
            embedding: TrainingConfig {
                seed: derive_seed(self.seed, "embedding"),
                ..self.training.clone()
            },
            min_count: self.min_count,
            aggregation: Aggregation::SampleWeightedMean,
            early_stop_delta: self.federation.early_stop_delta,
        }
    }

    /// The baseline's training config. In joint mode its epoch count equals
    /// the federation's total passes, so a one-site joint run reproduces the
    /// baseline exactly.
    fn central_config(&self) -> TrainingConfig {
        let epochs = match self.mode {
            Mode::Joint => self.federation.rounds * self.federation.local_batches_per_round,
            _ => self.training.epochs,
        };
        TrainingConfig {
            epochs,
            seed: derive_seed(self.seed, "embedding"),
            ..self.training.clone()
        }
    }
}

/// Parses a scenario file; any read or syntax problem is a config error.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))
}

fn materialize_text(spec: &DatasetSpec, tag: &str, seed: u64) -> Result<Corpus, ScenarioError> {
    match spec {
        DatasetSpec::TextFile { path } => Ok(read_corpus_file(path, tag)?),
        DatasetSpec::SyntheticText(s) => {
            let spec = SyntheticTextSpec { seed, ..s.clone() };
            Ok(generate_text_corpus(tag, &spec)?.0)
        }
        _ => Err(ScenarioError::Config("expected a text dataset".into())),
    }
}

fn materialize_graph(spec: &DatasetSpec, seed: u64) -> Result<Graph, ScenarioError> {
    match spec {
        DatasetSpec::EdgeListFile { path } => Ok(read_edge_list(path)?),
        DatasetSpec::SyntheticGraph(s) => {
            let spec = SyntheticGraphSpec { seed, ..s.clone() };
            Ok(generate_community_graph(&spec)?.0)
        }
        _ => Err(ScenarioError::Config("expected a graph dataset".into())),
    }
}

/// Training data and serving sets for one scenario, both families reduced
/// to the same shape.
struct Prepared {
    /// Pooled training corpus for the centralized baseline.
    central_corpus: Corpus,
    /// Per-site training corpora (empty in centralized mode).
    site_corpora: Vec<Corpus>,
    /// Item ids each site serves at query time: its own documents, or the
    /// graph nodes it owns (so mirrored boundary nodes are served once).
    site_items: Vec<Vec<String>>,
}

fn prepare(scenario: &Scenario) -> Result<Prepared, ScenarioError> {
    let master = scenario.seed;
    if scenario.dataset.is_text() {
        let corpus = materialize_text(&scenario.dataset, "corpus", derive_seed(master, "dataset"))?;
        let (site_corpora, site_items) = if scenario.mode == Mode::Centralized {
            (Vec::new(), Vec::new())
        } else {
            let sites = partition_corpus(&corpus, &scenario.partition_spec(true))?;
            let items = sites.iter().map(|c| c.doc_ids()).collect();
            (sites, items)
        };
        Ok(Prepared {
            central_corpus: corpus,
            site_corpora,
            site_items,
        })
    } else {
        let graph = materialize_graph(&scenario.dataset, derive_seed(master, "dataset"))?;
        let base_walks = scenario.walks.clone().unwrap_or_default();
        let central_corpus = generate_walks(
            &graph,
            &WalkConfig {
                seed: derive_seed(master, "walks"),
                ..base_walks.clone()
            },
        )?;

        let (site_corpora, site_items) = if scenario.mode == Mode::Centralized {
            (Vec::new(), Vec::new())
        } else {
            let spec = scenario.partition_spec(false);
            let subgraphs = partition_graph(&graph, &spec)?;
            let owners = partition_owners(&graph, &spec);
            let mut corpora = Vec::with_capacity(subgraphs.len());
            for (i, sub) in subgraphs.iter().enumerate() {
                let walks = generate_walks(
                    sub,
                    &WalkConfig {
                        seed: derive_seed_indexed(master, "walks-site", i as u64),
                        ..base_walks.clone()
                    },
                )?;
                corpora.push(Corpus::from_documents(
                    format!("site{i}"),
                    walks.documents().to_vec(),
                )?);
            }
            let mut items = vec![Vec::new(); scenario.num_sites];
            for (node, site) in owners {
                items[site].push(node);
            }
            (corpora, items)
        };
        Ok(Prepared {
            central_corpus,
            site_corpora,
            site_items,
        })
    }
}

/// Everything a finished scenario leaves on disk, plus the parsed reports.
#[derive(Debug)]
pub struct ScenarioOutputs {
    pub output_dir: PathBuf,
    pub model_paths: Vec<PathBuf>,
    pub mapper_paths: Vec<PathBuf>,
    pub results_central: PathBuf,
    /// The evaluated system's results; in centralized mode this is the
    /// baseline file itself.
    pub results_primary: PathBuf,
    pub results_control: Option<PathBuf>,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub control_report_json: Option<PathBuf>,
    pub control_report_csv: Option<PathBuf>,
    pub losses_csv: Option<PathBuf>,
    pub report: OverlapReport,
    pub control_report: Option<OverlapReport>,
}

/// Per-round losses without wall times, which would break byte
/// reproducibility.
fn write_losses_csv(metrics: &[RoundMetric], path: &Path) -> Result<(), ScenarioError> {
    let mut out = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    writeln!(out, "round,site,loss").map_err(|e| io_err(path, e))?;
    for m in metrics {
        writeln!(out, "{},{},{}", m.round, m.site, m.loss).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn write_records(
    query_ids: &[String],
    results: &BTreeMap<String, SearchResult>,
    path: &Path,
) -> Result<(), ScenarioError> {
    let mut records: Vec<ResultRecord> = Vec::new();
    for id in query_ids {
        records.extend(result_records(id, &results[id]));
    }
    write_results_jsonl(&records, path)?;
    Ok(())
}

fn overlap_maps(
    query_ids: &[String],
    results: &BTreeMap<String, SearchResult>,
    k: usize,
) -> BTreeMap<String, BTreeSet<String>> {
    query_ids
        .iter()
        .map(|id| (id.clone(), id_set(&top_ids(&results[id], k))))
        .collect()
}

/// Queries every item of `query_ids` against the baseline model over its
/// full item set.
fn central_results(
    model: &EmbeddingModel,
    query_ids: &[String],
    k: usize,
) -> Result<BTreeMap<String, SearchResult>, ScenarioError> {
    let site = SiteId::new(0, "central");
    let mut results = BTreeMap::new();
    for id in query_ids {
        let query = SearchQuery {
            vector: model.vectorize(id)?,
            k,
            exclude: Some(id.clone()),
        };
        results.insert(id.clone(), local_topk(model, &query, &site)?);
    }
    Ok(results)
}

/// Runs a whole scenario and writes every artifact under its output
/// directory. See the module docs for the per-mode pipelines.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutputs, ScenarioError> {
    scenario.validate()?;
    let out_dir = &scenario.output_dir;
    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| io_err(&models_dir, e))?;

    let prepared = prepare(scenario)?;
    let central = train(
        &prepared.central_corpus,
        &scenario.central_config(),
        scenario.min_count,
    )?;
    let central_path = models_dir.join("central.model");
    save_model(&central, &central_path)?;
    let mut model_paths = vec![central_path];
    let mut mapper_paths = Vec::new();

    // The query universe: baseline items, restricted to what the evaluated
    // system can also answer, in baseline item order.
    let central_items: Vec<String> = central.item_ids().iter().map(|s| s.to_string()).collect();

    let mut losses_csv = None;
    let mut results_control = None;
    let mut control_report_json = None;
    let mut control_report_csv = None;
    let mut control_report = None;

    // Train the evaluated system and leave behind: queryable ids, per-site
    // serving sets, and a closure that answers prepared queries.
    let (primary_label, queryable, served_total, primary_runner): (
        &str,
        Vec<String>,
        usize,
        Box<dyn Fn(&[SearchJob]) -> Result<BTreeMap<String, SearchResult>, ScenarioError>>,
    );
    enum QueryPrep {
        /// Same vector everywhere: vectors come from one shared model.
        Shared(EmbeddingModel),
        /// Vectors come from the query's home model and are translated per
        /// target site.
        PerSite {
            locals: Vec<EmbeddingModel>,
            owner: BTreeMap<String, usize>,
            mappers: BTreeMap<(String, String), MapperModel>,
        },
    }
    let prep: QueryPrep;

    match scenario.mode {
        Mode::Centralized => {
            primary_label = "central";
            queryable = central_items.clone();
            served_total = central_items.len();
            prep = QueryPrep::Shared(central.clone());
            primary_runner = Box::new(|_jobs| unreachable!("centralized mode reuses the baseline"));
        }
        Mode::Joint => {
            let outcome: JointOutcome = run_joint_training_threaded(
                &prepared.site_corpora,
                &scenario.federation_config(),
                "joint",
            )?;
            let losses_path = out_dir.join("losses.csv");
            write_losses_csv(&outcome.metrics, &losses_path)?;
            losses_csv = Some(losses_path);

            let joint_path = models_dir.join("joint.model");
            save_model(&outcome.model, &joint_path)?;
            model_paths.push(joint_path);

            let joint_known: BTreeSet<&str> = outcome.model.item_ids().into_iter().collect();
            let site_items: Vec<Vec<String>> = prepared
                .site_items
                .iter()
                .map(|items| {
                    items
                        .iter()
                        .filter(|id| joint_known.contains(id.as_str()))
                        .cloned()
                        .collect()
                })
                .collect();
            served_total = site_items.iter().map(Vec::len).sum();
            queryable = central_items
                .iter()
                .filter(|id| joint_known.contains(id.as_str()))
                .cloned()
                .collect();

            let sites: Vec<SearchSite> = prepared
                .site_corpora
                .iter()
                .zip(&site_items)
                .enumerate()
                .map(|(i, (corpus, items))| SearchSite {
                    site: SiteId::new(i, corpus.source_tag()),
                    model: outcome.model.clone(),
                    items: items.clone(),
                })
                .collect();
            primary_label = "joint";
            prep = QueryPrep::Shared(outcome.model);
            primary_runner = Box::new(move |jobs| Ok(serve_searches(sites.clone(), jobs)?));
        }
        Mode::Mapped => {
            let mut locals = Vec::with_capacity(scenario.num_sites);
            for (i, corpus) in prepared.site_corpora.iter().enumerate() {
                let config = TrainingConfig {
                    seed: derive_seed_indexed(scenario.seed, "local", i as u64),
                    ..scenario.training.clone()
                };
                let model = train(corpus, &config, scenario.min_count)?;
                let path = models_dir.join(format!("site{i}.model"));
                save_model(&model, &path)?;
                model_paths.push(path);
                locals.push(model);
            }

            let public = materialize_text(
                scenario.public_dataset.as_ref().expect("validated"),
                "public",
                derive_seed(scenario.seed, "public-dataset"),
            )?;
            let mut mappers = BTreeMap::new();
            let n = scenario.num_sites;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let config = MapperConfig {
                        seed: derive_seed_indexed(scenario.seed, "mapper", (i * n + j) as u64),
                        ..scenario.mapper.clone()
                    };
                    let (mapper, _stats) = train_mapper(&locals[i], &locals[j], &public, &config)?;
                    let path = models_dir.join(format!("mapper_{i}_{j}.mapper"));
                    save_mapper(&mapper, &path)?;
                    mapper_paths.push(path);
                    mappers.insert(
                        (
                            locals[i].space_tag().to_owned(),
                            locals[j].space_tag().to_owned(),
                        ),
                        mapper,
                    );
                }
            }

            let owner: BTreeMap<String, usize> = prepared
                .site_items
                .iter()
                .enumerate()
                .flat_map(|(i, items)| items.iter().map(move |id| (id.clone(), i)))
                .collect();
            served_total = prepared.site_items.iter().map(Vec::len).sum();
            queryable = central_items
                .iter()
                .filter(|id| owner.contains_key(id.as_str()))
                .cloned()
                .collect();

            let sites: Vec<SearchSite> = prepared
                .site_corpora
                .iter()
                .zip(&prepared.site_items)
                .zip(&locals)
                .enumerate()
                .map(|(i, ((corpus, items), model))| SearchSite {
                    site: SiteId::new(i, corpus.source_tag()),
                    model: model.clone(),
                    items: items.clone(),
                })
                .collect();
            primary_label = "mapped";
            prep = QueryPrep::PerSite {
                locals,
                owner,
                mappers,
            };
            primary_runner = Box::new(move |jobs| Ok(serve_searches(sites.clone(), jobs)?));
        }
    }

    // Pick queries and clamp k so both sides can fill their lists (the
    // query itself is excluded, hence the -1).
    let query_ids: Vec<String> = match (&scenario.evaluation.query_ids, scenario.evaluation.num_queries)
    {
        (Some(ids), _) => {
            let known: BTreeSet<&str> = queryable.iter().map(String::as_str).collect();
            for id in ids {
                if !known.contains(id.as_str()) {
                    return Err(ScenarioError::Config(format!(
                        "query id `{id}` is not a queryable item"
                    )));
                }
            }
            ids.clone()
        }
        (None, Some(n)) => queryable.iter().take(n).cloned().collect(),
        (None, None) => queryable.clone(),
    };
    if query_ids.is_empty() {
        return Err(ScenarioError::Evaluation(EvaluationError::NoQueries));
    }
    let k = scenario
        .evaluation
        .k
        .min(central_items.len().saturating_sub(1))
        .min(served_total.saturating_sub(1));
    if k == 0 {
        return Err(ScenarioError::Config(
            "dataset too small to fill any result list".into(),
        ));
    }

    let baseline_results = central_results(&central, &query_ids, k)?;
    let results_central_path = out_dir.join("results_central.jsonl");
    write_records(&query_ids, &baseline_results, &results_central_path)?;

    // Build per-target query fan-outs, then let the runtime answer them.
    let spaces_of = |locals: &[EmbeddingModel]| -> Vec<(usize, String)> {
        locals
            .iter()
            .enumerate()
            .map(|(i, m)| (i, m.space_tag().to_owned()))
            .collect()
    };
    let make_jobs = |use_mapping: bool| -> Result<Vec<SearchJob>, ScenarioError> {
        let mut jobs = Vec::with_capacity(query_ids.len());
        for id in &query_ids {
            match &prep {
                QueryPrep::Shared(model) => {
                    let query = SearchQuery {
                        vector: model.vectorize(id)?,
                        k,
                        exclude: Some(id.clone()),
                    };
                    jobs.push(fan_out_joint(id, &query, scenario.num_sites));
                }
                QueryPrep::PerSite {
                    locals,
                    owner,
                    mappers,
                } => {
                    let home = owner[id];
                    let query = SearchQuery {
                        vector: locals[home].vectorize(id)?,
                        k,
                        exclude: Some(id.clone()),
                    };
                    jobs.push(fan_out_mapped(
                        id,
                        &query,
                        home,
                        &spaces_of(locals),
                        mappers,
                        use_mapping,
                    )?);
                }
            }
        }
        Ok(jobs)
    };

    let primary_results = if scenario.mode == Mode::Centralized {
        baseline_results.clone()
    } else {
        primary_runner(&make_jobs(true)?)?
    };
    let results_primary_path = out_dir.join(format!("results_{primary_label}.jsonl"));
    if scenario.mode != Mode::Centralized {
        write_records(&query_ids, &primary_results, &results_primary_path)?;
    }

    let baseline_sets = overlap_maps(&query_ids, &baseline_results, k);
    let primary_sets = overlap_maps(&query_ids, &primary_results, k);
    let report = mean_sim_k(&baseline_sets, &primary_sets, k)?;
    let report_json = out_dir.join("report.json");
    let report_csv = out_dir.join("report.csv");
    write_overlap_json(&report, &report_json)?;
    write_overlap_csv(&report, &report_csv)?;

    if scenario.mode == Mode::Mapped && scenario.evaluation.unmapped_control {
        let control_results = primary_runner(&make_jobs(false)?)?;
        let path = out_dir.join("results_unmapped.jsonl");
        write_records(&query_ids, &control_results, &path)?;
        results_control = Some(path);

        let control_sets = overlap_maps(&query_ids, &control_results, k);
        let control = mean_sim_k(&baseline_sets, &control_sets, k)?;
        let json = out_dir.join("control_report.json");
        let csv = out_dir.join("control_report.csv");
        write_overlap_json(&control, &json)?;
        write_overlap_csv(&control, &csv)?;
        control_report_json = Some(json);
        control_report_csv = Some(csv);
        control_report = Some(control);
    }

    Ok(ScenarioOutputs {
        output_dir: out_dir.clone(),
        model_paths,
        mapper_paths,
        results_central: results_central_path.clone(),
        results_primary: if scenario.mode == Mode::Centralized {
            results_central_path
        } else {
            results_primary_path
        },
        results_control,
        report_json,
        report_csv,
        control_report_json,
        control_report_csv,
        losses_csv,
        report,
        control_report,
    })
}

fn ensure_models_dir(scenario: &Scenario) -> Result<PathBuf, ScenarioError> {
    let dir = scenario.output_dir.join("models");
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Trains and saves only a scenario's pooled-data baseline model.
pub fn stage_train_central(scenario: &Scenario) -> Result<PathBuf, ScenarioError> {
    scenario.validate()?;
    let models_dir = ensure_models_dir(scenario)?;
    let prepared = prepare(scenario)?;
    let model = train(
        &prepared.central_corpus,
        &scenario.central_config(),
        scenario.min_count,
    )?;
    let path = models_dir.join("central.model");
    save_model(&model, &path)?;
    Ok(path)
}

/// Federates the shared model of a joint scenario and saves it along with
/// the per-round loss log. Returns (model path, losses path).
pub fn stage_train_joint(scenario: &Scenario) -> Result<(PathBuf, PathBuf), ScenarioError> {
    scenario.validate()?;
    if scenario.mode != Mode::Joint {
        return Err(ScenarioError::Config(
            "train-joint needs a joint-mode scenario".into(),
        ));
    }
    let models_dir = ensure_models_dir(scenario)?;
    let prepared = prepare(scenario)?;
    let outcome =
        run_joint_training_threaded(&prepared.site_corpora, &scenario.federation_config(), "joint")?;
    let model_path = models_dir.join("joint.model");
    save_model(&outcome.model, &model_path)?;
    let losses_path = scenario.output_dir.join("losses.csv");
    write_losses_csv(&outcome.metrics, &losses_path)?;
    Ok((model_path, losses_path))
}

fn train_locals(
    scenario: &Scenario,
    prepared: &Prepared,
    models_dir: &Path,
) -> Result<(Vec<EmbeddingModel>, Vec<PathBuf>), ScenarioError> {
    let mut models = Vec::with_capacity(prepared.site_corpora.len());
    let mut paths = Vec::with_capacity(prepared.site_corpora.len());
    for (i, corpus) in prepared.site_corpora.iter().enumerate() {
        let config = TrainingConfig {
            seed: derive_seed_indexed(scenario.seed, "local", i as u64),
            ..scenario.training.clone()
        };
        let model = train(corpus, &config, scenario.min_count)?;
        let path = models_dir.join(format!("site{i}.model"));
        save_model(&model, &path)?;
        paths.push(path);
        models.push(model);
    }
    Ok((models, paths))
}

/// Trains one independent model per site and saves them.
pub fn stage_train_local(scenario: &Scenario) -> Result<Vec<PathBuf>, ScenarioError> {
    scenario.validate()?;
    if scenario.mode == Mode::Centralized {
        return Err(ScenarioError::Config(
            "train-local needs a multi-site scenario".into(),
        ));
    }
    let models_dir = ensure_models_dir(scenario)?;
    let prepared = prepare(scenario)?;
    let (_models, paths) = train_locals(scenario, &prepared, &models_dir)?;
    Ok(paths)
}

/// Trains per-site models plus every cross-space mapper of a mapped
/// scenario; saves all of them and returns the mapper paths.
pub fn stage_train_mapper(scenario: &Scenario) -> Result<Vec<PathBuf>, ScenarioError> {
    scenario.validate()?;
    if scenario.mode != Mode::Mapped {
        return Err(ScenarioError::Config(
            "train-mapper needs a mapped-mode scenario".into(),
        ));
    }
    let models_dir = ensure_models_dir(scenario)?;
    let prepared = prepare(scenario)?;
    let (locals, _paths) = train_locals(scenario, &prepared, &models_dir)?;
    let public = materialize_text(
        scenario.public_dataset.as_ref().expect("validated"),
        "public",
        derive_seed(scenario.seed, "public-dataset"),
    )?;
    let n = scenario.num_sites;
    let mut paths = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let config = MapperConfig {
                seed: derive_seed_indexed(scenario.seed, "mapper", (i * n + j) as u64),
                ..scenario.mapper.clone()
            };
            let (mapper, _stats) = train_mapper(&locals[i], &locals[j], &public, &config)?;
            let path = models_dir.join(format!("mapper_{i}_{j}.mapper"));
            save_mapper(&mapper, &path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Writes a scenario's synthetic datasets to disk in the loadable formats
/// (TSV for text, an edge list for graphs).
pub fn stage_gen_data(scenario: &Scenario) -> Result<Vec<PathBuf>, ScenarioError> {
    scenario.validate()?;
    std::fs::create_dir_all(&scenario.output_dir).map_err(|e| io_err(&scenario.output_dir, e))?;
    let mut paths = Vec::new();

    let mut emit = |spec: &DatasetSpec, tag: &str, label: &str| -> Result<(), ScenarioError> {
        match spec {
            DatasetSpec::SyntheticText(_) => {
                let corpus = materialize_text(spec, tag, derive_seed(scenario.seed, label))?;
                let path = scenario.output_dir.join(format!("{tag}.tsv"));
                write_corpus_file(&corpus, &path)?;
                paths.push(path);
            }
            DatasetSpec::SyntheticGraph(_) => {
                let graph = materialize_graph(spec, derive_seed(scenario.seed, label))?;
                let path = scenario.output_dir.join("edges.txt");
                write_edge_list(&graph, &path)?;
                paths.push(path);
            }
            _ => {
                return Err(ScenarioError::Config(
                    "gen-data only applies to synthetic dataset specs".into(),
                ))
            }
        }
        Ok(())
    };

    emit(&scenario.dataset, "corpus", "dataset")?;
    if let Some(public) = &scenario.public_dataset {
        emit(public, "public", "public-dataset")?;
    }
    Ok(paths)
}
