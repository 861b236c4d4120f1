//! In-process message-passing runtime: one worker thread per site plus a
//! coordinator/driver, wired as a full mesh of FIFO channels.
//!
//! The runtime carries two protocols. Training: sites report vocabularies,
//! receive the initial model, then loop (global weights in, weight update
//! out) until shutdown; the coordinator's round barrier simply waits for a
//! complete [`RoundState`]. Search: a driver fans each query out to target
//! sites, which answer with their local top-k for merging.
//!
//! Sites never share memory and results must not depend on scheduling:
//! updates are slotted by site ordinal before aggregation, so the threaded
//! runner reproduces the sequential reference byte for byte. Privacy is
//! structural — a `Query` payload holds a [`SearchQuery`] (vector, k,
//! exclusion id), so raw document text cannot travel by construction.

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Instant;

use thiserror::Error;

use crate::corpus::{build_vocabulary, Corpus, Vocabulary};
use crate::embedding::{EmbeddingModel, TrainMode};
use crate::federation::{
    aggregate, edge_round, server_bootstrap, FederationConfig, FederationError, JointOutcome,
    RoundMetric, RoundState, SiteId, WeightUpdate,
};
use crate::mapper::MapperModel;
use crate::search::{
    local_topk_among, mapped_query_vector, merge_results, SearchError, SearchQuery, SearchResult,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no mesh peer has ordinal {0}")]
    UnknownPeer(usize),
    #[error("message channel disconnected")]
    Disconnected,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("a worker thread panicked")]
    WorkerPanic,
}

/// What a message carries; one variant per protocol step.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Site → coordinator at bootstrap: local vocabulary and document ids
    /// (counts and opaque ids only — never text).
    VocabReport {
        vocab: Vocabulary,
        doc_ids: Vec<String>,
    },
    /// Coordinator → site: the freshly initialised shared model.
    InitialModel(Box<EmbeddingModel>),
    /// Coordinator → site, once per round: the current global snapshot.
    GlobalWeights(Vec<f64>),
    /// Site → coordinator: trained snapshot plus round diagnostics.
    WeightUpdate {
        update: WeightUpdate,
        loss: f64,
        wall_ms: u64,
    },
    /// Origin → target site: a vector to score. Carries no document text.
    Query {
        query_id: String,
        query: SearchQuery,
    },
    /// Target site → origin: its local top-k for the query.
    ResultList {
        query_id: String,
        result: SearchResult,
    },
    /// Terminates a worker once its inbox is drained (FIFO guarantees any
    /// earlier message is handled first).
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: SiteId,
    /// Present on training messages, absent elsewhere.
    pub round: Option<usize>,
    pub payload: Payload,
}

/// One participant's mailbox plus senders to every peer, addressed by the
/// peer's ordinal.
pub struct Endpoint {
    me: SiteId,
    inbox: Receiver<Message>,
    peers: BTreeMap<usize, Sender<Message>>,
}

impl Endpoint {
    pub fn id(&self) -> &SiteId {
        &self.me
    }

    /// Ordered, reliable delivery to one peer.
    pub fn send(
        &self,
        to: usize,
        round: Option<usize>,
        payload: Payload,
    ) -> Result<(), RuntimeError> {
        let peer = self.peers.get(&to).ok_or(RuntimeError::UnknownPeer(to))?;
        peer.send(Message {
            sender: self.me.clone(),
            round,
            payload,
        })
        .map_err(|_| RuntimeError::Disconnected)
    }

    /// Blocks for the next message; per-sender order is preserved.
    pub fn recv(&self) -> Result<Message, RuntimeError> {
        self.inbox.recv().map_err(|_| RuntimeError::Disconnected)
    }
}

/// Builds a fully connected mesh, one endpoint per participant, in input
/// order. Participants must carry distinct ordinals — those are the
/// addresses.
pub fn full_mesh(participants: &[SiteId]) -> Vec<Endpoint> {
    let channels: Vec<(Sender<Message>, Receiver<Message>)> =
        participants.iter().map(|_| channel()).collect();
    let senders: BTreeMap<usize, Sender<Message>> = participants
        .iter()
        .zip(&channels)
        .map(|(id, (tx, _))| (id.ordinal, tx.clone()))
        .collect();
    assert_eq!(
        senders.len(),
        participants.len(),
        "mesh participants must have distinct ordinals"
    );
    participants
        .iter()
        .zip(channels)
        .map(|(id, (_, rx))| Endpoint {
            me: id.clone(),
            inbox: rx,
            // No sender to oneself: once every peer hangs up, recv() must
            // observe the disconnect instead of blocking forever.
            peers: senders
                .iter()
                .filter(|(ordinal, _)| **ordinal != id.ordinal)
                .map(|(ordinal, tx)| (*ordinal, tx.clone()))
                .collect(),
        })
        .collect()
}

/// Wraps an out-of-protocol payload into an error. A `Shutdown` where work
/// was expected means the sender failed and withdrew.
fn unexpected(sender: &SiteId, payload: &Payload, expected: &str) -> RuntimeError {
    match payload {
        Payload::Shutdown => RuntimeError::Protocol(format!(
            "participant {} withdrew before the protocol finished",
            sender.ordinal
        )),
        other => RuntimeError::Protocol(format!("expected {expected}, got {other:?}")),
    }
}

/// Runs a failable worker body; on failure, best-effort notifies the peer
/// that drives the protocol so it bails out instead of waiting forever.
fn notify_on_error(
    endpoint: &Endpoint,
    driver: usize,
    body: impl FnOnce(&Endpoint) -> Result<(), RuntimeError>,
) -> Result<(), RuntimeError> {
    let result = body(endpoint);
    if result.is_err() {
        let _ = endpoint.send(driver, None, Payload::Shutdown);
    }
    result
}

/// A site's half of the training protocol.
fn training_site(
    endpoint: &Endpoint,
    corpus: Corpus,
    config: FederationConfig,
    coordinator: usize,
) -> Result<(), RuntimeError> {
    let vocab = build_vocabulary(&corpus, config.min_count).map_err(FederationError::from)?;
    let doc_ids = match config.embedding.mode {
        TrainMode::PvDm => corpus.doc_ids(),
        TrainMode::SkipGram => Vec::new(),
    };
    endpoint.send(coordinator, None, Payload::VocabReport { vocab, doc_ids })?;

    let mut model = match endpoint.recv()?.payload {
        Payload::InitialModel(model) => *model,
        Payload::Shutdown => return Ok(()),
        other => {
            return Err(RuntimeError::Protocol(format!(
                "expected the initial model, got {other:?}"
            )))
        }
    };

    loop {
        let msg = endpoint.recv()?;
        match msg.payload {
            Payload::GlobalWeights(global) => {
                let round = msg.round.ok_or_else(|| {
                    RuntimeError::Protocol("global weights without a round number".into())
                })?;
                let started = Instant::now();
                let (update, loss) =
                    edge_round(&mut model, &corpus, &global, round, &config, endpoint.id())?;
                let wall_ms = started.elapsed().as_millis() as u64;
                endpoint.send(
                    coordinator,
                    Some(round),
                    Payload::WeightUpdate {
                        update,
                        loss,
                        wall_ms,
                    },
                )?;
            }
            Payload::Shutdown => return Ok(()),
            other => {
                return Err(RuntimeError::Protocol(format!(
                    "unexpected message during training: {other:?}"
                )))
            }
        }
    }
}

/// The coordinator's half: bootstrap, round barriers, aggregation.
fn coordinate(
    endpoint: &Endpoint,
    num_sites: usize,
    config: &FederationConfig,
    space_tag: &str,
) -> Result<JointOutcome, RuntimeError> {
    let outcome = coordinate_rounds(endpoint, num_sites, config, space_tag);
    // Always release the sites, even on an early bail-out: a site blocked on
    // its inbox would otherwise never join.
    for site in 0..num_sites {
        let _ = endpoint.send(site, None, Payload::Shutdown);
    }
    outcome
}

fn coordinate_rounds(
    endpoint: &Endpoint,
    num_sites: usize,
    config: &FederationConfig,
    space_tag: &str,
) -> Result<JointOutcome, RuntimeError> {
    let mut reports: Vec<Option<(Vocabulary, Vec<String>)>> = vec![None; num_sites];
    for _ in 0..num_sites {
        let msg = endpoint.recv()?;
        let (vocab, doc_ids) = match msg.payload {
            Payload::VocabReport { vocab, doc_ids } => (vocab, doc_ids),
            other => return Err(unexpected(&msg.sender, &other, "a vocabulary report")),
        };
        let slot = reports
            .get_mut(msg.sender.ordinal)
            .ok_or(RuntimeError::UnknownPeer(msg.sender.ordinal))?;
        if slot.replace((vocab, doc_ids)).is_some() {
            return Err(RuntimeError::Protocol(format!(
                "site {} reported its vocabulary twice",
                msg.sender.ordinal
            )));
        }
    }
    let mut local_vocabs = Vec::with_capacity(num_sites);
    let mut site_doc_ids = Vec::with_capacity(num_sites);
    for report in reports.into_iter().flatten() {
        local_vocabs.push(report.0);
        site_doc_ids.push(report.1);
    }

    let (_merged, mut model, layout) =
        server_bootstrap(&local_vocabs, &site_doc_ids, space_tag, &config.embedding)?;
    for site in 0..num_sites {
        endpoint.send(site, None, Payload::InitialModel(Box::new(model.clone())))?;
    }

    let mut global = model.get_weights();
    let mut metrics = Vec::new();
    let mut rounds_run = 0;
    for round in 0..config.rounds {
        for site in 0..num_sites {
            endpoint.send(site, Some(round), Payload::GlobalWeights(global.clone()))?;
        }
        let mut state = RoundState::new(round, global.clone(), num_sites);
        let mut round_metrics: Vec<Option<RoundMetric>> = vec![None; num_sites];
        while !state.is_complete() {
            let msg = endpoint.recv()?;
            let (update, loss, wall_ms) = match msg.payload {
                Payload::WeightUpdate {
                    update,
                    loss,
                    wall_ms,
                } => (update, loss, wall_ms),
                other => return Err(unexpected(&msg.sender, &other, "a weight update")),
            };
            let ordinal = update.site.ordinal;
            let label = update.site.label.clone();
            state.record(update)?;
            round_metrics[ordinal] = Some(RoundMetric {
                round,
                site: label,
                loss,
                wall_ms,
            });
        }
        metrics.extend(round_metrics.into_iter().flatten());

        let next = aggregate(state.updates(), &layout)?;
        let max_delta = global
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        global = next;
        rounds_run += 1;
        if config.early_stop_delta.is_some_and(|d| max_delta < d) {
            break;
        }
    }

    model.set_weights(&global).map_err(FederationError::from)?;
    model.ensure_finite().map_err(FederationError::from)?;
    Ok(JointOutcome {
        model,
        metrics,
        rounds_run,
    })
}

/// Joins workers and folds their failures into the main result. A worker
/// error outranks the driver-side error it usually causes (a bare
/// disconnect).
fn settle<T>(
    result: Result<T, RuntimeError>,
    handles: Vec<thread::JoinHandle<Result<(), RuntimeError>>>,
) -> Result<T, RuntimeError> {
    let mut worker_err = None;
    for handle in handles {
        let outcome = match handle.join() {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(_) => Some(RuntimeError::WorkerPanic),
        };
        worker_err = worker_err.or(outcome);
    }
    match (result, worker_err) {
        (Ok(value), None) => Ok(value),
        (_, Some(e)) => Err(e),
        (Err(e), None) => Err(e),
    }
}

/// Runs the full training protocol with one thread per site.
///
/// Produces the same model (and the same per-round losses) as the
/// single-threaded reference runner regardless of scheduling; only the
/// wall-clock metric values differ.
pub fn run_joint_training_threaded(
    site_corpora: &[Corpus],
    config: &FederationConfig,
    space_tag: &str,
) -> Result<JointOutcome, RuntimeError> {
    config.validate()?;
    if site_corpora.is_empty() {
        return Err(FederationError::EmptyFederation.into());
    }
    for (i, corpus) in site_corpora.iter().enumerate() {
        if corpus.is_empty() {
            return Err(FederationError::EmptySite(i).into());
        }
    }

    let num_sites = site_corpora.len();
    let mut participants: Vec<SiteId> = site_corpora
        .iter()
        .enumerate()
        .map(|(i, c)| SiteId::new(i, c.source_tag()))
        .collect();
    participants.push(SiteId::new(num_sites, "coordinator"));

    let mut endpoints = full_mesh(&participants);
    let coordinator = endpoints.pop().expect("mesh includes the coordinator");

    let handles: Vec<_> = endpoints
        .into_iter()
        .zip(site_corpora.iter().cloned())
        .map(|(endpoint, corpus)| {
            let config = config.clone();
            thread::spawn(move || {
                notify_on_error(&endpoint, num_sites, |e| {
                    training_site(e, corpus, config, num_sites)
                })
            })
        })
        .collect();

    let result = coordinate(&coordinator, num_sites, config, space_tag);
    settle(result, handles)
}

/// One site's searchable state: who it is, its model, and the items it
/// serves.
#[derive(Debug, Clone)]
pub struct SearchSite {
    pub site: SiteId,
    pub model: EmbeddingModel,
    pub items: Vec<String>,
}

/// A prepared fan-out: the per-target queries one origin query becomes.
#[derive(Debug, Clone)]
pub struct SearchJob {
    pub query_id: String,
    pub k: usize,
    /// (target site ordinal, query to send there).
    pub per_target: Vec<(usize, SearchQuery)>,
}

/// Fan-out for the shared-space regime: the same vector goes everywhere.
pub fn fan_out_joint(query_id: &str, query: &SearchQuery, num_sites: usize) -> SearchJob {
    SearchJob {
        query_id: query_id.to_owned(),
        k: query.k,
        per_target: (0..num_sites).map(|t| (t, query.clone())).collect(),
    }
}

/// Fan-out for the mapped regime: each target gets the origin vector
/// translated into its space (or re-tagged raw in the control arm).
pub fn fan_out_mapped(
    query_id: &str,
    query: &SearchQuery,
    origin: usize,
    target_spaces: &[(usize, String)],
    mappers: &BTreeMap<(String, String), MapperModel>,
    use_mapping: bool,
) -> Result<SearchJob, SearchError> {
    let mut per_target = Vec::with_capacity(target_spaces.len());
    for (ordinal, space) in target_spaces {
        let vector =
            mapped_query_vector(&query.vector, origin, *ordinal, space, mappers, use_mapping)?;
        per_target.push((
            *ordinal,
            SearchQuery {
                vector,
                k: query.k,
                exclude: query.exclude.clone(),
            },
        ));
    }
    Ok(SearchJob {
        query_id: query_id.to_owned(),
        k: query.k,
        per_target,
    })
}

/// A site's half of the search protocol: answer queries until shutdown.
fn search_site(endpoint: &Endpoint, site: SearchSite) -> Result<(), RuntimeError> {
    loop {
        let msg = endpoint.recv()?;
        match msg.payload {
            Payload::Query { query_id, query } => {
                let result = local_topk_among(
                    &site.model,
                    &query,
                    &site.site,
                    site.items.iter().map(String::as_str),
                )?;
                endpoint.send(
                    msg.sender.ordinal,
                    None,
                    Payload::ResultList { query_id, result },
                )?;
            }
            Payload::Shutdown => return Ok(()),
            other => {
                return Err(RuntimeError::Protocol(format!(
                    "unexpected message during search: {other:?}"
                )))
            }
        }
    }
}

/// Runs a batch of search jobs against site workers and merges each job's
/// per-site answers into its global top-k.
pub fn serve_searches(
    sites: Vec<SearchSite>,
    jobs: &[SearchJob],
) -> Result<BTreeMap<String, SearchResult>, RuntimeError> {
    let num_sites = sites.len();
    let mut participants: Vec<SiteId> = sites.iter().map(|s| s.site.clone()).collect();
    participants.push(SiteId::new(num_sites, "driver"));

    let mut endpoints = full_mesh(&participants);
    let driver = endpoints.pop().expect("mesh includes the driver");

    let handles: Vec<_> = endpoints
        .into_iter()
        .zip(sites)
        .map(|(endpoint, site)| {
            thread::spawn(move || {
                notify_on_error(&endpoint, num_sites, |e| search_site(e, site))
            })
        })
        .collect();

    let result = (|| {
        let mut expected_parts: BTreeMap<&str, usize> = BTreeMap::new();
        for job in jobs {
            if expected_parts
                .insert(&job.query_id, job.per_target.len())
                .is_some()
            {
                return Err(RuntimeError::Protocol(format!(
                    "duplicate query id `{}`",
                    job.query_id
                )));
            }
            for (target, query) in &job.per_target {
                driver.send(
                    *target,
                    None,
                    Payload::Query {
                        query_id: job.query_id.clone(),
                        query: query.clone(),
                    },
                )?;
            }
        }

        let total: usize = jobs.iter().map(|j| j.per_target.len()).sum();
        let mut parts: BTreeMap<String, Vec<SearchResult>> = BTreeMap::new();
        for _ in 0..total {
            let msg = driver.recv()?;
            let (query_id, result) = match msg.payload {
                Payload::ResultList { query_id, result } => (query_id, result),
                other => return Err(unexpected(&msg.sender, &other, "a result list")),
            };
            parts.entry(query_id).or_default().push(result);
        }

        jobs.iter()
            .map(|job| {
                let answers = parts.remove(&job.query_id).unwrap_or_default();
                if answers.len() != job.per_target.len() {
                    return Err(RuntimeError::Protocol(format!(
                        "query `{}` got {} of {} answers",
                        job.query_id,
                        answers.len(),
                        job.per_target.len()
                    )));
                }
                Ok((job.query_id.clone(), merge_results(&answers, job.k)))
            })
            .collect()
    })();

    for site in 0..num_sites {
        // Workers that already died disconnect their channel; that error is
        // surfaced through settle, not here.
        let _ = driver.send(site, None, Payload::Shutdown);
    }
    settle(result, handles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{partition_corpus, tokenize, Document, PartitionPolicy, PartitionSpec};
    use crate::embedding::{train, TrainingConfig};
    use crate::federation::run_joint_training;
    use crate::search::{global_search_joint, global_search_mapped, SiteIndex};

    fn ids(n: usize) -> Vec<SiteId> {
        (0..n).map(|i| SiteId::new(i, format!("p{i}"))).collect()
    }

    #[test]
    fn mesh_delivers_identical_messages_in_fifo_order() {
        let mesh = full_mesh(&ids(2));
        let (a, b) = (&mesh[0], &mesh[1]);

        let first = Payload::GlobalWeights(vec![1.0, 2.0]);
        let second = Payload::Shutdown;
        a.send(1, Some(3), first.clone()).unwrap();
        a.send(1, None, second.clone()).unwrap();

        let got1 = b.recv().unwrap();
        assert_eq!(got1.sender, SiteId::new(0, "p0"));
        assert_eq!(got1.round, Some(3));
        assert_eq!(got1.payload, first);

        let got2 = b.recv().unwrap();
        assert_eq!(got2.payload, second);
    }

    #[test]
    fn dead_peers_surface_as_disconnected() {
        let mut mesh = full_mesh(&ids(2));
        let b = mesh.pop().unwrap();
        let a = mesh.pop().unwrap();
        drop(a);
        // b's own sender to a is gone with a's inbox.
        assert!(matches!(
            b.send(0, None, Payload::Shutdown),
            Err(RuntimeError::Disconnected)
        ));
        assert!(matches!(b.send(9, None, Payload::Shutdown), Err(RuntimeError::UnknownPeer(9))));
        // Nothing will ever arrive: every sender to b is dropped.
        assert!(matches!(b.recv(), Err(RuntimeError::Disconnected)));
    }

    fn themed_corpus(tag: &str, n: usize) -> Corpus {
        let themes = [
            "cat feline purr whiskers kitten cat feline purr",
            "engine piston torque exhaust gearbox engine piston torque",
            "violin cello sonata chord melody violin cello sonata",
        ];
        let docs = (0..n)
            .map(|i| Document {
                doc_id: format!("{tag}{i}"),
                tokens: tokenize(themes[i % 3]),
            })
            .collect();
        Corpus::from_documents(tag, docs).unwrap()
    }

    #[test]
    fn threaded_training_matches_the_sequential_reference() {
        let corpus = themed_corpus("t", 18);
        let sites = partition_corpus(
            &corpus,
            &PartitionSpec {
                num_sites: 3,
                policy: PartitionPolicy::Uniform,
                seed: 11,
            },
        )
        .unwrap();
        let config = FederationConfig {
            rounds: 4,
            embedding: TrainingConfig {
                dim: 8,
                epochs: 4,
                learning_rate: 0.05,
                window: 3,
                negative_samples: 3,
                seed: 21,
                ..TrainingConfig::text_defaults()
            },
            ..FederationConfig::default()
        };

        let sequential = run_joint_training(&sites, &config, "t").unwrap();
        let threaded = run_joint_training_threaded(&sites, &config, "t").unwrap();

        assert_eq!(sequential.model, threaded.model);
        assert_eq!(sequential.rounds_run, threaded.rounds_run);
        assert_eq!(sequential.metrics.len(), threaded.metrics.len());
        for (a, b) in sequential.metrics.iter().zip(&threaded.metrics) {
            assert_eq!((a.round, &a.site), (b.round, &b.site));
            assert_eq!(a.loss, b.loss);
        }
    }

    fn cfg(seed: u64) -> TrainingConfig {
        TrainingConfig {
            dim: 10,
            epochs: 15,
            learning_rate: 0.05,
            window: 3,
            negative_samples: 3,
            seed,
            ..TrainingConfig::text_defaults()
        }
    }

    #[test]
    fn threaded_search_equals_direct_joint_search() {
        let model = train(&themed_corpus("t", 12), &cfg(5), 2).unwrap();
        let items: Vec<String> = model.item_ids().iter().map(|s| s.to_string()).collect();
        let (left, right) = items.split_at(6);
        let site_ids = [SiteId::new(0, "s0"), SiteId::new(1, "s1")];

        let queries: Vec<(String, SearchQuery)> = ["t0", "t4", "t11"]
            .iter()
            .map(|id| {
                (
                    id.to_string(),
                    SearchQuery {
                        vector: model.vectorize(id).unwrap(),
                        k: 4,
                        exclude: Some(id.to_string()),
                    },
                )
            })
            .collect();

        let jobs: Vec<SearchJob> = queries
            .iter()
            .map(|(id, q)| fan_out_joint(id, q, 2))
            .collect();
        let sites = vec![
            SearchSite {
                site: site_ids[0].clone(),
                model: model.clone(),
                items: left.to_vec(),
            },
            SearchSite {
                site: site_ids[1].clone(),
                model: model.clone(),
                items: right.to_vec(),
            },
        ];
        let served = serve_searches(sites, &jobs).unwrap();

        let indexes = vec![
            SiteIndex {
                site: site_ids[0].clone(),
                model: &model,
                items: left.to_vec(),
            },
            SiteIndex {
                site: site_ids[1].clone(),
                model: &model,
                items: right.to_vec(),
            },
        ];
        for (id, q) in &queries {
            let direct = global_search_joint(q, &indexes).unwrap();
            assert_eq!(served[id], direct, "query {id} diverged");
        }
    }

    #[test]
    fn threaded_search_equals_direct_mapped_search_in_control_mode() {
        let m0 = train(&themed_corpus("a", 9), &cfg(7), 2).unwrap();
        let m1 = train(&themed_corpus("b", 9), &cfg(8), 2).unwrap();
        let items0: Vec<String> = m0.item_ids().iter().map(|s| s.to_string()).collect();
        let items1: Vec<String> = m1.item_ids().iter().map(|s| s.to_string()).collect();
        let site_ids = [SiteId::new(0, "a"), SiteId::new(1, "b")];
        let mappers = BTreeMap::new();

        let query = SearchQuery {
            vector: m0.vectorize("a2").unwrap(),
            k: 5,
            exclude: Some("a2".into()),
        };
        let spaces = vec![(0, "a".to_string()), (1, "b".to_string())];
        let job = fan_out_mapped("q", &query, 0, &spaces, &mappers, false).unwrap();
        let sites = vec![
            SearchSite {
                site: site_ids[0].clone(),
                model: m0.clone(),
                items: items0.clone(),
            },
            SearchSite {
                site: site_ids[1].clone(),
                model: m1.clone(),
                items: items1.clone(),
            },
        ];
        let served = serve_searches(sites, std::slice::from_ref(&job)).unwrap();

        let indexes = vec![
            SiteIndex {
                site: site_ids[0].clone(),
                model: &m0,
                items: items0,
            },
            SiteIndex {
                site: site_ids[1].clone(),
                model: &m1,
                items: items1,
            },
        ];
        let direct = global_search_mapped(&query, 0, &indexes, &mappers, false).unwrap();
        assert_eq!(served["q"], direct);

        // With mapping demanded but no mapper present, the failure
        // propagates out of the fan-out.
        assert!(matches!(
            fan_out_mapped("q", &query, 0, &spaces, &mappers, true),
            Err(SearchError::MissingMapper { .. })
        ));
    }

    #[test]
    fn one_site_threaded_training_still_matches_centralized() {
        let corpus = themed_corpus("solo", 9);
        let config = FederationConfig {
            rounds: 3,
            embedding: TrainingConfig {
                dim: 6,
                epochs: 3,
                learning_rate: 0.05,
                window: 3,
                negative_samples: 2,
                seed: 2,
                ..TrainingConfig::text_defaults()
            },
            ..FederationConfig::default()
        };
        let central = train(&corpus, &config.embedding, config.min_count).unwrap();
        let threaded =
            run_joint_training_threaded(std::slice::from_ref(&corpus), &config, "solo").unwrap();
        assert_eq!(central.get_weights(), threaded.model.get_weights());
    }
}
