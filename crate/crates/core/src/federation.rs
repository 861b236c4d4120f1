//! Synchronous federated training of one shared embedding model.
//!
//! The protocol has two phases. Bootstrap: every site reports its local
//! vocabulary (token + count, never raw text) and its document ids; the
//! coordinator merges vocabularies, initialises one model over the union,
//! and records a [`SnapshotLayout`] describing which flat-snapshot rows
//! belong to whom. Rounds: each site copies the current global snapshot,
//! trains locally, and returns its full snapshot with its sample count; the
//! coordinator combines updates with a sample-weighted mean.
//!
//! Document rows are special: only the owning site ever trains them, so
//! averaging them against other sites' stale copies would just shrink them
//! toward initialisation. [`aggregate`] therefore averages the shared word
//! and output segments but copies each document block from its owner.
//!
//! Aggregation iterates sites in ordinal order whatever order updates
//! arrive in, so the global snapshot is byte-identical under permutation —
//! and a one-site federation reproduces centralized training bit for bit.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_vocabulary, merge_vocabularies, Corpus, CorpusError, Vocabulary};
use crate::embedding::{
    epoch_lr, init_model, train_epoch, EmbeddingError, EmbeddingModel, EpochStats, TrainMode,
    TrainingConfig,
};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("federation needs at least one site")]
    EmptyFederation,
    #[error("site {0} has no documents")]
    EmptySite(usize),
    #[error("updates span multiple rounds")]
    MixedRounds,
    #[error("no update from site {0}")]
    MissingSite(usize),
    #[error("update from site {0} which is not in the layout")]
    UnknownSite(usize),
    #[error("multiple updates from site {0}")]
    DuplicateSite(usize),
    #[error("update has {actual} weights, layout expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("aggregation received no updates")]
    NoUpdates,
    #[error("total sample count across updates is zero")]
    NoSamples,
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
}

/// Stable identity of a participating site.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId {
    pub ordinal: usize,
    pub label: String,
}

impl SiteId {
    pub fn new(ordinal: usize, label: impl Into<String>) -> Self {
        SiteId {
            ordinal,
            label: label.into(),
        }
    }
}

/// One site's contribution to a round: its full post-training snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub site: SiteId,
    pub round: usize,
    /// Local training examples (documents); the averaging weight.
    pub num_samples: usize,
    pub weights: Vec<f64>,
}

/// Coordinator-side bookkeeping for a round in flight.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    pub global_weights: Vec<f64>,
    pending: BTreeSet<usize>,
    received: Vec<WeightUpdate>,
}

impl RoundState {
    pub fn new(round: usize, global_weights: Vec<f64>, num_sites: usize) -> Self {
        RoundState {
            round,
            global_weights,
            pending: (0..num_sites).collect(),
            received: Vec::with_capacity(num_sites),
        }
    }

    /// Records an update; rejects wrong-round and repeated contributions.
    pub fn record(&mut self, update: WeightUpdate) -> Result<(), FederationError> {
        if update.round != self.round {
            return Err(FederationError::MixedRounds);
        }
        if !self.pending.remove(&update.site.ordinal) {
            return Err(FederationError::DuplicateSite(update.site.ordinal));
        }
        self.received.push(update);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn updates(&self) -> &[WeightUpdate] {
        &self.received
    }
}

/// How update snapshots are combined. Only one strategy exists today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of site snapshots weighted by their sample counts.
    SampleWeightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    /// Full local passes per round; the effective epoch count of a joint
    /// run is `rounds * local_batches_per_round`.
    pub local_batches_per_round: usize,
    pub embedding: TrainingConfig,
    /// Vocabulary threshold applied at each site before reporting.
    pub min_count: u64,
    pub aggregation: Aggregation,
    /// Stop once the largest coordinate change of the global snapshot
    /// falls below this value.
    pub early_stop_delta: Option<f64>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 40,
            local_batches_per_round: 1,
            embedding: TrainingConfig::text_defaults(),
            min_count: 2,
            aggregation: Aggregation::SampleWeightedMean,
            early_stop_delta: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.rounds == 0 || self.local_batches_per_round == 0 {
            return Err(FederationError::InvalidConfig(
                "rounds and local_batches_per_round must be at least 1".into(),
            ));
        }
        self.embedding
            .validate()
            .map_err(FederationError::Embedding)
    }

    /// Total local passes the schedule spans.
    pub fn total_epochs(&self) -> usize {
        self.rounds * self.local_batches_per_round
    }
}

/// Row accounting of a flat snapshot: `vocab_rows` word-input rows, then
/// each site's document rows in ordinal order, then `vocab_rows` output
/// rows, all of width `dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotLayout {
    pub dim: usize,
    pub vocab_rows: usize,
    pub doc_rows_per_site: Vec<usize>,
}

impl SnapshotLayout {
    pub fn num_sites(&self) -> usize {
        self.doc_rows_per_site.len()
    }

    pub fn total_doc_rows(&self) -> usize {
        self.doc_rows_per_site.iter().sum()
    }

    pub fn total_len(&self) -> usize {
        (2 * self.vocab_rows + self.total_doc_rows()) * self.dim
    }

    /// Flat range of the word-input segment.
    fn word_range(&self) -> std::ops::Range<usize> {
        0..self.vocab_rows * self.dim
    }

    /// Flat range of the output segment.
    fn out_range(&self) -> std::ops::Range<usize> {
        let start = (self.vocab_rows + self.total_doc_rows()) * self.dim;
        start..self.total_len()
    }

    /// Flat range of `site`'s document block.
    pub fn doc_range(&self, site: usize) -> std::ops::Range<usize> {
        let before: usize = self.doc_rows_per_site[..site].iter().sum();
        let start = (self.vocab_rows + before) * self.dim;
        start..start + self.doc_rows_per_site[site] * self.dim
    }
}

/// Merges per-site vocabularies and document lists into one global model.
///
/// Document ids are concatenated in site-ordinal order, which is exactly
/// the layout [`aggregate`] uses to route document blocks back to their
/// owners. Initialisation depends only on the merged shapes and the config
/// seed, so every participant can reproduce it.
pub fn server_bootstrap(
    local_vocabs: &[Vocabulary],
    site_doc_ids: &[Vec<String>],
    space_tag: &str,
    config: &TrainingConfig,
) -> Result<(Vocabulary, EmbeddingModel, SnapshotLayout), FederationError> {
    if local_vocabs.is_empty() || local_vocabs.len() != site_doc_ids.len() {
        return Err(FederationError::EmptyFederation);
    }
    let merged = merge_vocabularies(local_vocabs);
    let global_doc_ids: Vec<String> = site_doc_ids.iter().flatten().cloned().collect();
    let model = init_model(&merged, &global_doc_ids, space_tag, config)?;
    let layout = SnapshotLayout {
        dim: config.dim,
        vocab_rows: merged.len(),
        doc_rows_per_site: site_doc_ids.iter().map(Vec::len).collect(),
    };
    Ok((merged, model, layout))
}

/// One site's work in one round: adopt the global snapshot, run the
/// configured local passes, and package the result.
///
/// Epoch indices continue across rounds (`round * batches + b`), so the
/// shuffle, noise draws, and learning-rate schedule line up with a
/// centralized run over the same total number of passes.
pub fn edge_round(
    model: &mut EmbeddingModel,
    corpus: &Corpus,
    global_weights: &[f64],
    round: usize,
    config: &FederationConfig,
    site: &SiteId,
) -> Result<(WeightUpdate, f64), FederationError> {
    model.set_weights(global_weights)?;
    let total = config.total_epochs();
    let mut stats = EpochStats::default();
    for b in 0..config.local_batches_per_round {
        let epoch_index = round * config.local_batches_per_round + b;
        let lr = epoch_lr(config.embedding.learning_rate, epoch_index, total);
        let pass = train_epoch(model, corpus, epoch_index, lr)?;
        stats.loss_sum += pass.loss_sum;
        stats.predictions += pass.predictions;
    }
    let update = WeightUpdate {
        site: site.clone(),
        round,
        num_samples: corpus.len(),
        weights: model.get_weights(),
    };
    Ok((update, stats.mean_loss()))
}

/// Sample-weighted mean of a complete round of updates.
///
/// The shared word and output segments become `sum_i (n_i / n) * w_i`,
/// accumulated in site-ordinal order for byte reproducibility. Each site's
/// document block is copied from that site's own update. Every site must
/// contribute exactly once and all updates must agree on the round.
pub fn aggregate(
    updates: &[WeightUpdate],
    layout: &SnapshotLayout,
) -> Result<Vec<f64>, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::NoUpdates);
    }
    let round = updates[0].round;
    if updates.iter().any(|u| u.round != round) {
        return Err(FederationError::MixedRounds);
    }
    let expected = layout.total_len();
    for u in updates {
        if u.weights.len() != expected {
            return Err(FederationError::ShapeMismatch {
                expected,
                actual: u.weights.len(),
            });
        }
    }

    // Route updates to their ordinal slot, demanding a complete round.
    let num_sites = layout.num_sites();
    let mut by_site: Vec<Option<&WeightUpdate>> = vec![None; num_sites];
    for u in updates {
        let slot = by_site
            .get_mut(u.site.ordinal)
            .ok_or(FederationError::UnknownSite(u.site.ordinal))?;
        if slot.replace(u).is_some() {
            return Err(FederationError::DuplicateSite(u.site.ordinal));
        }
    }
    let ordered: Vec<&WeightUpdate> = by_site
        .into_iter()
        .enumerate()
        .map(|(i, slot)| slot.ok_or(FederationError::MissingSite(i)))
        .collect::<Result<_, _>>()?;

    let total_samples: usize = ordered.iter().map(|u| u.num_samples).sum();
    if total_samples == 0 {
        return Err(FederationError::NoSamples);
    }

    let mut global = vec![0.0; expected];
    for update in &ordered {
        let coef = update.num_samples as f64 / total_samples as f64;
        for range in [layout.word_range(), layout.out_range()] {
            for j in range {
                global[j] += coef * update.weights[j];
            }
        }
    }
    for (site, update) in ordered.iter().enumerate() {
        let range = layout.doc_range(site);
        global[range.clone()].copy_from_slice(&update.weights[range]);
    }
    Ok(global)
}

/// Per-site training cost of one round, for the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetric {
    pub round: usize,
    pub site: String,
    pub loss: f64,
    pub wall_ms: u64,
}

/// Writes metrics as `round,site,loss,wall_ms` CSV.
pub fn write_metrics_csv(metrics: &[RoundMetric], path: &Path) -> Result<(), std::io::Error> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "round,site,loss,wall_ms")?;
    for m in metrics {
        writeln!(out, "{},{},{},{}", m.round, m.site, m.loss, m.wall_ms)?;
    }
    Ok(())
}

/// A finished joint run: the shared model plus per-round diagnostics.
#[derive(Debug)]
pub struct JointOutcome {
    pub model: EmbeddingModel,
    pub metrics: Vec<RoundMetric>,
    pub rounds_run: usize,
}

/// Runs the whole protocol in one thread, sites in ordinal order.
///
/// This is the reference implementation; the message-passing runtime must
/// produce the identical model. Site labels come from each corpus's source
/// tag, and the model's space is `space_tag`.
pub fn run_joint_training(
    site_corpora: &[Corpus],
    config: &FederationConfig,
    space_tag: &str,
) -> Result<JointOutcome, FederationError> {
    config.validate()?;
    if site_corpora.is_empty() {
        return Err(FederationError::EmptyFederation);
    }
    for (i, corpus) in site_corpora.iter().enumerate() {
        if corpus.is_empty() {
            return Err(FederationError::EmptySite(i));
        }
    }

    let local_vocabs: Vec<Vocabulary> = site_corpora
        .iter()
        .map(|c| build_vocabulary(c, config.min_count))
        .collect::<Result<_, _>>()?;
    let site_doc_ids: Vec<Vec<String>> = site_corpora
        .iter()
        .map(|c| match config.embedding.mode {
            TrainMode::PvDm => c.doc_ids(),
            TrainMode::SkipGram => Vec::new(),
        })
        .collect();

    let (_vocab, mut model, layout) =
        server_bootstrap(&local_vocabs, &site_doc_ids, space_tag, &config.embedding)?;
    let site_ids: Vec<SiteId> = site_corpora
        .iter()
        .enumerate()
        .map(|(i, c)| SiteId::new(i, c.source_tag()))
        .collect();
    let mut site_models: Vec<EmbeddingModel> = site_corpora.iter().map(|_| model.clone()).collect();

    let mut global = model.get_weights();
    let mut metrics = Vec::new();
    let mut rounds_run = 0;
    for round in 0..config.rounds {
        let mut updates = Vec::with_capacity(site_corpora.len());
        for (i, corpus) in site_corpora.iter().enumerate() {
            let started = Instant::now();
            let (update, loss) = edge_round(
                &mut site_models[i],
                corpus,
                &global,
                round,
                config,
                &site_ids[i],
            )?;
            metrics.push(RoundMetric {
                round,
                site: site_ids[i].label.clone(),
                loss,
                wall_ms: started.elapsed().as_millis() as u64,
            });
            updates.push(update);
        }
        let next = aggregate(&updates, &layout)?;
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

    model.set_weights(&global)?;
    model.ensure_finite()?;
    Ok(JointOutcome {
        model,
        metrics,
        rounds_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Document, PartitionPolicy, PartitionSpec};
    use crate::embedding::train;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            tokens: tokenize(text),
        }
    }

    fn small_corpus(tag: &str, n: usize) -> Corpus {
        let texts = [
            "cat feline purr whiskers cat feline",
            "engine piston torque exhaust engine piston",
            "violin cello sonata chord violin cello",
        ];
        let docs = (0..n)
            .map(|i| doc(&format!("d{i}"), texts[i % texts.len()]))
            .collect();
        Corpus::from_documents(tag, docs).unwrap()
    }

    fn small_config(rounds: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            local_batches_per_round: 1,
            embedding: TrainingConfig {
                dim: 8,
                epochs: rounds,
                learning_rate: 0.05,
                window: 3,
                negative_samples: 3,
                mode: TrainMode::PvDm,
                seed: 17,
            },
            min_count: 2,
            aggregation: Aggregation::SampleWeightedMean,
            early_stop_delta: None,
        }
    }

    fn update(ordinal: usize, round: usize, num_samples: usize, weights: Vec<f64>) -> WeightUpdate {
        WeightUpdate {
            site: SiteId::new(ordinal, format!("s{ordinal}")),
            round,
            num_samples,
            weights,
        }
    }

    /// Shared-segment layout only (no document rows): plain weighted mean.
    fn flat_layout(vocab_rows: usize, dim: usize, sites: usize) -> SnapshotLayout {
        SnapshotLayout {
            dim,
            vocab_rows,
            doc_rows_per_site: vec![0; sites],
        }
    }

    #[test]
    fn aggregate_matches_hand_computed_mean() {
        // Two sites, one vocab row, dim 1: snapshot = [word, out].
        let layout = flat_layout(1, 1, 2);
        let updates = vec![
            update(0, 0, 1, vec![2.0, 10.0]),
            update(1, 0, 3, vec![4.0, 20.0]),
        ];
        let global = aggregate(&updates, &layout).unwrap();
        // (1/4)*2 + (3/4)*4 = 3.5 and (1/4)*10 + (3/4)*20 = 17.5
        assert_eq!(global, vec![3.5, 17.5]);
    }

    #[test]
    fn aggregate_is_permutation_invariant_bytewise() {
        let layout = SnapshotLayout {
            dim: 2,
            vocab_rows: 2,
            doc_rows_per_site: vec![1, 2, 1],
        };
        let mut rng = crate::rng::rng_from_seed(3);
        use rand::Rng;
        let mk = |ordinal: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let weights = (0..layout.total_len()).map(|_| rng.random::<f64>()).collect();
            update(ordinal, 4, ordinal + 1, weights)
        };
        let a = mk(0, &mut rng);
        let b = mk(1, &mut rng);
        let c = mk(2, &mut rng);

        let forward = aggregate(&[a.clone(), b.clone(), c.clone()], &layout).unwrap();
        let backward = aggregate(&[c, a, b], &layout).unwrap();
        let fw_bytes: Vec<[u8; 8]> = forward.iter().map(|x| x.to_le_bytes()).collect();
        let bw_bytes: Vec<[u8; 8]> = backward.iter().map(|x| x.to_le_bytes()).collect();
        assert_eq!(fw_bytes, bw_bytes);
    }

    #[test]
    fn document_blocks_come_from_their_owner() {
        let layout = SnapshotLayout {
            dim: 1,
            vocab_rows: 1,
            doc_rows_per_site: vec![1, 1],
        };
        // Snapshot: [word, doc0, doc1, out].
        let updates = vec![
            update(0, 0, 1, vec![0.0, 7.0, -99.0, 2.0]),
            update(1, 0, 1, vec![1.0, -99.0, 9.0, 4.0]),
        ];
        let global = aggregate(&updates, &layout).unwrap();
        assert_eq!(global, vec![0.5, 7.0, 9.0, 3.0]);
    }

    #[test]
    fn aggregate_rejects_bad_rounds_shapes_and_rosters() {
        let layout = flat_layout(1, 1, 2);
        let good0 = update(0, 1, 1, vec![1.0, 1.0]);
        let good1 = update(1, 1, 1, vec![2.0, 2.0]);

        assert!(matches!(
            aggregate(&[], &layout),
            Err(FederationError::NoUpdates)
        ));
        assert!(matches!(
            aggregate(&[good0.clone(), update(1, 2, 1, vec![2.0, 2.0])], &layout),
            Err(FederationError::MixedRounds)
        ));
        assert!(matches!(
            aggregate(&[good0.clone(), update(1, 1, 1, vec![2.0])], &layout),
            Err(FederationError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&[good0.clone()], &layout),
            Err(FederationError::MissingSite(1))
        ));
        assert!(matches!(
            aggregate(&[good0.clone(), good0.clone()], &layout),
            Err(FederationError::DuplicateSite(0))
        ));
        assert!(matches!(
            aggregate(&[update(0, 1, 0, vec![1.0, 1.0]), update(1, 1, 0, vec![2.0, 2.0])], &layout),
            Err(FederationError::NoSamples)
        ));
        assert!(aggregate(&[good0, good1], &layout).is_ok());
    }

    #[test]
    fn one_site_federation_equals_centralized_training() {
        let corpus = small_corpus("solo", 12);
        let config = small_config(5);
        let central = train(&corpus, &config.embedding, config.min_count).unwrap();
        let joint = run_joint_training(std::slice::from_ref(&corpus), &config, "solo").unwrap();

        assert_eq!(joint.rounds_run, 5);
        let a = central.get_weights();
        let b = joint.model.get_weights();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y, "weights diverged");
        }
        assert_eq!(central.vocab(), joint.model.vocab());
        assert_eq!(central.doc_ids(), joint.model.doc_ids());
    }

    #[test]
    fn joint_training_is_deterministic_and_loss_falls() {
        let corpus = small_corpus("multi", 24);
        let spec = PartitionSpec {
            num_sites: 3,
            policy: PartitionPolicy::Uniform,
            seed: 5,
        };
        let sites = crate::corpus::partition_corpus(&corpus, &spec).unwrap();
        let config = small_config(12);

        let once = run_joint_training(&sites, &config, "multi").unwrap();
        let twice = run_joint_training(&sites, &config, "multi").unwrap();
        assert_eq!(once.model, twice.model);

        let first: f64 = once.metrics.iter().filter(|m| m.round == 0).map(|m| m.loss).sum();
        let last: f64 = once
            .metrics
            .iter()
            .filter(|m| m.round == config.rounds - 1)
            .map(|m| m.loss)
            .sum();
        assert!(last < first, "round loss did not drop: {first} -> {last}");
    }

    #[test]
    fn early_stop_halts_before_round_limit() {
        let corpus = small_corpus("stop", 9);
        let config = FederationConfig {
            // Absurdly generous threshold: any round qualifies.
            early_stop_delta: Some(f64::INFINITY),
            ..small_config(6)
        };
        let joint = run_joint_training(std::slice::from_ref(&corpus), &config, "stop").unwrap();
        assert_eq!(joint.rounds_run, 1);
    }

    #[test]
    fn bootstrap_concatenates_documents_in_site_order() {
        let a = small_corpus("a", 3);
        let b = small_corpus("b", 2);
        // Rename site-b ids to keep them unique.
        let b_docs: Vec<Document> = b
            .documents()
            .iter()
            .map(|d| Document {
                doc_id: format!("b-{}", d.doc_id),
                tokens: d.tokens.clone(),
            })
            .collect();
        let b = Corpus::from_documents("b", b_docs).unwrap();

        let va = build_vocabulary(&a, 1).unwrap();
        let vb = build_vocabulary(&b, 1).unwrap();
        let cfg = small_config(1).embedding;
        let (merged, model, layout) =
            server_bootstrap(&[va, vb], &[a.doc_ids(), b.doc_ids()], "ab", &cfg).unwrap();

        assert_eq!(merged.len(), model.vocab().len());
        assert_eq!(
            model.doc_ids(),
            ["d0", "d1", "d2", "b-d0", "b-d1"]
                .map(String::from)
                .as_slice()
        );
        assert_eq!(layout.doc_rows_per_site, vec![3, 2]);
        assert_eq!(layout.total_len(), model.weight_count());
        assert_eq!(layout.doc_range(1).len(), 2 * cfg.dim);
    }

    proptest! {
        /// Every aggregated coordinate lies within the envelope of the
        /// site values it averages (convexity), and document blocks equal
        /// their owner's exactly.
        #[test]
        fn aggregate_is_convex(
            dim in 1usize..4,
            vocab_rows in 1usize..5,
            doc_rows in proptest::collection::vec(0usize..3, 1..4),
            samples in proptest::collection::vec(1usize..20, 1..4),
            seed in 0u64..500,
        ) {
            let sites = doc_rows.len().min(samples.len());
            let layout = SnapshotLayout {
                dim,
                vocab_rows,
                doc_rows_per_site: doc_rows[..sites].to_vec(),
            };
            let mut rng = crate::rng::rng_from_seed(seed);
            use rand::Rng;
            let updates: Vec<WeightUpdate> = (0..sites)
                .map(|i| {
                    let weights = (0..layout.total_len())
                        .map(|_| rng.random::<f64>() * 4.0 - 2.0)
                        .collect();
                    update(i, 0, samples[i], weights)
                })
                .collect();
            let global = aggregate(&updates, &layout).unwrap();

            for j in layout.word_range().chain(layout.out_range()) {
                let lo = updates.iter().map(|u| u.weights[j]).fold(f64::INFINITY, f64::min);
                let hi = updates.iter().map(|u| u.weights[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(global[j] >= lo - 1e-12 && global[j] <= hi + 1e-12);
            }
            for (i, u) in updates.iter().enumerate() {
                let range = layout.doc_range(i);
                prop_assert_eq!(&global[range.clone()], &u.weights[range]);
            }
        }
    }
}
