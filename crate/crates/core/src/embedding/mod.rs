//! From-scratch document and token embeddings with negative sampling.
//!
//! Two training modes share one SGD engine:
//!
//! * **Context + document** ([`TrainMode::PvDm`]) — the mean of the
//!   surrounding word vectors and a per-document vector predicts the center
//!   word. Document vectors are the searchable items.
//! * **Skip-gram** ([`TrainMode::SkipGram`]) — a center token predicts each
//!   context token; used on random-walk corpora where tokens are node ids
//!   and the token vectors themselves are the items.
//!
//! Weights are `f64` in memory and training is fully deterministic: the
//! shuffle and noise-word streams are keyed by (config seed, epoch), so the
//! same corpus, config, and seed reproduce a model bit for bit. That exact
//! reproducibility is what lets federated training with one site collapse to
//! ordinary training.

pub mod gradients;
pub mod io;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_vocabulary, Corpus, CorpusError, Document, Vocabulary};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};
use gradients::{dot, ns_gradients, ns_loss, sigmoid, softplus};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("duplicate document id `{0}` in model")]
    DuplicateDocId(String),
    #[error("unknown document or item id `{0}`")]
    UnknownDocId(String),
    #[error("document `{0}` has no tokens in the model vocabulary")]
    AllTokensUnknown(String),
    #[error("weight snapshot has {actual} values, model expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite weights in model for space `{space_tag}`")]
    NonFiniteWeights { space_tag: String },
    #[error("corpus `{tag}` produced no trainable predictions")]
    NothingToTrain { tag: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadModelFile { path: String, reason: String },
}

/// Which prediction structure the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Context words + document vector predict the center word.
    PvDm,
    /// Center token predicts each context token; no document vectors.
    SkipGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub epochs: usize,
    /// Starting learning rate; decays linearly to 1/100 of this value.
    pub learning_rate: f64,
    /// Context radius on each side of the center token.
    pub window: usize,
    /// Noise words sampled per prediction.
    pub negative_samples: usize,
    pub mode: TrainMode,
    pub seed: u64,
}

impl TrainingConfig {
    /// Defaults for document corpora: 50-d vectors, 40 epochs, lr 0.025.
    pub fn text_defaults() -> Self {
        TrainingConfig {
            dim: 50,
            epochs: 40,
            learning_rate: 0.025,
            window: 5,
            negative_samples: 5,
            mode: TrainMode::PvDm,
            seed: 0,
        }
    }

    /// Defaults for walk corpora: 124-d vectors, skip-gram.
    pub fn graph_defaults() -> Self {
        TrainingConfig {
            dim: 124,
            mode: TrainMode::SkipGram,
            ..TrainingConfig::text_defaults()
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(EmbeddingError::InvalidConfig(
                "epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbeddingError::InvalidConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.window == 0 {
            return Err(EmbeddingError::InvalidConfig(
                "window must be at least 1".into(),
            ));
        }
        if self.negative_samples == 0 {
            return Err(EmbeddingError::InvalidConfig(
                "negative_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig::text_defaults()
    }
}

/// A vector tagged with the space it was produced in.
///
/// Vectors from independently trained models are not comparable; the tag is
/// how search and mapping refuse to mix them silently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    pub values: Vec<f64>,
    pub space_tag: String,
}

/// Word-input, document, and output weight matrices plus their row indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    space_tag: String,
    config: TrainingConfig,
    word_in: Vec<f64>,
    doc_in: Vec<f64>,
    out_weights: Vec<f64>,
}

/// Linear learning-rate decay from `base` down to `base / 100` across
/// `total` epochs; epoch 0 trains at `base`.
pub fn epoch_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let floor = base / 100.0;
    let t = epoch.min(total - 1) as f64 / (total - 1) as f64;
    base + (floor - base) * t
}

/// Allocates a model with uniform `[-0.5/dim, 0.5/dim)` input rows and
/// zeroed output rows, drawn from a stream keyed by (seed, "init").
///
/// Row order is the vocabulary's sorted order and the given document order,
/// which makes initialisation identical wherever the same vocabulary and
/// document list are assembled.
pub fn init_model(
    vocab: &Vocabulary,
    doc_ids: &[String],
    space_tag: &str,
    config: &TrainingConfig,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(EmbeddingError::InvalidConfig(
            "vocabulary is empty".into(),
        ));
    }
    let mut doc_index = HashMap::with_capacity(doc_ids.len());
    for (slot, id) in doc_ids.iter().enumerate() {
        if doc_index.insert(id.clone(), slot).is_some() {
            return Err(EmbeddingError::DuplicateDocId(id.clone()));
        }
    }

    let dim = config.dim;
    let mut rng = rng_from_seed(derive_seed(config.seed, "init"));
    let mut draw_rows = |rows: usize| -> Vec<f64> {
        (0..rows * dim)
            .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
            .collect()
    };
    let word_in = draw_rows(vocab.len());
    let doc_in = draw_rows(doc_ids.len());
    let out_weights = vec![0.0; vocab.len() * dim];

    Ok(EmbeddingModel {
        vocab: vocab.clone(),
        doc_ids: doc_ids.to_vec(),
        doc_index,
        space_tag: space_tag.to_owned(),
        config: config.clone(),
        word_in,
        doc_in,
        out_weights,
    })
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn space_tag(&self) -> &str {
        &self.space_tag
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn word_vector(&self, token: &str) -> Option<&[f64]> {
        let row = self.vocab.position(token)?;
        Some(&self.word_in[row * self.dim()..(row + 1) * self.dim()])
    }

    pub fn doc_vector(&self, doc_id: &str) -> Option<&[f64]> {
        let slot = *self.doc_index.get(doc_id)?;
        Some(&self.doc_in[slot * self.dim()..(slot + 1) * self.dim()])
    }

    /// Ids of the searchable items: documents in context+document mode,
    /// vocabulary tokens (graph nodes) in skip-gram mode.
    pub fn item_ids(&self) -> Vec<&str> {
        match self.config.mode {
            TrainMode::PvDm => self.doc_ids.iter().map(String::as_str).collect(),
            TrainMode::SkipGram => self.vocab.entries().iter().map(|(t, _)| t.as_str()).collect(),
        }
    }

    /// Raw weight slice of an item (document vector or token vector,
    /// depending on the mode).
    pub fn item_vector(&self, id: &str) -> Option<&[f64]> {
        match self.config.mode {
            TrainMode::PvDm => self.doc_vector(id),
            TrainMode::SkipGram => self.word_vector(id),
        }
    }

    /// Looks up the trained vector of an item by id.
    pub fn vectorize(&self, id: &str) -> Result<SemanticVector, EmbeddingError> {
        let values = self
            .item_vector(id)
            .ok_or_else(|| EmbeddingError::UnknownDocId(id.to_owned()))?;
        Ok(SemanticVector {
            values: values.to_vec(),
            space_tag: self.space_tag.clone(),
        })
    }

    /// Total weight count of a flat snapshot.
    pub fn weight_count(&self) -> usize {
        self.word_in.len() + self.doc_in.len() + self.out_weights.len()
    }

    /// Flat snapshot in word-input, document, output order.
    pub fn get_weights(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.weight_count());
        flat.extend_from_slice(&self.word_in);
        flat.extend_from_slice(&self.doc_in);
        flat.extend_from_slice(&self.out_weights);
        flat
    }

    /// Restores a snapshot produced by a model of identical shape.
    pub fn set_weights(&mut self, flat: &[f64]) -> Result<(), EmbeddingError> {
        if flat.len() != self.weight_count() {
            return Err(EmbeddingError::ShapeMismatch {
                expected: self.weight_count(),
                actual: flat.len(),
            });
        }
        let (words, rest) = flat.split_at(self.word_in.len());
        let (docs, out) = rest.split_at(self.doc_in.len());
        self.word_in.copy_from_slice(words);
        self.doc_in.copy_from_slice(docs);
        self.out_weights.copy_from_slice(out);
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<(), EmbeddingError> {
        let finite = self.word_in.iter().all(|w| w.is_finite())
            && self.doc_in.iter().all(|w| w.is_finite())
            && self.out_weights.iter().all(|w| w.is_finite());
        if finite {
            Ok(())
        } else {
            Err(EmbeddingError::NonFiniteWeights {
                space_tag: self.space_tag.clone(),
            })
        }
    }

    fn word_row(&self, row: usize) -> &[f64] {
        &self.word_in[row * self.dim()..(row + 1) * self.dim()]
    }

    fn out_row(&self, row: usize) -> &[f64] {
        &self.out_weights[row * self.dim()..(row + 1) * self.dim()]
    }

    fn doc_row(&self, slot: usize) -> &[f64] {
        &self.doc_in[slot * self.dim()..(slot + 1) * self.dim()]
    }
}

/// One prediction described by weight-matrix rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    /// Document matrix row contributing to the input mean, if any.
    pub doc_row: Option<usize>,
    /// Word-input matrix rows contributing to the input mean.
    pub context_rows: Vec<usize>,
    /// Output row of the true target token.
    pub target_row: usize,
    /// Output rows of the sampled noise tokens.
    pub negative_rows: Vec<usize>,
}

impl Prediction {
    fn input_count(&self) -> usize {
        self.context_rows.len() + usize::from(self.doc_row.is_some())
    }
}

/// Mean of the prediction's contributing input rows.
fn combined_input(model: &EmbeddingModel, pred: &Prediction) -> Vec<f64> {
    let dim = model.dim();
    let mut h = vec![0.0; dim];
    if let Some(slot) = pred.doc_row {
        for (hj, &w) in h.iter_mut().zip(model.doc_row(slot)) {
            *hj += w;
        }
    }
    for &row in &pred.context_rows {
        for (hj, &w) in h.iter_mut().zip(model.word_row(row)) {
            *hj += w;
        }
    }
    let n = pred.input_count() as f64;
    for hj in &mut h {
        *hj /= n;
    }
    h
}

/// Loss of one prediction at the model's current weights.
pub fn instance_loss(model: &EmbeddingModel, pred: &Prediction) -> f64 {
    let h = combined_input(model, pred);
    let negatives: Vec<&[f64]> = pred.negative_rows.iter().map(|&r| model.out_row(r)).collect();
    ns_loss(&h, model.out_row(pred.target_row), &negatives)
}

/// Per-row analytic gradients of [`instance_loss`].
///
/// Rows appearing several times in a prediction (a repeated context token,
/// a repeated noise draw) have their contributions summed, matching what a
/// derivative wrt that row's weights means.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGradients {
    pub loss: f64,
    pub d_word_in: BTreeMap<usize, Vec<f64>>,
    pub d_doc_in: BTreeMap<usize, Vec<f64>>,
    pub d_out: BTreeMap<usize, Vec<f64>>,
}

pub fn instance_gradients(model: &EmbeddingModel, pred: &Prediction) -> InstanceGradients {
    let h = combined_input(model, pred);
    let negatives: Vec<&[f64]> = pred.negative_rows.iter().map(|&r| model.out_row(r)).collect();
    let target_out = model.out_row(pred.target_row);
    let loss = ns_loss(&h, target_out, &negatives);
    let grads = ns_gradients(&h, target_out, &negatives);

    let dim = model.dim();
    let share: Vec<f64> = grads
        .d_input
        .iter()
        .map(|g| g / pred.input_count() as f64)
        .collect();

    let mut d_word_in: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &row in &pred.context_rows {
        let acc = d_word_in.entry(row).or_insert_with(|| vec![0.0; dim]);
        for (a, &s) in acc.iter_mut().zip(&share) {
            *a += s;
        }
    }
    let mut d_doc_in: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    if let Some(slot) = pred.doc_row {
        d_doc_in.insert(slot, share.clone());
    }
    let mut d_out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    d_out.insert(pred.target_row, grads.d_target.clone());
    for (&row, d_neg) in pred.negative_rows.iter().zip(&grads.d_negatives) {
        let acc = d_out.entry(row).or_insert_with(|| vec![0.0; dim]);
        for (a, &g) in acc.iter_mut().zip(d_neg) {
            *a += g;
        }
    }

    InstanceGradients {
        loss,
        d_word_in,
        d_doc_in,
        d_out,
    }
}

/// Applies `w -= lr * g` for every row gradient.
pub fn apply_instance_gradients(model: &mut EmbeddingModel, grads: &InstanceGradients, lr: f64) {
    let dim = model.dim();
    for (&row, g) in &grads.d_word_in {
        for (w, &gj) in model.word_in[row * dim..(row + 1) * dim].iter_mut().zip(g) {
            *w -= lr * gj;
        }
    }
    for (&slot, g) in &grads.d_doc_in {
        for (w, &gj) in model.doc_in[slot * dim..(slot + 1) * dim].iter_mut().zip(g) {
            *w -= lr * gj;
        }
    }
    for (&row, g) in &grads.d_out {
        for (w, &gj) in model.out_weights[row * dim..(row + 1) * dim].iter_mut().zip(g) {
            *w -= lr * gj;
        }
    }
}

/// Reusable buffers for the in-place SGD step.
struct Scratch {
    h: Vec<f64>,
    d_input: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            h: vec![0.0; dim],
            d_input: vec![0.0; dim],
        }
    }
}

/// In-place SGD on one prediction; returns its loss at the pre-step weights.
fn sgd_step(
    word_in: &mut [f64],
    doc_in: &mut [f64],
    out_weights: &mut [f64],
    dim: usize,
    pred: &Prediction,
    lr: f64,
    scratch: &mut Scratch,
) -> f64 {
    let n = pred.input_count() as f64;
    scratch.h.iter_mut().for_each(|x| *x = 0.0);
    if let Some(slot) = pred.doc_row {
        let row = &doc_in[slot * dim..(slot + 1) * dim];
        for (hj, &w) in scratch.h.iter_mut().zip(row) {
            *hj += w;
        }
    }
    for &r in &pred.context_rows {
        let row = &word_in[r * dim..(r + 1) * dim];
        for (hj, &w) in scratch.h.iter_mut().zip(row) {
            *hj += w;
        }
    }
    scratch.h.iter_mut().for_each(|x| *x /= n);
    scratch.d_input.iter_mut().for_each(|x| *x = 0.0);

    let mut loss = 0.0;
    let mut score_row = |row: usize, label: f64, scratch: &mut Scratch| {
        let o = &mut out_weights[row * dim..(row + 1) * dim];
        let x = dot(&scratch.h, o);
        loss += if label == 1.0 { softplus(-x) } else { softplus(x) };
        let g = sigmoid(x) - label;
        let coef = lr * g;
        for ((dj, oj), &hj) in scratch.d_input.iter_mut().zip(o).zip(&scratch.h) {
            *dj += g * *oj;
            *oj -= coef * hj;
        }
    };
    score_row(pred.target_row, 1.0, scratch);
    for &r in &pred.negative_rows {
        score_row(r, 0.0, scratch);
    }
    drop(score_row);

    let step = lr / n;
    if let Some(slot) = pred.doc_row {
        let row = &mut doc_in[slot * dim..(slot + 1) * dim];
        for (w, &dj) in row.iter_mut().zip(&scratch.d_input) {
            *w -= step * dj;
        }
    }
    for &r in &pred.context_rows {
        let row = &mut word_in[r * dim..(r + 1) * dim];
        for (w, &dj) in row.iter_mut().zip(&scratch.d_input) {
            *w -= step * dj;
        }
    }
    loss
}

/// (target row, context word rows) pairs for one token sequence.
///
/// Out-of-vocabulary tokens are skipped in place: they can be neither
/// targets nor context, but they do not shift the window.
fn positional_predictions(
    vocab: &Vocabulary,
    tokens: &[String],
    window: usize,
    mode: TrainMode,
) -> Vec<(usize, Vec<usize>)> {
    let rows: Vec<Option<usize>> = tokens.iter().map(|t| vocab.position(t)).collect();
    let mut preds = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let Some(center) = *row else { continue };
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(rows.len().saturating_sub(1));
        match mode {
            TrainMode::PvDm => {
                let context: Vec<usize> = (lo..=hi)
                    .filter(|&j| j != i)
                    .filter_map(|j| rows[j])
                    .collect();
                preds.push((center, context));
            }
            TrainMode::SkipGram => {
                for j in (lo..=hi).filter(|&j| j != i) {
                    if let Some(ctx) = rows[j] {
                        // Center token is the input; the context token is
                        // what it must predict.
                        preds.push((ctx, vec![center]));
                    }
                }
            }
        }
    }
    preds
}

/// Cumulative-weight table for drawing noise words proportional to
/// `count^0.75` over the model vocabulary.
pub struct NoiseTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NoiseTable {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0;
        for (_, count) in vocab.entries() {
            total += (*count as f64).powf(0.75);
            cumulative.push(total);
        }
        NoiseTable { cumulative, total }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    /// Draws a noise row, redrawing a bounded number of times when it
    /// collides with `exclude` (relevant only for tiny vocabularies).
    pub fn sample_excluding<R: Rng>(&self, rng: &mut R, exclude: usize) -> usize {
        let mut row = self.sample(rng);
        for _ in 0..16 {
            if row != exclude {
                break;
            }
            row = self.sample(rng);
        }
        row
    }
}

/// Loss bookkeeping for one pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub loss_sum: f64,
    pub predictions: usize,
}

impl EpochStats {
    pub fn mean_loss(&self) -> f64 {
        if self.predictions == 0 {
            0.0
        } else {
            self.loss_sum / self.predictions as f64
        }
    }

    fn absorb(&mut self, other: EpochStats) {
        self.loss_sum += other.loss_sum;
        self.predictions += other.predictions;
    }
}

fn train_documents<'a, R: Rng>(
    model: &mut EmbeddingModel,
    docs: impl Iterator<Item = &'a Document>,
    lr: f64,
    noise: &NoiseTable,
    ns_rng: &mut R,
) -> Result<EpochStats, EmbeddingError> {
    let dim = model.dim();
    let mode = model.config.mode;
    let window = model.config.window;
    let num_negative = model.config.negative_samples;
    let mut scratch = Scratch::new(dim);
    let mut stats = EpochStats::default();

    for doc in docs {
        let doc_row = match mode {
            TrainMode::PvDm => Some(
                *model
                    .doc_index
                    .get(&doc.doc_id)
                    .ok_or_else(|| EmbeddingError::UnknownDocId(doc.doc_id.clone()))?,
            ),
            TrainMode::SkipGram => None,
        };
        for (target_row, context_rows) in
            positional_predictions(&model.vocab, &doc.tokens, window, mode)
        {
            let negative_rows: Vec<usize> = (0..num_negative)
                .map(|_| noise.sample_excluding(ns_rng, target_row))
                .collect();
            let pred = Prediction {
                doc_row,
                context_rows,
                target_row,
                negative_rows,
            };
            stats.loss_sum += sgd_step(
                &mut model.word_in,
                &mut model.doc_in,
                &mut model.out_weights,
                dim,
                &pred,
                lr,
                &mut scratch,
            );
            stats.predictions += 1;
        }
    }
    Ok(stats)
}

/// Trains on the given documents in order, at a fixed learning rate.
///
/// Noise words come from a stream keyed by (config seed, `draw_stream`);
/// pass the global epoch index so separately invoked passes stay
/// reproducible. An empty batch leaves the model untouched.
pub fn train_batch(
    model: &mut EmbeddingModel,
    batch: &[Document],
    lr: f64,
    draw_stream: u64,
) -> Result<EpochStats, EmbeddingError> {
    let seed = derive_seed_indexed(model.config.seed, "negatives", draw_stream);
    let mut ns_rng = rng_from_seed(seed);
    let noise = NoiseTable::from_vocab(&model.vocab);
    let stats = train_documents(model, batch.iter(), lr, &noise, &mut ns_rng)?;
    model.ensure_finite()?;
    Ok(stats)
}

/// One full pass over the corpus in a seeded shuffled order.
///
/// `epoch_index` keys both the shuffle and the noise stream, so epoch `e`
/// of a centralized run and epoch `e` reached through federated rounds
/// perform identical arithmetic.
pub fn train_epoch(
    model: &mut EmbeddingModel,
    corpus: &Corpus,
    epoch_index: usize,
    lr: f64,
) -> Result<EpochStats, EmbeddingError> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let shuffle_seed = derive_seed_indexed(model.config.seed, "shuffle", epoch_index as u64);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng_from_seed(shuffle_seed));

    let ns_seed = derive_seed_indexed(model.config.seed, "negatives", epoch_index as u64);
    let mut ns_rng = rng_from_seed(ns_seed);
    let noise = NoiseTable::from_vocab(&model.vocab);

    let docs = order.iter().map(|&i| &corpus.documents()[i]);
    let stats = train_documents(model, docs, lr, &noise, &mut ns_rng)?;
    model.ensure_finite()?;
    Ok(stats)
}

/// Builds the vocabulary (tokens seen at least `min_count` times),
/// initialises a model tagged with the corpus source, and trains it for the
/// configured number of epochs with linear learning-rate decay.
pub fn train(
    corpus: &Corpus,
    config: &TrainingConfig,
    min_count: u64,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    let vocab = build_vocabulary(corpus, min_count)?;
    let doc_ids = match config.mode {
        TrainMode::PvDm => corpus.doc_ids(),
        TrainMode::SkipGram => Vec::new(),
    };
    let mut model = init_model(&vocab, &doc_ids, corpus.source_tag(), config)?;

    let mut total = EpochStats::default();
    for epoch in 0..config.epochs {
        let lr = epoch_lr(config.learning_rate, epoch, config.epochs);
        total.absorb(train_epoch(&mut model, corpus, epoch, lr)?);
    }
    if total.predictions == 0 {
        return Err(EmbeddingError::NothingToTrain {
            tag: corpus.source_tag().to_owned(),
        });
    }
    Ok(model)
}

/// Infers a vector for an unseen document against frozen model weights.
///
/// A fresh document vector is fitted for `steps` passes with the same
/// objective and schedule as training (`steps` = the model's epoch count
/// recovers the training schedule; 0 returns the seeded initialization),
/// but word and output rows never move. Deterministic: the stream is keyed
/// by (model seed, document id). In skip-gram mode there is no document
/// matrix, so the mean of the known token vectors is returned.
pub fn infer_vector(
    model: &EmbeddingModel,
    doc: &Document,
    steps: usize,
) -> Result<SemanticVector, EmbeddingError> {
    let dim = model.dim();
    let known: Vec<usize> = doc
        .tokens
        .iter()
        .filter_map(|t| model.vocab.position(t))
        .collect();
    if known.is_empty() {
        return Err(EmbeddingError::AllTokensUnknown(doc.doc_id.clone()));
    }

    if model.config.mode == TrainMode::SkipGram {
        let mut values = vec![0.0; dim];
        for &row in &known {
            for (v, &w) in values.iter_mut().zip(model.word_row(row)) {
                *v += w;
            }
        }
        values.iter_mut().for_each(|v| *v /= known.len() as f64);
        return Ok(SemanticVector {
            values,
            space_tag: model.space_tag.clone(),
        });
    }

    let seed = derive_seed(model.config.seed, &format!("infer/{}", doc.doc_id));
    let mut rng = rng_from_seed(seed);
    let mut vector: Vec<f64> = (0..dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect();

    let preds = positional_predictions(&model.vocab, &doc.tokens, model.config.window, TrainMode::PvDm);
    let noise = NoiseTable::from_vocab(&model.vocab);
    let mut h = vec![0.0; dim];

    for step in 0..steps {
        let lr = epoch_lr(model.config.learning_rate, step, steps);
        for (target_row, context_rows) in &preds {
            let n = (context_rows.len() + 1) as f64;
            for (hj, &v) in h.iter_mut().zip(&vector) {
                *hj = v;
            }
            for &r in context_rows {
                for (hj, &w) in h.iter_mut().zip(model.word_row(r)) {
                    *hj += w;
                }
            }
            h.iter_mut().for_each(|x| *x /= n);

            let update = |row: usize, label: f64, vector: &mut [f64]| {
                let o = model.out_row(row);
                let g = sigmoid(dot(&h, o)) - label;
                let coef = lr * g / n;
                for (v, &oj) in vector.iter_mut().zip(o) {
                    *v -= coef * oj;
                }
            };
            update(*target_row, 1.0, &mut vector);
            for _ in 0..model.config.negative_samples {
                let neg = noise.sample_excluding(&mut rng, *target_row);
                update(neg, 0.0, &mut vector);
            }
        }
    }
    if !vector.iter().all(|v| v.is_finite()) {
        return Err(EmbeddingError::NonFiniteWeights {
            space_tag: model.space_tag.clone(),
        });
    }
    Ok(SemanticVector {
        values: vector,
        space_tag: model.space_tag.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            tokens: tokenize(text),
        }
    }

    fn tiny_config(dim: usize, seed: u64) -> TrainingConfig {
        TrainingConfig {
            dim,
            epochs: 30,
            learning_rate: 0.05,
            window: 3,
            negative_samples: 3,
            mode: TrainMode::PvDm,
            seed,
        }
    }

    /// Ten documents over two disjoint topic vocabularies.
    fn two_topic_corpus() -> Corpus {
        let mut docs = Vec::new();
        for i in 0..5 {
            docs.push(doc(
                &format!("pet{i}"),
                "cat feline whiskers purr cat feline kitten paw cat whiskers purr feline",
            ));
            docs.push(doc(
                &format!("car{i}"),
                "engine piston gearbox torque engine piston exhaust wheel engine gearbox torque piston",
            ));
        }
        Corpus::from_documents("pets-vs-cars", docs).unwrap()
    }

    fn cosine(u: &[f64], v: &[f64]) -> f64 {
        let (mut uu, mut vv, mut uv) = (0.0, 0.0, 0.0);
        for (a, b) in u.iter().zip(v) {
            uu += a * a;
            vv += b * b;
            uv += a * b;
        }
        uv / (uu.sqrt() * vv.sqrt())
    }

    #[test]
    fn lr_decays_linearly_to_one_percent() {
        assert_eq!(epoch_lr(0.025, 0, 40), 0.025);
        let last = epoch_lr(0.025, 39, 40);
        assert!((last - 0.00025).abs() < 1e-12);
        let mid = epoch_lr(1.0, 1, 3);
        assert!((mid - (1.0 + (0.01 - 1.0) * 0.5)).abs() < 1e-12);
        assert_eq!(epoch_lr(0.025, 0, 1), 0.025);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let vocab = build_vocabulary(&two_topic_corpus(), 2).unwrap();
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let cfg = tiny_config(8, 7);
        let m1 = init_model(&vocab, &ids, "t", &cfg).unwrap();
        let m2 = init_model(&vocab, &ids, "t", &cfg).unwrap();
        assert_eq!(m1, m2);
        let bound = 0.5 / 8.0;
        assert!(m1.word_in.iter().all(|w| w.abs() <= bound));
        assert!(m1.out_weights.iter().all(|&w| w == 0.0));
    }

    /// Full-model finite differences: perturb individual weights through
    /// set_weights and compare the loss slope against analytic gradients.
    #[test]
    fn instance_gradients_match_finite_differences() {
        let corpus = two_topic_corpus();
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let ids: Vec<String> = vec!["d0".into(), "d1".into(), "d2".into()];
        let cfg = tiny_config(5, 3);
        let mut model = init_model(&vocab, &ids, "fd", &cfg).unwrap();
        // Give the zero-initialised output rows some structure.
        let mut rng = rng_from_seed(99);
        let snapshot: Vec<f64> = model
            .get_weights()
            .iter()
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        model.set_weights(&snapshot).unwrap();

        let pred = Prediction {
            doc_row: Some(1),
            context_rows: vec![0, 2, 2], // repeated row on purpose
            target_row: 3,
            negative_rows: vec![1, 5],
        };
        let grads = instance_gradients(&model, &pred);
        let dim = model.dim();
        let v = model.vocab().len();
        let d = model.doc_ids().len();
        let eps = 1e-5;

        let flat_index = |matrix: usize, row: usize, j: usize| match matrix {
            0 => row * dim + j,
            1 => (v + row) * dim + j,
            _ => (v + d + row) * dim + j,
        };
        let check = |matrix: usize, row: usize, g: &[f64]| {
            for (j, &analytic) in g.iter().enumerate() {
                let idx = flat_index(matrix, row, j);
                let mut hi = snapshot.clone();
                let mut lo = snapshot.clone();
                hi[idx] += eps;
                lo[idx] -= eps;
                let mut m = model.clone();
                m.set_weights(&hi).unwrap();
                let f_hi = instance_loss(&m, &pred);
                m.set_weights(&lo).unwrap();
                let f_lo = instance_loss(&m, &pred);
                let numeric = (f_hi - f_lo) / (2.0 * eps);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-4,
                    "matrix {matrix} row {row} dim {j}: {analytic} vs {numeric}"
                );
            }
        };
        for (&row, g) in &grads.d_word_in {
            check(0, row, g);
        }
        for (&row, g) in &grads.d_doc_in {
            check(1, row, g);
        }
        for (&row, g) in &grads.d_out {
            check(2, row, g);
        }
    }

    /// The in-place SGD step and the functional gradients must agree.
    #[test]
    fn sgd_step_matches_functional_gradients() {
        let corpus = two_topic_corpus();
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let ids: Vec<String> = vec!["d0".into(), "d1".into()];
        let cfg = tiny_config(6, 11);
        let mut base = init_model(&vocab, &ids, "cmp", &cfg).unwrap();
        let mut rng = rng_from_seed(4);
        let snapshot: Vec<f64> = base
            .get_weights()
            .iter()
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        base.set_weights(&snapshot).unwrap();

        // Distinct negative rows: gradients at the original weights are then
        // exactly what the sequential in-place update applies.
        let pred = Prediction {
            doc_row: Some(0),
            context_rows: vec![1, 4, 1],
            target_row: 2,
            negative_rows: vec![0, 6, 9],
        };
        let lr = 0.1;

        let mut inplace = base.clone();
        let mut scratch = Scratch::new(inplace.dim());
        let loss = sgd_step(
            &mut inplace.word_in,
            &mut inplace.doc_in,
            &mut inplace.out_weights,
            6,
            &pred,
            lr,
            &mut scratch,
        );

        let mut functional = base.clone();
        let grads = instance_gradients(&functional, &pred);
        apply_instance_gradients(&mut functional, &grads, lr);

        assert!((loss - grads.loss).abs() < 1e-12);
        for (a, b) in inplace.get_weights().iter().zip(functional.get_weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = two_topic_corpus();
        let cfg = tiny_config(12, 21);
        let m1 = train(&corpus, &cfg, 2).unwrap();
        let m2 = train(&corpus, &cfg, 2).unwrap();
        assert_eq!(m1, m2);

        let other_seed = train(&corpus, &TrainingConfig { seed: 22, ..cfg }, 2).unwrap();
        assert_ne!(m1, other_seed);
    }

    #[test]
    fn loss_decreases_over_training() {
        let corpus = two_topic_corpus();
        let cfg = tiny_config(12, 5);
        let vocab = build_vocabulary(&corpus, 2).unwrap();
        let mut model = init_model(&vocab, &corpus.doc_ids(), "loss", &cfg).unwrap();
        let first = train_epoch(&mut model, &corpus, 0, 0.05).unwrap().mean_loss();
        for e in 1..30 {
            train_epoch(&mut model, &corpus, e, epoch_lr(0.05, e, 30)).unwrap();
        }
        let last = train_epoch(&mut model, &corpus, 30, 0.0005).unwrap().mean_loss();
        assert!(
            last < first * 0.8,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn related_words_and_docs_cluster() {
        let corpus = two_topic_corpus();
        let model = train(&corpus, &tiny_config(12, 9), 2).unwrap();

        let cat = model.word_vector("cat").unwrap();
        let feline = model.word_vector("feline").unwrap();
        let engine = model.word_vector("engine").unwrap();
        assert!(cosine(cat, feline) > cosine(cat, engine));

        let pet0 = model.doc_vector("pet0").unwrap();
        let pet1 = model.doc_vector("pet1").unwrap();
        let car0 = model.doc_vector("car0").unwrap();
        assert!(cosine(pet0, pet1) > cosine(pet0, car0));
    }

    #[test]
    fn inferred_vector_lands_near_its_topic() {
        let corpus = two_topic_corpus();
        let model = train(&corpus, &tiny_config(12, 13), 2).unwrap();
        let probe = doc("probe", "cat purr whiskers feline kitten cat purr feline");
        let steps = model.config().epochs;
        let inferred = infer_vector(&model, &probe, steps).unwrap();
        let again = infer_vector(&model, &probe, steps).unwrap();
        assert_eq!(inferred, again);

        // Zero steps hands back the seeded initialization untouched, and
        // more steps move the vector away from it.
        let raw = infer_vector(&model, &probe, 0).unwrap();
        assert!(raw.values.iter().all(|v| v.abs() <= 0.5 / 12.0));
        assert_ne!(raw, inferred);

        let pet = model.doc_vector("pet2").unwrap();
        let car = model.doc_vector("car2").unwrap();
        assert!(cosine(&inferred.values, pet) > cosine(&inferred.values, car));
    }

    #[test]
    fn infer_rejects_fully_unknown_documents() {
        let corpus = two_topic_corpus();
        let model = train(&corpus, &tiny_config(8, 2), 2).unwrap();
        let err = infer_vector(&model, &doc("odd", "zzz qqq"), 3).unwrap_err();
        assert!(matches!(err, EmbeddingError::AllTokensUnknown(id) if id == "odd"));
    }

    #[test]
    fn skipgram_mode_has_no_doc_rows_and_items_are_tokens() {
        let corpus = two_topic_corpus();
        let cfg = TrainingConfig {
            mode: TrainMode::SkipGram,
            ..tiny_config(8, 3)
        };
        let model = train(&corpus, &cfg, 2).unwrap();
        assert!(model.doc_ids().is_empty());
        assert!(model.item_ids().contains(&"cat"));
        let v = model.vectorize("cat").unwrap();
        assert_eq!(v.values, model.word_vector("cat").unwrap());
        assert!(model.vectorize("pet0").is_err());
    }

    #[test]
    fn snapshot_round_trips_and_checks_shape() {
        let corpus = two_topic_corpus();
        let model = train(&corpus, &tiny_config(8, 17), 2).unwrap();
        let snapshot = model.get_weights();
        assert_eq!(snapshot.len(), model.weight_count());
        let mut copy = model.clone();
        copy.set_weights(&snapshot).unwrap();
        assert_eq!(copy, model);
        let err = copy.set_weights(&snapshot[1..]).unwrap_err();
        assert!(matches!(err, EmbeddingError::ShapeMismatch { .. }));
    }

    #[test]
    fn non_finite_weights_are_reported() {
        let corpus = two_topic_corpus();
        let mut model = train(&corpus, &tiny_config(8, 17), 2).unwrap();
        let mut snapshot = model.get_weights();
        snapshot[3] = f64::NAN;
        model.set_weights(&snapshot).unwrap();
        assert!(matches!(
            model.ensure_finite(),
            Err(EmbeddingError::NonFiniteWeights { .. })
        ));
    }

    #[test]
    fn noise_table_tracks_smoothed_frequencies() {
        let vocab = Vocabulary::from_counts(
            [("a".to_owned(), 1u64), ("b".to_owned(), 16u64)]
                .into_iter()
                .collect(),
        );
        let table = NoiseTable::from_vocab(&vocab);
        let mut rng = rng_from_seed(8);
        let n = 100_000;
        let hits_b = (0..n).filter(|_| table.sample(&mut rng) == 1).count();
        // Expected share: 16^0.75 / (1 + 16^0.75) = 8/9.
        let share = hits_b as f64 / n as f64;
        assert!((share - 8.0 / 9.0).abs() < 0.01, "share {share}");
    }
}
