//! Learned translation between independent vector spaces.
//!
//! Two sites that trained embedding models separately end up with
//! incompatible spaces: cosine between a vector from one and a vector from
//! the other is meaningless. This module fits a small MLP (one ReLU hidden
//! layer with inverted dropout, Adam, cosine embedding loss `1 - cos`) that
//! carries vectors from a source space into a target space.
//!
//! Training pairs come from a shared public corpus: each public document is
//! inferred in both models, giving an (input, label) vector pair without
//! either site revealing its private documents. Pairs are inferred once and
//! cached for all epochs.

pub mod adam;
pub mod io;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedding::{infer_vector, EmbeddingError, EmbeddingModel, SemanticVector};
use crate::rng::{derive_seed, rng_from_seed};
use adam::{adam_step, AdamParams, AdamState};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("vector from space `{found}`, mapper expects `{expected}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("vector has {found} dims, mapper expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine undefined for a zero-norm vector")]
    DegenerateVector,
    #[error("public corpus yielded no usable training pairs")]
    EmptyPublicCorpus,
    #[error("invalid mapper config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadMapperFile { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub hidden_units: usize,
    /// Fraction of hidden units dropped during training (inverted dropout).
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            hidden_units: 1200,
            dropout: 0.2,
            learning_rate: 1e-5,
            epochs: 20,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<(), MapperError> {
        if self.hidden_units == 0 {
            return Err(MapperError::InvalidConfig(
                "hidden_units must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MapperError::InvalidConfig(
                "dropout must be in [0, 1)".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MapperError::InvalidConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(MapperError::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn adam_params(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// A trained source-to-target space translator.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperModel {
    src_space: String,
    dst_space: String,
    d_src: usize,
    hidden: usize,
    d_dst: usize,
    /// hidden x d_src, row-major by hidden unit.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// d_dst x hidden, row-major by output unit.
    w2: Vec<f64>,
    b2: Vec<f64>,
    config: MapperConfig,
}

impl MapperModel {
    pub fn src_space(&self) -> &str {
        &self.src_space
    }

    pub fn dst_space(&self) -> &str {
        &self.dst_space
    }

    pub fn input_dim(&self) -> usize {
        self.d_src
    }

    pub fn output_dim(&self) -> usize {
        self.d_dst
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    /// Flat parameter snapshot: w1, b1, w2, b2 concatenated.
    pub fn get_weights(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(
            self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len(),
        );
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.w2);
        flat.extend_from_slice(&self.b2);
        flat
    }

    /// Restores a [`get_weights`](Self::get_weights) snapshot.
    pub fn set_weights(&mut self, flat: &[f64]) -> Result<(), MapperError> {
        let expected = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if flat.len() != expected {
            return Err(MapperError::DimensionMismatch {
                expected,
                found: flat.len(),
            });
        }
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        Ok(())
    }
}

/// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases,
/// drawn from a stream keyed by (seed, "mapper-init").
pub fn init_mapper(
    d_src: usize,
    d_dst: usize,
    src_space: &str,
    dst_space: &str,
    config: &MapperConfig,
) -> Result<MapperModel, MapperError> {
    config.validate()?;
    if d_src == 0 || d_dst == 0 {
        return Err(MapperError::InvalidConfig(
            "vector dimensions must be positive".into(),
        ));
    }
    let hidden = config.hidden_units;
    let mut rng = rng_from_seed(derive_seed(config.seed, "mapper-init"));
    let mut glorot = |rows: usize, cols: usize| -> Vec<f64> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        (0..rows * cols)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect()
    };
    Ok(MapperModel {
        src_space: src_space.to_owned(),
        dst_space: dst_space.to_owned(),
        d_src,
        hidden,
        d_dst,
        w1: glorot(hidden, d_src),
        b1: vec![0.0; hidden],
        w2: glorot(d_dst, hidden),
        b2: vec![0.0; d_dst],
        config: config.clone(),
    })
}

/// `1 - cos(prediction, target)`; zero for perfectly aligned directions.
pub fn cosine_embedding_loss(prediction: &[f64], target: &[f64]) -> Result<f64, MapperError> {
    if prediction.len() != target.len() {
        return Err(MapperError::DimensionMismatch {
            expected: target.len(),
            found: prediction.len(),
        });
    }
    let np = prediction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    if np == 0.0 || nt == 0.0 {
        return Err(MapperError::DegenerateVector);
    }
    let dot: f64 = prediction.iter().zip(target).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (np * nt))
}

struct ForwardCache {
    z1: Vec<f64>,
    /// Post-ReLU, post-dropout hidden activations.
    h: Vec<f64>,
    y: Vec<f64>,
}

/// `scale` holds per-unit dropout factors (0 or 1/(1-p)); `None` means eval.
fn forward_cache(model: &MapperModel, x: &[f64], scale: Option<&[f64]>) -> ForwardCache {
    let (hid, d_src, d_dst) = (model.hidden, model.d_src, model.d_dst);
    let mut z1 = vec![0.0; hid];
    for i in 0..hid {
        let row = &model.w1[i * d_src..(i + 1) * d_src];
        z1[i] = model.b1[i] + row.iter().zip(x).map(|(w, xv)| w * xv).sum::<f64>();
    }
    let mut h: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    if let Some(scale) = scale {
        for (hi, &s) in h.iter_mut().zip(scale) {
            *hi *= s;
        }
    }
    let mut y = vec![0.0; d_dst];
    for k in 0..d_dst {
        let row = &model.w2[k * hid..(k + 1) * hid];
        y[k] = model.b2[k] + row.iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>();
    }
    ForwardCache { z1, h, y }
}

/// Runs the MLP on a vector, checking its space and width.
///
/// In training mode dropout is applied, which needs the caller's RNG; in
/// eval mode (inverted dropout) activations pass through unscaled.
pub fn mlp_forward(
    model: &MapperModel,
    vector: &SemanticVector,
    training: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<SemanticVector, MapperError> {
    if vector.space_tag != model.src_space {
        return Err(MapperError::SpaceMismatch {
            expected: model.src_space.clone(),
            found: vector.space_tag.clone(),
        });
    }
    if vector.values.len() != model.d_src {
        return Err(MapperError::DimensionMismatch {
            expected: model.d_src,
            found: vector.values.len(),
        });
    }
    let scale = if training && model.config.dropout > 0.0 {
        let rng = rng.ok_or_else(|| {
            MapperError::InvalidConfig("training-mode forward needs an RNG for dropout".into())
        })?;
        Some(draw_dropout_scales(model.hidden, model.config.dropout, rng))
    } else {
        None
    };
    let cache = forward_cache(model, &vector.values, scale.as_deref());
    Ok(SemanticVector {
        values: cache.y,
        space_tag: model.dst_space.clone(),
    })
}

/// Translates a source-space vector into the target space (eval mode).
pub fn map_vector(
    model: &MapperModel,
    vector: &SemanticVector,
) -> Result<SemanticVector, MapperError> {
    mlp_forward(model, vector, false, None)
}

fn draw_dropout_scales(hidden: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - dropout);
    (0..hidden)
        .map(|_| {
            if rng.random::<f64>() < dropout {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

/// Gradients of the batch-mean cosine embedding loss wrt every tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperGradients {
    pub loss: f64,
    pub d_w1: Vec<f64>,
    pub d_b1: Vec<f64>,
    pub d_w2: Vec<f64>,
    pub d_b2: Vec<f64>,
}

impl MapperGradients {
    fn zeros(model: &MapperModel) -> Self {
        MapperGradients {
            loss: 0.0,
            d_w1: vec![0.0; model.w1.len()],
            d_b1: vec![0.0; model.b1.len()],
            d_w2: vec![0.0; model.w2.len()],
            d_b2: vec![0.0; model.b2.len()],
        }
    }

    fn scale(&mut self, factor: f64) {
        self.loss *= factor;
        for g in self
            .d_w1
            .iter_mut()
            .chain(&mut self.d_b1)
            .chain(&mut self.d_w2)
            .chain(&mut self.d_b2)
        {
            *g *= factor;
        }
    }
}

/// Backprop for one sample; accumulates into `acc` and returns the loss.
fn backward_sample(
    model: &MapperModel,
    x: &[f64],
    target: &[f64],
    scale: Option<&[f64]>,
    acc: &mut MapperGradients,
) -> Result<f64, MapperError> {
    let cache = forward_cache(model, x, scale);
    let p = &cache.y;
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nt == 0.0 {
        return Err(MapperError::DegenerateVector);
    }
    let dot: f64 = p.iter().zip(target).map(|(a, b)| a * b).sum();
    let cos = dot / (np * nt);
    let loss = 1.0 - cos;

    // dL/dp = cos * p / |p|^2 - t / (|p| |t|)
    let d_y: Vec<f64> = p
        .iter()
        .zip(target)
        .map(|(&pk, &tk)| cos * pk / (np * np) - tk / (np * nt))
        .collect();

    let (hid, d_src) = (model.hidden, model.d_src);
    let mut d_h = vec![0.0; hid];
    for (k, &dyk) in d_y.iter().enumerate() {
        let row = &model.w2[k * hid..(k + 1) * hid];
        for i in 0..hid {
            acc.d_w2[k * hid + i] += dyk * cache.h[i];
            d_h[i] += dyk * row[i];
        }
        acc.d_b2[k] += dyk;
    }
    if let Some(scale) = scale {
        for (dh, &s) in d_h.iter_mut().zip(scale) {
            *dh *= s;
        }
    }
    for i in 0..hid {
        if cache.z1[i] <= 0.0 {
            continue; // ReLU gate closed
        }
        let d_z1 = d_h[i];
        for (j, &xj) in x.iter().enumerate() {
            acc.d_w1[i * d_src + j] += d_z1 * xj;
        }
        acc.d_b1[i] += d_z1;
    }
    acc.loss += loss;
    Ok(loss)
}

/// Mean loss over (input, target) pairs in eval mode (no dropout).
pub fn mapper_batch_loss(
    model: &MapperModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64, MapperError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(MapperError::InvalidConfig(
            "batch inputs and targets must be non-empty and equal length".into(),
        ));
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let cache = forward_cache(model, x, None);
        total += cosine_embedding_loss(&cache.y, t)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Analytic gradients of [`mapper_batch_loss`] (eval mode, batch mean).
pub fn mapper_batch_gradients(
    model: &MapperModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<MapperGradients, MapperError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(MapperError::InvalidConfig(
            "batch inputs and targets must be non-empty and equal length".into(),
        ));
    }
    let mut acc = MapperGradients::zeros(model);
    for (x, t) in inputs.iter().zip(targets) {
        backward_sample(model, x, t, None, &mut acc)?;
    }
    acc.scale(1.0 / inputs.len() as f64);
    Ok(acc)
}

/// Diagnostics from a mapper fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperStats {
    /// Mean training loss per epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    /// Usable (input, target) pairs inferred from the public corpus.
    pub pairs: usize,
    /// Public documents skipped because a model knew none of their tokens.
    pub skipped_documents: usize,
    /// Samples skipped mid-training for producing a zero-norm prediction.
    pub degenerate_samples: usize,
}

/// Infers the training pairs a mapper between these models would use:
/// every public document's vector in the source model paired with its
/// vector in the target model. Documents fully unknown to either model are
/// skipped (the count is returned).
pub fn inference_pairs(
    src: &EmbeddingModel,
    dst: &EmbeddingModel,
    public_corpus: &Corpus,
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, usize), MapperError> {
    let mut pairs = Vec::with_capacity(public_corpus.len());
    let mut skipped = 0;
    for doc in public_corpus.documents() {
        let x = match infer_vector(src, doc, src.config().epochs) {
            Ok(v) => v.values,
            Err(EmbeddingError::AllTokensUnknown(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let t = match infer_vector(dst, doc, dst.config().epochs) {
            Ok(v) => v.values,
            Err(EmbeddingError::AllTokensUnknown(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        pairs.push((x, t));
    }
    if pairs.is_empty() {
        return Err(MapperError::EmptyPublicCorpus);
    }
    Ok((pairs, skipped))
}

/// Fits a mapper from `src`'s space into `dst`'s space on a public corpus.
///
/// Pairs are inferred once and cached; each epoch shuffles them, walks
/// mini-batches with fresh dropout masks, and applies one Adam step per
/// batch on the batch-mean gradients. Deterministic given the configs and
/// both model seeds.
pub fn train_mapper(
    src: &EmbeddingModel,
    dst: &EmbeddingModel,
    public_corpus: &Corpus,
    config: &MapperConfig,
) -> Result<(MapperModel, MapperStats), MapperError> {
    config.validate()?;
    let (pairs, skipped_documents) = inference_pairs(src, dst, public_corpus)?;
    let mut model = init_mapper(
        src.dim(),
        dst.dim(),
        src.space_tag(),
        dst.space_tag(),
        config,
    )?;

    let hp = config.adam_params();
    let mut st_w1 = AdamState::new(model.w1.len());
    let mut st_b1 = AdamState::new(model.b1.len());
    let mut st_w2 = AdamState::new(model.w2.len());
    let mut st_b2 = AdamState::new(model.b2.len());

    let mut rng = rng_from_seed(derive_seed(config.seed, "mapper-train"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut degenerate_samples = 0;

    for _epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        let mut epoch_count = 0usize;

        for batch in order.chunks(config.batch_size) {
            let mut grads = MapperGradients::zeros(&model);
            let mut used = 0usize;
            for &idx in batch {
                let (x, t) = &pairs[idx];
                let scale = if model.config.dropout > 0.0 {
                    Some(draw_dropout_scales(
                        model.hidden,
                        model.config.dropout,
                        &mut rng,
                    ))
                } else {
                    None
                };
                match backward_sample(&model, x, t, scale.as_deref(), &mut grads) {
                    Ok(loss) => {
                        epoch_loss_sum += loss;
                        used += 1;
                    }
                    Err(MapperError::DegenerateVector) => degenerate_samples += 1,
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            grads.scale(1.0 / used as f64);
            adam_step(&mut model.w1, &grads.d_w1, &mut st_w1, &hp);
            adam_step(&mut model.b1, &grads.d_b1, &mut st_b1, &hp);
            adam_step(&mut model.w2, &grads.d_w2, &mut st_w2, &hp);
            adam_step(&mut model.b2, &grads.d_b2, &mut st_b2, &hp);
            epoch_count += used;
        }
        epoch_losses.push(if epoch_count == 0 {
            f64::NAN
        } else {
            epoch_loss_sum / epoch_count as f64
        });
    }

    let finite = model
        .w1
        .iter()
        .chain(&model.b1)
        .chain(&model.w2)
        .chain(&model.b2)
        .all(|w| w.is_finite());
    if !finite {
        return Err(MapperError::InvalidConfig(
            "training produced non-finite mapper weights".into(),
        ));
    }

    Ok((
        model,
        MapperStats {
            epoch_losses,
            pairs: pairs.len(),
            skipped_documents,
            degenerate_samples,
        },
    ))
}
