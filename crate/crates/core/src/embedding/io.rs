//! Binary model files.
//!
//! Layout: 5 magic bytes `SEEC\x01`, a little-endian u32 header length, a
//! JSON header (space tag, training config, vocabulary with counts,
//! document ids), then the weight matrices as little-endian `f32` in
//! snapshot order: word-input rows, document rows, output rows.
//!
//! Weights are `f64` in memory and narrowed on write, so save → load →
//! save reproduces a file byte for byte even though load → save of the
//! in-memory model is lossy in the last bits.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingModel, TrainingConfig};
use crate::corpus::Vocabulary;

const MAGIC: &[u8; 5] = b"SEEC\x01";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    space_tag: String,
    config: TrainingConfig,
    vocab: Vec<(String, u64)>,
    doc_ids: Vec<String>,
}

fn bad(origin: &str, reason: impl Into<String>) -> EmbeddingError {
    EmbeddingError::BadModelFile {
        path: origin.to_owned(),
        reason: reason.into(),
    }
}

/// Serializes a model to its file representation.
pub fn model_to_bytes(model: &EmbeddingModel) -> Result<Vec<u8>, EmbeddingError> {
    model.config.validate()?;
    model.ensure_finite()?;
    let header = ModelHeader {
        space_tag: model.space_tag.clone(),
        config: model.config.clone(),
        vocab: model.vocab.entries().to_vec(),
        doc_ids: model.doc_ids.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| bad("<serialize>", format!("header encoding failed: {e}")))?;

    let weights = model.get_weights();
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + header_json.len() + weights.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for w in weights {
        bytes.extend_from_slice(&(w as f32).to_le_bytes());
    }
    Ok(bytes)
}

/// Parses a model file; `origin` names the source in error messages.
pub fn model_from_bytes(bytes: &[u8], origin: &str) -> Result<EmbeddingModel, EmbeddingError> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(bad(origin, "file too short"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad(origin, "bad magic; not an embedding model file"));
    }
    let header_len =
        u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 4;
    let body_start = header_start + header_len;
    if bytes.len() < body_start {
        return Err(bad(origin, "truncated header"));
    }
    let header: ModelHeader = serde_json::from_slice(&bytes[header_start..body_start])
        .map_err(|e| bad(origin, format!("header decoding failed: {e}")))?;
    header.config.validate()?;
    if header.vocab.is_empty() {
        return Err(bad(origin, "empty vocabulary"));
    }
    if header.vocab.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(bad(origin, "vocabulary entries not strictly sorted"));
    }

    let dim = header.config.dim;
    let expected = (2 * header.vocab.len() + header.doc_ids.len()) * dim;
    let body = &bytes[body_start..];
    if body.len() != expected * 4 {
        return Err(bad(
            origin,
            format!("expected {} weight bytes, found {}", expected * 4, body.len()),
        ));
    }
    let mut weights = Vec::with_capacity(expected);
    for chunk in body.chunks_exact(4) {
        weights.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
    }

    let vocab = Vocabulary::from_counts(header.vocab.into_iter().collect());
    let mut model = super::init_model(&vocab, &header.doc_ids, &header.space_tag, &header.config)?;
    model.set_weights(&weights)?;
    model.ensure_finite()?;
    Ok(model)
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<(), EmbeddingError> {
    let bytes = model_to_bytes(model)?;
    let mut file = std::fs::File::create(path).map_err(|e| EmbeddingError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    file.write_all(&bytes).map_err(|e| EmbeddingError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel, EmbeddingError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| EmbeddingError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    model_from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Corpus, Document};
    use crate::embedding::{train, TrainMode};

    fn trained_model(mode: TrainMode) -> EmbeddingModel {
        let docs = (0..6)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                tokens: tokenize("alpha beta gamma delta alpha beta gamma alpha beta delta"),
            })
            .collect();
        let corpus = Corpus::from_documents("io-test", docs).unwrap();
        let cfg = TrainingConfig {
            dim: 7,
            epochs: 4,
            learning_rate: 0.05,
            window: 2,
            negative_samples: 2,
            mode,
            seed: 31,
        };
        train(&corpus, &cfg, 2).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        for mode in [TrainMode::PvDm, TrainMode::SkipGram] {
            let model = trained_model(mode);
            let first = model_to_bytes(&model).unwrap();
            let reloaded = model_from_bytes(&first, "<mem>").unwrap();
            let second = model_to_bytes(&reloaded).unwrap();
            assert_eq!(first, second);

            // Metadata survives the trip exactly.
            assert_eq!(reloaded.space_tag(), model.space_tag());
            assert_eq!(reloaded.config(), model.config());
            assert_eq!(reloaded.vocab(), model.vocab());
            assert_eq!(reloaded.doc_ids(), model.doc_ids());
        }
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.seec1");
        let model = trained_model(TrainMode::PvDm);
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        // Narrowed weights are close to the trained ones.
        for (a, b) in model.get_weights().iter().zip(loaded.get_weights()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let model = trained_model(TrainMode::PvDm);
        let bytes = model_to_bytes(&model).unwrap();

        let err = model_from_bytes(&bytes[..8], "<mem>").unwrap_err();
        assert!(matches!(err, EmbeddingError::BadModelFile { .. }));

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(model_from_bytes(&wrong_magic, "<mem>").is_err());

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        assert!(model_from_bytes(&truncated, "<mem>").is_err());

        let mut padded = bytes;
        padded.extend_from_slice(&[0, 0, 0, 0]);
        assert!(model_from_bytes(&padded, "<mem>").is_err());
    }
}
