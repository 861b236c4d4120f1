//! Binary mapper files: magic `SEEC\x02`, little-endian u32 header length,
//! JSON header, then w1, b1, w2, b2 as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MapperConfig, MapperError, MapperModel};

const MAGIC: &[u8; 5] = b"SEEC\x02";

#[derive(Serialize, Deserialize)]
struct MapperHeader {
    src_space: String,
    dst_space: String,
    d_src: usize,
    hidden: usize,
    d_dst: usize,
    config: MapperConfig,
}

fn bad(origin: &str, reason: impl Into<String>) -> MapperError {
    MapperError::BadMapperFile {
        path: origin.to_owned(),
        reason: reason.into(),
    }
}

pub fn mapper_to_bytes(model: &MapperModel) -> Result<Vec<u8>, MapperError> {
    model.config.validate()?;
    let header = MapperHeader {
        src_space: model.src_space.clone(),
        dst_space: model.dst_space.clone(),
        d_src: model.d_src,
        hidden: model.hidden,
        d_dst: model.d_dst,
        config: model.config.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| bad("<serialize>", format!("header encoding failed: {e}")))?;
    let tensors = [&model.w1, &model.b1, &model.w2, &model.b2];
    let weight_count: usize = tensors.iter().map(|t| t.len()).sum();

    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + header_json.len() + weight_count * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for tensor in tensors {
        for &w in tensor {
            bytes.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn mapper_from_bytes(bytes: &[u8], origin: &str) -> Result<MapperModel, MapperError> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(bad(origin, "file too short"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad(origin, "bad magic; not a mapper file"));
    }
    let header_len =
        u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 4;
    let body_start = header_start + header_len;
    if bytes.len() < body_start {
        return Err(bad(origin, "truncated header"));
    }
    let header: MapperHeader = serde_json::from_slice(&bytes[header_start..body_start])
        .map_err(|e| bad(origin, format!("header decoding failed: {e}")))?;
    header.config.validate()?;
    if header.hidden != header.config.hidden_units {
        return Err(bad(origin, "hidden size disagrees with config"));
    }
    if header.d_src == 0 || header.d_dst == 0 {
        return Err(bad(origin, "zero vector dimension"));
    }

    let sizes = [
        header.hidden * header.d_src,
        header.hidden,
        header.d_dst * header.hidden,
        header.d_dst,
    ];
    let expected: usize = sizes.iter().sum();
    let body = &bytes[body_start..];
    if body.len() != expected * 4 {
        return Err(bad(
            origin,
            format!("expected {} weight bytes, found {}", expected * 4, body.len()),
        ));
    }
    let mut flat = Vec::with_capacity(expected);
    for chunk in body.chunks_exact(4) {
        flat.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
    }
    if !flat.iter().all(|w| w.is_finite()) {
        return Err(bad(origin, "non-finite weights"));
    }
    let mut rest = flat;
    let mut take = |n: usize| -> Vec<f64> {
        let tail = rest.split_off(n);
        std::mem::replace(&mut rest, tail)
    };
    let w1 = take(sizes[0]);
    let b1 = take(sizes[1]);
    let w2 = take(sizes[2]);
    let b2 = take(sizes[3]);

    Ok(MapperModel {
        src_space: header.src_space,
        dst_space: header.dst_space,
        d_src: header.d_src,
        hidden: header.hidden,
        d_dst: header.d_dst,
        w1,
        b1,
        w2,
        b2,
        config: header.config,
    })
}

pub fn save_mapper(model: &MapperModel, path: &Path) -> Result<(), MapperError> {
    let bytes = mapper_to_bytes(model)?;
    let mut file = std::fs::File::create(path).map_err(|e| MapperError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    file.write_all(&bytes).map_err(|e| MapperError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_mapper(path: &Path) -> Result<MapperModel, MapperError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| MapperError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    mapper_from_bytes(&bytes, &path.display().to_string())
}
