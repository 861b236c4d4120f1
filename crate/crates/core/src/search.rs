//! Cosine top-k search over embedding models, locally and across sites.
//!
//! Results are fully deterministic: items are ranked by score descending
//! with ties broken by (site ordinal, item id), using total float ordering.
//! Cross-site search fans a query vector out to every site's index, takes
//! each site's local top-k, and merges the ranked lists under the same
//! ordering; only vectors and ids ever travel, never document content.
//!
//! Two cross-site flavours exist. Joint search assumes all sites share one
//! trained space, so the same vector is sent everywhere. Mapped search
//! translates the query through a per-target-space mapper first — or, as an
//! experimental control, sends the raw vector anyway (`use_mapping: false`),
//! which is exactly the broken cross-space comparison mapping is meant to
//! fix.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingModel, SemanticVector};
use crate::federation::SiteId;
use crate::mapper::{map_vector, MapperError, MapperModel};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error("query vector from space `{found}`, index holds `{expected}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("query vector has {found} dims, index holds {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no mapper from space `{src}` into space `{dst}`")]
    MissingMapper { src: String, dst: String },
    #[error("unknown item `{0}` in site index")]
    UnknownItem(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Cosine similarity; zero-norm vectors compare as 0 by definition.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SearchError> {
    if u.len() != v.len() {
        return Err(SearchError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (mut uu, mut vv, mut uv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uu += a * a;
        vv += b * b;
        uv += a * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(0.0);
    }
    // Clamp away float noise so scores stay inside [-1, 1].
    Ok((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub vector: SemanticVector,
    pub k: usize,
    /// Item id excluded everywhere it appears — normally the query document
    /// itself, so results do not trivially contain their own query.
    pub exclude: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub doc_id: String,
    pub site: SiteId,
    pub score: f64,
}

/// Score descending, then site ordinal, then item id — a total order.
fn rank_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.site.ordinal.cmp(&b.site.ordinal))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// A ranked result list; construction keeps items in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    items: Vec<ScoredItem>,
}

impl SearchResult {
    fn from_unsorted(mut items: Vec<ScoredItem>, k: usize) -> Self {
        items.sort_by(rank_order);
        items.truncate(k);
        SearchResult { items }
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One site's slice of a search fabric: who it is, which model it answers
/// from, and which item ids it serves.
#[derive(Debug, Clone)]
pub struct SiteIndex<'a> {
    pub site: SiteId,
    pub model: &'a EmbeddingModel,
    pub items: Vec<String>,
}

/// Top-k among an explicit candidate set (a site's own items).
pub fn local_topk_among<'a, I>(
    model: &EmbeddingModel,
    query: &SearchQuery,
    site: &SiteId,
    items: I,
) -> Result<SearchResult, SearchError>
where
    I: IntoIterator<Item = &'a str>,
{
    if query.vector.space_tag != model.space_tag() {
        return Err(SearchError::SpaceMismatch {
            expected: model.space_tag().to_owned(),
            found: query.vector.space_tag.clone(),
        });
    }
    let mut scored = Vec::new();
    for id in items {
        if query.exclude.as_deref() == Some(id) {
            continue;
        }
        let vector = model
            .item_vector(id)
            .ok_or_else(|| SearchError::UnknownItem(id.to_owned()))?;
        scored.push(ScoredItem {
            doc_id: id.to_owned(),
            site: site.clone(),
            score: cosine(&query.vector.values, vector)?,
        });
    }
    Ok(SearchResult::from_unsorted(scored, query.k))
}

/// Top-k over everything the model holds.
pub fn local_topk(
    model: &EmbeddingModel,
    query: &SearchQuery,
    site: &SiteId,
) -> Result<SearchResult, SearchError> {
    let ids = model.item_ids();
    local_topk_among(model, query, site, ids)
}

/// Merges per-site ranked lists into one global top-k.
///
/// Scores are compared as-is across sites; the same total order as local
/// ranking applies, so merging is associative and deterministic.
pub fn merge_results(parts: &[SearchResult], k: usize) -> SearchResult {
    let items: Vec<ScoredItem> = parts.iter().flat_map(|p| p.items.iter().cloned()).collect();
    SearchResult::from_unsorted(items, k)
}

/// Concatenation of per-site lists in rank order, untruncated; evaluation
/// dedups this before taking its top-k id set.
pub fn concat_results(parts: &[SearchResult]) -> SearchResult {
    let items: Vec<ScoredItem> = parts.iter().flat_map(|p| p.items.iter().cloned()).collect();
    let k = items.len();
    SearchResult::from_unsorted(items, k)
}

/// Cross-site search in one shared vector space: the same query vector is
/// scored against every site's items and the lists merge on raw scores.
pub fn global_search_joint(
    query: &SearchQuery,
    sites: &[SiteIndex],
) -> Result<SearchResult, SearchError> {
    let mut parts = Vec::with_capacity(sites.len());
    for index in sites {
        parts.push(local_topk_among(
            index.model,
            query,
            &index.site,
            index.items.iter().map(String::as_str),
        )?);
    }
    Ok(merge_results(&parts, query.k))
}

/// The query vector an origin sends to one target site under the mapped
/// regime: unchanged at home, translated through the (origin space, target
/// space) mapper abroad — or, with `use_mapping` off, re-tagged and sent
/// raw as the no-translation control.
pub fn mapped_query_vector(
    vector: &SemanticVector,
    origin: usize,
    target_ordinal: usize,
    target_space: &str,
    mappers: &BTreeMap<(String, String), MapperModel>,
    use_mapping: bool,
) -> Result<SemanticVector, SearchError> {
    if target_ordinal == origin {
        return Ok(vector.clone());
    }
    if !use_mapping {
        // Control arm: pretend the raw vector already lives in the target
        // space.
        return Ok(SemanticVector {
            values: vector.values.clone(),
            space_tag: target_space.to_owned(),
        });
    }
    let key = (vector.space_tag.clone(), target_space.to_owned());
    let mapper = mappers.get(&key).ok_or_else(|| SearchError::MissingMapper {
        src: vector.space_tag.clone(),
        dst: target_space.to_owned(),
    })?;
    Ok(map_vector(mapper, vector)?)
}

/// Cross-site search across independent spaces.
///
/// The query vector lives in the origin site's space; each target site is
/// queried with [`mapped_query_vector`]'s translation of it. Mappers are
/// keyed by (source space, target space).
pub fn global_search_mapped(
    query: &SearchQuery,
    origin: usize,
    sites: &[SiteIndex],
    mappers: &BTreeMap<(String, String), MapperModel>,
    use_mapping: bool,
) -> Result<SearchResult, SearchError> {
    let mut parts = Vec::with_capacity(sites.len());
    for index in sites {
        let site_query = SearchQuery {
            vector: mapped_query_vector(
                &query.vector,
                origin,
                index.site.ordinal,
                index.model.space_tag(),
                mappers,
                use_mapping,
            )?,
            k: query.k,
            exclude: query.exclude.clone(),
        };
        parts.push(local_topk_among(
            index.model,
            &site_query,
            &index.site,
            index.items.iter().map(String::as_str),
        )?);
    }
    Ok(merge_results(&parts, query.k))
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub query_id: String,
    /// 1-based position in the merged list.
    pub rank: usize,
    pub site: String,
    pub doc_id: String,
    pub score: f64,
}

pub fn result_records(query_id: &str, result: &SearchResult) -> Vec<ResultRecord> {
    result
        .items()
        .iter()
        .enumerate()
        .map(|(i, item)| ResultRecord {
            query_id: query_id.to_owned(),
            rank: i + 1,
            site: item.site.label.clone(),
            doc_id: item.doc_id.clone(),
            score: item.score,
        })
        .collect()
}

/// Appends one JSON object per record, in order.
pub fn write_results_jsonl(records: &[ResultRecord], path: &Path) -> Result<(), SearchError> {
    let io_err = |e: std::io::Error| SearchError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = std::fs::File::create(path).map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Reads a results log back, one record per non-empty line.
pub fn read_results_jsonl(path: &Path) -> Result<Vec<ResultRecord>, SearchError> {
    let text = std::fs::read_to_string(path).map_err(|e| SearchError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| SearchError::Io {
            path: format!("{}:{}", path.display(), i + 1),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        records.push(record);
    }
    Ok(records)
}
