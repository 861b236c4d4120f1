//! Text corpora, vocabularies, and deterministic site partitioning.
//!
//! A [`Corpus`] is an ordered list of tokenized documents with unique ids.
//! Vocabularies are always kept lexicographically sorted so that every
//! consumer (vocabulary merging, model initialisation, noise tables, model
//! files) sees one canonical token order regardless of how the counts were
//! produced.

pub mod graph;
pub mod walks;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed};

/// Errors from corpus and graph ingestion.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus `{0}` contains no documents")]
    EmptyCorpus(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("no token reached min_count {min_count} (corpus `{tag}`)")]
    EmptyVocabulary { tag: String, min_count: u64 },
    #[error("invalid partition spec: {0}")]
    InvalidPartition(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("graph has no edges; random walks would all be single nodes")]
    IsolatedGraph,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One document: a stable id plus its token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// An ordered collection of documents with unique ids.
///
/// Iteration order is insertion order and is part of the determinism
/// contract: training shuffles are seeded permutations of this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    source_tag: String,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(source_tag: impl Into<String>) -> Self {
        Corpus {
            source_tag: source_tag.into(),
            documents: Vec::new(),
        }
    }

    /// Builds a corpus, rejecting duplicate document ids.
    pub fn from_documents(
        source_tag: impl Into<String>,
        documents: Vec<Document>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new(source_tag);
        for doc in documents {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, doc: Document) -> Result<(), CorpusError> {
        if self.documents.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        self.documents.push(doc);
        Ok(())
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.doc_id.clone()).collect()
    }
}

/// Lowercases, strips anything that is neither alphanumeric nor whitespace,
/// and splits on whitespace.
pub fn tokenize(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else if c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// A token inventory with counts, sorted lexicographically by token.
///
/// The sort order doubles as the token's row index in embedding weight
/// matrices, so it must be identical everywhere a vocabulary is rebuilt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token counts; entries come out sorted.
    pub fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let entries: Vec<(String, u64)> = counts.into_iter().collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        Vocabulary { entries, index }
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row index of `token`, if present.
    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, position: usize) -> &str {
        &self.entries[position].0
    }

    pub fn count(&self, position: usize) -> u64 {
        self.entries[position].1
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }
}

/// Counts tokens and keeps those occurring at least `min_count` times.
pub fn build_vocabulary(corpus: &Corpus, min_count: u64) -> Result<Vocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus(corpus.source_tag().to_owned()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus.documents() {
        for token in &doc.tokens {
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
    }
    counts.retain(|_, c| *c >= min_count);
    if counts.is_empty() {
        return Err(CorpusError::EmptyVocabulary {
            tag: corpus.source_tag().to_owned(),
            min_count,
        });
    }
    Ok(Vocabulary::from_counts(counts))
}

/// Merges site vocabularies into one aggregate: union of tokens on exact
/// string match, counts summed, lexicographic order.
pub fn merge_vocabularies(locals: &[Vocabulary]) -> Vocabulary {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for vocab in locals {
        for (token, count) in vocab.entries() {
            *counts.entry(token.clone()).or_insert(0) += count;
        }
    }
    Vocabulary::from_counts(counts)
}

/// How items are dealt to sites when simulating a federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionPolicy {
    /// Items are dealt uniformly at random; sites end up within one item of
    /// each other in size. The only policy valid for document corpora.
    Uniform,
    /// Graphs only: nodes are dealt uniformly and edges that would cross
    /// sites are dropped.
    DropCrossEdges,
    /// Graphs only: nodes are dealt uniformly and cross-site edges are kept
    /// by mirroring the remote endpoint into the local graph, preserving
    /// boundary neighborhoods at the cost of duplicated nodes.
    KeepCrossEdges,
}

/// Deterministic site split: same spec, same split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_sites: usize,
    pub policy: PartitionPolicy,
    pub seed: u64,
}

/// Deals `n` item indices to `num_sites` balanced groups: a seeded shuffle
/// decides assignment, but each group keeps its items in original order.
pub(crate) fn deal_indices(n: usize, num_sites: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, "partition"));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let base = n / num_sites;
    let extra = n % num_sites;
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(num_sites);
    let mut cursor = 0;
    for site in 0..num_sites {
        let take = base + usize::from(site < extra);
        let mut indices: Vec<usize> = order[cursor..cursor + take].to_vec();
        indices.sort_unstable();
        groups.push(indices);
        cursor += take;
    }
    groups
}

/// Splits a corpus into per-site corpora.
///
/// Sites are balanced to within one document, every document lands on
/// exactly one site, and each site preserves the original document order
/// (so a one-site partition is the identity).
pub fn partition_corpus(corpus: &Corpus, spec: &PartitionSpec) -> Result<Vec<Corpus>, CorpusError> {
    if spec.num_sites == 0 {
        return Err(CorpusError::InvalidPartition(
            "num_sites must be at least 1".into(),
        ));
    }
    if spec.policy != PartitionPolicy::Uniform {
        return Err(CorpusError::InvalidPartition(
            "document corpora only support the uniform policy".into(),
        ));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus(corpus.source_tag().to_owned()));
    }
    let groups = deal_indices(corpus.len(), spec.num_sites, spec.seed);
    let mut sites = Vec::with_capacity(spec.num_sites);
    for (ordinal, indices) in groups.iter().enumerate() {
        let documents = indices
            .iter()
            .map(|&i| corpus.documents()[i].clone())
            .collect();
        sites.push(Corpus {
            source_tag: format!("{}/site{}", corpus.source_tag, ordinal),
            documents,
        });
    }
    Ok(sites)
}

/// Reads a corpus from a TSV file: one `<doc_id>\t<raw text>` per line.
///
/// Text is tokenized with [`tokenize`]; blank lines are skipped.
pub fn read_corpus_file(path: &Path, source_tag: &str) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::new(source_tag);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, text) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: "expected <doc_id>\\t<raw text>".into(),
        })?;
        corpus.push(Document {
            doc_id: doc_id.trim().to_owned(),
            tokens: tokenize(text),
        })?;
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus(source_tag.to_owned()));
    }
    Ok(corpus)
}

/// Writes a corpus in the same TSV shape `read_corpus_file` accepts.
pub fn write_corpus_file(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    for doc in corpus.documents() {
        writeln!(out, "{}\t{}", doc.doc_id, doc.tokens.join(" ")).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            tokens: tokenize(text),
        }
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
        assert_eq!(tokenize("a-b c_d"), vec!["a", "b", "c", "d"]);
        assert_eq!(tokenize("  spaced\tout\nlines "), vec!["spaced", "out", "lines"]);
        assert_eq!(tokenize("42nd st."), vec!["42nd", "st"]);
        assert!(tokenize("!!! ...").is_empty());
    }

    #[test]
    fn duplicate_doc_ids_are_rejected() {
        let mut corpus = Corpus::new("t");
        corpus.push(doc("d1", "a b")).unwrap();
        let err = corpus.push(doc("d1", "c")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateDocId(id) if id == "d1"));
    }

    #[test]
    fn vocabulary_applies_min_count_and_sorts() {
        let corpus = Corpus::from_documents(
            "t",
            vec![doc("d1", "cat dog cat"), doc("d2", "dog zebra ant dog")],
        )
        .unwrap();
        let vocab = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(vocab.entries(), &[("cat".into(), 2), ("dog".into(), 3)]);
        assert_eq!(vocab.position("cat"), Some(0));
        assert_eq!(vocab.position("zebra"), None);

        let all = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(
            all.entries().iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>(),
            vec!["ant", "cat", "dog", "zebra"]
        );
    }

    #[test]
    fn vocabulary_errors_when_nothing_survives() {
        let corpus = Corpus::from_documents("t", vec![doc("d1", "a b c")]).unwrap();
        let err = build_vocabulary(&corpus, 2).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyVocabulary { .. }));
    }

    #[test]
    fn merge_sums_counts_and_keeps_order() {
        let a = Vocabulary::from_counts(BTreeMap::from([("cat".into(), 3), ("dog".into(), 1)]));
        let b = Vocabulary::from_counts(BTreeMap::from([("ant".into(), 5), ("cat".into(), 2)]));
        let merged = merge_vocabularies(&[a, b]);
        assert_eq!(
            merged.entries(),
            &[("ant".into(), 5), ("cat".into(), 5), ("dog".into(), 1)]
        );
    }

    #[test]
    fn merge_is_order_insensitive() {
        let a = Vocabulary::from_counts(BTreeMap::from([("x".into(), 1), ("y".into(), 2)]));
        let b = Vocabulary::from_counts(BTreeMap::from([("y".into(), 4), ("z".into(), 1)]));
        let ab = merge_vocabularies(&[a.clone(), b.clone()]);
        let ba = merge_vocabularies(&[b, a]);
        assert_eq!(ab, ba);
    }

    #[test]
    fn single_site_partition_is_identity() {
        let corpus = Corpus::from_documents(
            "t",
            vec![doc("d1", "a"), doc("d2", "b"), doc("d3", "c")],
        )
        .unwrap();
        let spec = PartitionSpec {
            num_sites: 1,
            policy: PartitionPolicy::Uniform,
            seed: 9,
        };
        let sites = partition_corpus(&corpus, &spec).unwrap();
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].documents(), corpus.documents());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        let corpus = Corpus::from_documents(
            "rt",
            vec![doc("d1", "the cat sat"), doc("d2", "a dog ran far")],
        )
        .unwrap();
        write_corpus_file(&corpus, &path).unwrap();
        let loaded = read_corpus_file(&path, "rt").unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn malformed_corpus_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "d1\tok text\nno tab here\n").unwrap();
        let err = read_corpus_file(&path, "bad").unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn partition_covers_disjointly_and_balances(
            n in 1usize..200,
            num_sites in 1usize..8,
            seed in 0u64..1000,
        ) {
            let docs: Vec<Document> = (0..n)
                .map(|i| doc(&format!("d{i}"), "tok"))
                .collect();
            let corpus = Corpus::from_documents("p", docs).unwrap();
            let spec = PartitionSpec { num_sites, policy: PartitionPolicy::Uniform, seed };
            let sites = partition_corpus(&corpus, &spec).unwrap();

            prop_assert_eq!(sites.len(), num_sites);
            let sizes: Vec<usize> = sites.iter().map(Corpus::len).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);

            let mut seen: Vec<&str> = sites
                .iter()
                .flat_map(|s| s.documents().iter().map(|d| d.doc_id.as_str()))
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen.len(), n);
            seen.dedup();
            prop_assert_eq!(seen.len(), n);

            // Same spec, same split.
            let again = partition_corpus(&corpus, &spec).unwrap();
            prop_assert_eq!(sites, again);
        }
    }
}
