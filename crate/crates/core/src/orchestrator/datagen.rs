//! Deterministic synthetic datasets standing in for private workplace data.
//!
//! Text: a topic-mixture generator. Every document gets a dominant topic
//! and a mixture drawn from an asymmetric Dirichlet (sampled as normalized
//! Gamma draws), then emits tokens from per-topic pools plus a shared pool. The
//! mixtures give every document an individual neighborhood, so rankings
//! over the corpus are informative rather than arbitrary within topics.
//!
//! Graph: a planted-community generator. Nodes are split round-robin into
//! communities; edges appear with probability `p_in` inside a community and
//! `p_out` across, giving walks a clear homophily signal.
//!
//! Both generators derive one RNG stream per document (or per node pair
//! block) from their seed, so outputs are byte-stable.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::graph::Graph;
use crate::corpus::{Corpus, CorpusError, Document};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};

/// Shape of a generated topic-mixture text corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTextSpec {
    pub num_docs: usize,
    pub num_topics: usize,
    /// Distinct tokens per topic pool.
    pub topic_vocab: usize,
    /// Distinct tokens in the topic-free shared pool.
    pub shared_vocab: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Dirichlet concentration on the document's dominant topic.
    pub alpha_own: f64,
    /// Dirichlet concentration on every other topic.
    pub alpha_other: f64,
    /// Probability a token position draws from the shared pool.
    pub shared_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticTextSpec {
    fn default() -> Self {
        SyntheticTextSpec {
            num_docs: 200,
            num_topics: 10,
            topic_vocab: 30,
            shared_vocab: 40,
            doc_len: 40,
            alpha_own: 4.0,
            alpha_other: 0.4,
            shared_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticTextSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.num_docs >= 1
            && self.num_topics >= 1
            && self.topic_vocab >= 1
            && self.doc_len >= 1
            && self.alpha_own > 0.0
            && self.alpha_other > 0.0
            && (0.0..1.0).contains(&self.shared_fraction)
            && (self.shared_fraction == 0.0 || self.shared_vocab >= 1);
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidSpec(
                "synthetic text spec has non-positive sizes or weights".into(),
            ))
        }
    }

    /// The dominant topic of document `index` (round-robin, so topics stay
    /// balanced for any prefix of the corpus).
    pub fn topic_of(&self, index: usize) -> usize {
        index % self.num_topics
    }
}

/// One normalized draw from Dirichlet(alpha), via Gamma samples.
fn dirichlet_sample<R: Rng>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let gamma = Gamma::new(a, 1.0).expect("validated alpha > 0");
            gamma.sample(rng).max(f64::MIN_POSITIVE)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= total);
    draws
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Generates the corpus and each document's dominant-topic label.
pub fn generate_text_corpus(
    tag: &str,
    spec: &SyntheticTextSpec,
) -> Result<(Corpus, Vec<usize>), CorpusError> {
    spec.validate()?;
    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut labels = Vec::with_capacity(spec.num_docs);
    for i in 0..spec.num_docs {
        let dominant = spec.topic_of(i);
        let mut rng = rng_from_seed(derive_seed_indexed(spec.seed, "textdoc", i as u64));
        let alphas: Vec<f64> = (0..spec.num_topics)
            .map(|t| if t == dominant { spec.alpha_own } else { spec.alpha_other })
            .collect();
        let mixture = dirichlet_sample(&alphas, &mut rng);

        let tokens = (0..spec.doc_len)
            .map(|_| {
                if spec.shared_fraction > 0.0 && rng.random::<f64>() < spec.shared_fraction {
                    format!("s{}", rng.random_range(0..spec.shared_vocab))
                } else {
                    let topic = sample_index(&mixture, &mut rng);
                    format!("t{topic}w{}", rng.random_range(0..spec.topic_vocab))
                }
            })
            .collect();
        docs.push(Document {
            doc_id: format!("d{i:04}"),
            tokens,
        });
        labels.push(dominant);
    }
    Ok((Corpus::from_documents(tag, docs)?, labels))
}

/// Shape of a generated planted-community graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGraphSpec {
    pub num_nodes: usize,
    pub num_communities: usize,
    /// Edge probability inside a community.
    pub p_in: f64,
    /// Edge probability across communities.
    pub p_out: f64,
    pub seed: u64,
}

impl Default for SyntheticGraphSpec {
    fn default() -> Self {
        SyntheticGraphSpec {
            num_nodes: 200,
            num_communities: 2,
            p_in: 0.15,
            p_out: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticGraphSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.num_nodes >= 2
            && self.num_communities >= 1
            && (0.0..=1.0).contains(&self.p_in)
            && (0.0..=1.0).contains(&self.p_out);
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidSpec(
                "synthetic graph spec has invalid sizes or probabilities".into(),
            ))
        }
    }

    pub fn community_of(&self, index: usize) -> usize {
        index % self.num_communities
    }
}

/// Generates the graph and each node's community label, node order
/// `n0000..`.
pub fn generate_community_graph(
    spec: &SyntheticGraphSpec,
) -> Result<(Graph, Vec<usize>), CorpusError> {
    spec.validate()?;
    let names: Vec<String> = (0..spec.num_nodes).map(|i| format!("n{i:04}")).collect();
    let labels: Vec<usize> = (0..spec.num_nodes).map(|i| spec.community_of(i)).collect();

    let mut graph = Graph::new();
    for name in &names {
        graph.add_node(name.clone());
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, "graph"));
    for i in 0..spec.num_nodes {
        for j in (i + 1)..spec.num_nodes {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                graph.add_edge(names[i].clone(), names[j].clone());
            }
        }
    }
    Ok((graph, labels))
}
