//! Second-order biased random walks that turn a graph into a corpus.
//!
//! Each walk is emitted as a document whose tokens are the visited node ids,
//! so the downstream skip-gram trainer needs no graph-specific code. The
//! bias follows the usual two-parameter scheme: from `cur`, having arrived
//! from `prev`, a candidate next node `x` gets unnormalized weight
//!
//! * `1 / return_p` if `x == prev` (stepping straight back),
//! * `1`            if `x` is adjacent to `prev` (staying close), and
//! * `1 / in_out_q` otherwise (moving outward).
//!
//! Small `in_out_q` therefore pushes walks outward (exploration), large
//! `return_p` discourages immediate backtracking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::{Corpus, CorpusError, Document};
use crate::rng::{derive_seed, rng_from_seed};

/// Walk generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Return bias `p`: larger values make revisiting the previous node rarer.
    pub return_p: f64,
    /// In-out bias `q`: smaller values push walks toward unexplored nodes.
    pub in_out_q: f64,
    /// Number of nodes per walk, including the start node.
    pub walk_length: usize,
    /// Walks started from every node.
    pub num_walks: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            return_p: 0.6,
            in_out_q: 0.1,
            walk_length: 20,
            num_walks: 20,
            seed: 0,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        if !(self.return_p > 0.0) || !(self.in_out_q > 0.0) {
            return Err(CorpusError::InvalidPartition(
                "walk biases return_p and in_out_q must be positive".into(),
            ));
        }
        if self.walk_length == 0 || self.num_walks == 0 {
            return Err(CorpusError::InvalidPartition(
                "walk_length and num_walks must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Picks the next node given the previous and current one.
///
/// Exposed so transition statistics can be validated against the analytic
/// distribution; `generate_walks` routes every biased step through here.
pub fn sample_next<R: Rng>(
    graph: &Graph,
    prev: &str,
    cur: &str,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Option<String> {
    let neighbors = graph.neighbors(cur)?;
    if neighbors.is_empty() {
        return None;
    }
    let weights: Vec<f64> = neighbors
        .iter()
        .map(|x| {
            if x == prev {
                1.0 / cfg.return_p
            } else if graph.has_edge(x, prev) {
                1.0
            } else {
                1.0 / cfg.in_out_q
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (x, w) in neighbors.iter().zip(&weights) {
        draw -= w;
        if draw < 0.0 {
            return Some(x.clone());
        }
    }
    // Floating-point slack: fall back to the last candidate.
    neighbors.iter().next_back().cloned()
}

fn single_walk<R: Rng>(graph: &Graph, start: &str, cfg: &WalkConfig, rng: &mut R) -> Vec<String> {
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(start.to_owned());
    let Some(neighbors) = graph.neighbors(start).filter(|ns| !ns.is_empty()) else {
        return walk; // isolated start: the walk is just the node itself
    };
    if cfg.walk_length == 1 {
        return walk;
    }
    // First hop has no previous node; choose uniformly.
    let first: Vec<&String> = neighbors.iter().collect();
    let next = first[rng.random_range(0..first.len())].clone();
    walk.push(next);

    while walk.len() < cfg.walk_length {
        let prev = &walk[walk.len() - 2];
        let cur = &walk[walk.len() - 1];
        match sample_next(graph, prev, cur, cfg, rng) {
            Some(next) => walk.push(next),
            None => break, // dead end: truncate rather than restart
        }
    }
    walk
}

/// Runs `num_walks` biased walks from every node and returns them as a
/// corpus: document id `<node>#<walk index>`, tokens the visited node ids.
///
/// Isolated nodes still contribute single-token walks so every node keeps a
/// (untrained) vector; a graph with no edges at all is rejected.
pub fn generate_walks(graph: &Graph, cfg: &WalkConfig) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    if graph.node_count() == 0 {
        return Err(CorpusError::EmptyCorpus("graph".into()));
    }
    if graph.edge_count() == 0 {
        return Err(CorpusError::IsolatedGraph);
    }
    let mut corpus = Corpus::new("walks");
    for node in graph.nodes() {
        for j in 0..cfg.num_walks {
            let seed = derive_seed(cfg.seed, &format!("walk/{node}/{j}"));
            let mut rng = rng_from_seed(seed);
            let tokens = single_walk(graph, node, cfg, &mut rng);
            corpus.push(Document {
                doc_id: format!("{node}#{j}"),
                tokens,
            })?;
        }
    }
    Ok(corpus)
}
