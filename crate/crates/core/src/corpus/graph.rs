//! Undirected interaction graphs and their site partitions.
//!
//! Graphs come either from an explicit edge list or from channel-membership
//! records, where two users are linked once they share at least a threshold
//! number of channels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{deal_indices, CorpusError, PartitionPolicy, PartitionSpec};

/// An undirected graph over string node ids, no self-loops, no multi-edges.
///
/// Adjacency is kept in sorted maps so node and neighbor iteration order is
/// canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn add_node(&mut self, node: impl Into<String>) {
        self.adjacency.entry(node.into()).or_default();
    }

    /// Adds an undirected edge; self-loops are ignored.
    pub fn add_edge(&mut self, u: impl Into<String>, v: impl Into<String>) {
        let (u, v) = (u.into(), v.into());
        if u == v {
            return;
        }
        self.adjacency.entry(u.clone()).or_default().insert(v.clone());
        self.adjacency.entry(v).or_default().insert(u);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(node)
    }

    pub fn has_edge(&self, u: &str, v: &str) -> bool {
        self.adjacency.get(u).is_some_and(|ns| ns.contains(v))
    }

    pub fn degree(&self, node: &str) -> usize {
        self.adjacency.get(node).map_or(0, BTreeSet::len)
    }

    pub fn contains(&self, node: &str) -> bool {
        self.adjacency.contains_key(node)
    }

    /// Edges as sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut edges = Vec::with_capacity(self.edge_count());
        for (u, neighbors) in &self.adjacency {
            for v in neighbors {
                if u < v {
                    edges.push((u.clone(), v.clone()));
                }
            }
        }
        edges
    }
}

/// Links every pair of users sharing at least `threshold` channels.
///
/// `memberships` maps a channel id to the set of user ids in it. All users
/// appear as nodes even if they end up with no edges.
pub fn build_cooccurrence_graph(
    memberships: &BTreeMap<String, BTreeSet<String>>,
    threshold: u32,
) -> Graph {
    let mut shared: BTreeMap<(&str, &str), u32> = BTreeMap::new();
    let mut graph = Graph::new();
    for users in memberships.values() {
        let users: Vec<&str> = users.iter().map(String::as_str).collect();
        for (i, &u) in users.iter().enumerate() {
            graph.add_node(u);
            for &v in &users[i + 1..] {
                // BTreeSet iteration is sorted, so u < v already.
                *shared.entry((u, v)).or_insert(0) += 1;
            }
        }
    }
    for ((u, v), count) in shared {
        if count >= threshold {
            graph.add_edge(u, v);
        }
    }
    graph
}

/// Splits a graph into per-site subgraphs.
///
/// Nodes are dealt uniformly (balanced to within one node). What happens to
/// an edge whose endpoints land on different sites depends on the policy:
/// [`PartitionPolicy::DropCrossEdges`] discards it, while
/// [`PartitionPolicy::KeepCrossEdges`] keeps it on both sites by mirroring
/// the remote endpoint into each local graph.
pub fn partition_graph(graph: &Graph, spec: &PartitionSpec) -> Result<Vec<Graph>, CorpusError> {
    if spec.num_sites == 0 {
        return Err(CorpusError::InvalidPartition(
            "num_sites must be at least 1".into(),
        ));
    }
    let keep_cross = match spec.policy {
        PartitionPolicy::DropCrossEdges => false,
        PartitionPolicy::KeepCrossEdges => true,
        PartitionPolicy::Uniform => {
            return Err(CorpusError::InvalidPartition(
                "graph partitions must pick a cross-edge policy".into(),
            ))
        }
    };
    if graph.node_count() == 0 {
        return Err(CorpusError::EmptyCorpus("graph".into()));
    }

    let nodes: Vec<&str> = graph.nodes().collect();
    let groups = deal_indices(nodes.len(), spec.num_sites, spec.seed);
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (site, indices) in groups.iter().enumerate() {
        for &i in indices {
            owner.insert(nodes[i], site);
        }
    }

    let mut sites = vec![Graph::new(); spec.num_sites];
    for (&node, &site) in &owner {
        sites[site].add_node(node);
    }
    for (u, v) in graph.edges() {
        let (su, sv) = (owner[u.as_str()], owner[v.as_str()]);
        if su == sv {
            sites[su].add_edge(u, v);
        } else if keep_cross {
            sites[su].add_edge(u.clone(), v.clone());
            sites[sv].add_edge(u, v);
        }
    }
    Ok(sites)
}

/// Home site of every node under the given partition spec, keyed by node id.
///
/// With [`PartitionPolicy::KeepCrossEdges`] a node can appear in several site
/// graphs; its owner is still the single site it was dealt to.
pub fn partition_owners(graph: &Graph, spec: &PartitionSpec) -> BTreeMap<String, usize> {
    let nodes: Vec<&str> = graph.nodes().collect();
    let groups = deal_indices(nodes.len(), spec.num_sites, spec.seed);
    let mut owner = BTreeMap::new();
    for (site, indices) in groups.iter().enumerate() {
        for &i in indices {
            owner.insert(nodes[i].to_owned(), site);
        }
    }
    owner
}

/// Reads an edge list: one `<u> <v>` pair per line (whitespace separated);
/// `#` comment lines and blank lines are skipped.
pub fn read_edge_list(path: &Path) -> Result<Graph, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| super::io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut graph = Graph::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| super::io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (u, v) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(CorpusError::Malformed {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: "expected exactly two node ids".into(),
                })
            }
        };
        graph.add_edge(u, v);
    }
    if graph.node_count() == 0 {
        return Err(CorpusError::EmptyCorpus("edge list".into()));
    }
    Ok(graph)
}

/// Writes a graph as an edge list compatible with [`read_edge_list`].
pub fn write_edge_list(graph: &Graph, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::fs::File::create(path).map_err(|e| super::io_err(path, e))?;
    for (u, v) in graph.edges() {
        writeln!(out, "{u} {v}").map_err(|e| super::io_err(path, e))?;
    }
    Ok(())
}

/// Reads channel memberships: one `<channel_id>\t<user_id>` pair per line.
pub fn read_membership_file(
    path: &Path,
) -> Result<BTreeMap<String, BTreeSet<String>>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| super::io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut memberships: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| super::io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (channel, user) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: "expected <channel_id>\\t<user_id>".into(),
        })?;
        memberships
            .entry(channel.trim().to_owned())
            .or_default()
            .insert(user.trim().to_owned());
    }
    if memberships.is_empty() {
        return Err(CorpusError::EmptyCorpus("membership file".into()));
    }
    Ok(memberships)
}
