//! Sparse undirected hypergraphs: validation, permutation action, incidence
//! indexing, JSON serialization, and the bridge to dense symmetric tensor
//! sequences used by the oracle layers.

mod tensor;

pub use tensor::{
    all_permutations, for_each_multi_index, from_tensor_sequence, has_repeat, pack, unique_sorted,
    unpack, ChannelLayout, DenseTensor, TensorSequence,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature block attached to nodes or hyperedges.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Features> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidHypergraph("ragged feature rows".into()));
        }
        Ok(Features {
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Features {
        Features {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }
}

/// Train/val/test node index sets for transductive tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected hypergraph with optional features and labels.
///
/// Hyperedges are stored as sorted lists of distinct node indices; inputs
/// with a repeated node index inside one hyperedge are rejected rather than
/// deduplicated, since silent dedup usually hides a data bug. Duplicate
/// hyperedges (same node set appearing twice) are permitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    num_nodes: usize,
    edges: Vec<Vec<usize>>,
    pub node_features: Option<Features>,
    pub edge_features: Option<Features>,
    pub node_labels: Option<Vec<i64>>,
    pub edge_labels: Option<Vec<i64>>,
    pub splits: Option<Splits>,
}

impl Hypergraph {
    pub fn new(num_nodes: usize, edges: Vec<Vec<usize>>) -> Result<Hypergraph> {
        let mut canon_edges = Vec::with_capacity(edges.len());
        for (pos, mut e) in edges.into_iter().enumerate() {
            if e.is_empty() {
                return Err(Error::InvalidHypergraph(format!("hyperedge {pos} is empty")));
            }
            if let Some(&bad) = e.iter().find(|&&v| v >= num_nodes) {
                return Err(Error::InvalidHypergraph(format!(
                    "hyperedge {pos} references node {bad} >= {num_nodes}"
                )));
            }
            e.sort_unstable();
            if e.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidHypergraph(format!(
                    "hyperedge {pos} repeats a node index"
                )));
            }
            canon_edges.push(e);
        }
        Ok(Hypergraph {
            num_nodes,
            edges: canon_edges,
            node_features: None,
            edge_features: None,
            node_labels: None,
            edge_labels: None,
            splits: None,
        })
    }

    pub fn with_node_features(mut self, f: Features) -> Result<Hypergraph> {
        if f.rows() != self.num_nodes {
            return Err(Error::InvalidHypergraph(format!(
                "{} node feature rows for {} nodes",
                f.rows(),
                self.num_nodes
            )));
        }
        self.node_features = Some(f);
        Ok(self)
    }

    pub fn with_edge_features(mut self, f: Features) -> Result<Hypergraph> {
        if f.rows() != self.edges.len() {
            return Err(Error::InvalidHypergraph(format!(
                "{} edge feature rows for {} hyperedges",
                f.rows(),
                self.edges.len()
            )));
        }
        self.edge_features = Some(f);
        Ok(self)
    }

    pub fn with_node_labels(mut self, labels: Vec<i64>) -> Result<Hypergraph> {
        if labels.len() != self.num_nodes {
            return Err(Error::InvalidHypergraph(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &[usize] {
        &self.edges[i]
    }

    pub fn max_order(&self) -> usize {
        self.edges.iter().map(|e| e.len()).max().unwrap_or(0)
    }

    /// Relabel nodes through `p`, carrying features and labels along. The
    /// hyperedge list keeps its input position order (edge `i` of the result
    /// is the relabeled edge `i` of the input), with each node list
    /// re-sorted; use [`Hypergraph::canonical`] for order-insensitive
    /// comparison.
    pub fn apply_permutation(&self, p: &Permutation) -> Result<Hypergraph> {
        if p.len() != self.num_nodes {
            return Err(Error::PermutationLength {
                expected: self.num_nodes,
                got: p.len(),
            });
        }
        let mut edges: Vec<Vec<usize>> = self
            .edges
            .iter()
            .map(|e| e.iter().map(|&v| p.apply(v)).collect())
            .collect();
        for e in &mut edges {
            e.sort_unstable();
        }
        let node_features = self.node_features.as_ref().map(|f| {
            let mut out = Features::zeros(self.num_nodes, f.cols);
            for v in 0..self.num_nodes {
                let dst = p.apply(v);
                out.data[dst * f.cols..(dst + 1) * f.cols].copy_from_slice(f.row(v));
            }
            out
        });
        let node_labels = self.node_labels.as_ref().map(|ls| {
            let mut out = vec![0; ls.len()];
            for (v, &l) in ls.iter().enumerate() {
                out[p.apply(v)] = l;
            }
            out
        });
        let splits = self.splits.as_ref().map(|s| Splits {
            train: s.train.iter().map(|&v| p.apply(v)).collect(),
            val: s.val.iter().map(|&v| p.apply(v)).collect(),
            test: s.test.iter().map(|&v| p.apply(v)).collect(),
        });
        Ok(Hypergraph {
            num_nodes: self.num_nodes,
            edges,
            node_features,
            edge_features: self.edge_features.clone(),
            node_labels,
            edge_labels: self.edge_labels.clone(),
            splits,
        })
    }

    /// Canonical form: edges sorted lexicographically, edge features and
    /// labels carried along. Node-side data is untouched.
    pub fn canonical(&self) -> Hypergraph {
        let mut perm: Vec<usize> = (0..self.edges.len()).collect();
        perm.sort_by(|&a, &b| self.edges[a].cmp(&self.edges[b]));
        let edges = perm.iter().map(|&i| self.edges[i].clone()).collect();
        let edge_features = self.edge_features.as_ref().map(|f| Features {
            cols: f.cols,
            data: perm.iter().flat_map(|&i| f.row(i).to_vec()).collect(),
        });
        let edge_labels = self
            .edge_labels
            .as_ref()
            .map(|ls| perm.iter().map(|&i| ls[i]).collect());
        Hypergraph {
            num_nodes: self.num_nodes,
            edges,
            node_features: self.node_features.clone(),
            edge_features,
            node_labels: self.node_labels.clone(),
            edge_labels,
            splits: self.splits.clone(),
        }
    }

    pub fn canonical_eq(&self, other: &Hypergraph) -> bool {
        self.canonical() == other.canonical()
    }
}

/// Number of distinct shared nodes between two hyperedges (both sorted).
pub fn overlap(e1: &[usize], e2: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < e1.len() && j < e2.len() {
        match e1[i].cmp(&e2[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Bijection on `[0, n)` stored as its image array.
#[derive(Clone, Debug, PartialEq)]
pub struct Permutation {
    image: Vec<usize>,
}

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Permutation> {
        let mut seen = vec![false; image.len()];
        for &v in &image {
            if v >= image.len() || seen[v] {
                return Err(Error::InvalidHypergraph(
                    "permutation image is not a bijection".into(),
                ));
            }
            seen[v] = true;
        }
        Ok(Permutation { image })
    }

    pub fn identity(n: usize) -> Permutation {
        Permutation {
            image: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    pub fn apply(&self, v: usize) -> usize {
        self.image[v]
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    /// `(self . other)(v) = self(other(v))`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation {
            image: other.image.iter().map(|&v| self.image[v]).collect(),
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.image.len()];
        for (v, &img) in self.image.iter().enumerate() {
            inv[img] = v;
        }
        Permutation { image: inv }
    }
}

/// Precomputed node/hyperedge adjacency driving sparse propagation.
#[derive(Clone, Debug)]
pub struct IncidenceIndex {
    /// Order of each hyperedge, by edge index.
    pub edge_orders: Vec<usize>,
    /// Flattened incidence pairs: `(pair_nodes[t], pair_edges[t])` is one
    /// node-in-edge membership, grouped by edge and ascending by node.
    pub pair_nodes: Vec<usize>,
    pub pair_edges: Vec<usize>,
    /// Incident edge indices per node, in edge-index order.
    pub node_incident_edges: Vec<Vec<usize>>,
    /// Edge indices grouped by order (Definition of the uniform sequence:
    /// the groups partition the edge set).
    pub order_groups: BTreeMap<usize, Vec<usize>>,
}

impl IncidenceIndex {
    pub fn num_pairs(&self) -> usize {
        self.pair_nodes.len()
    }
}

pub fn build_incidence(h: &Hypergraph) -> IncidenceIndex {
    let mut edge_orders = Vec::with_capacity(h.num_edges());
    let mut pair_nodes = Vec::new();
    let mut pair_edges = Vec::new();
    let mut node_incident_edges = vec![Vec::new(); h.num_nodes()];
    let mut order_groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ei, e) in h.edges().iter().enumerate() {
        edge_orders.push(e.len());
        order_groups.entry(e.len()).or_default().push(ei);
        for &v in e {
            pair_nodes.push(v);
            pair_edges.push(ei);
            node_incident_edges[v].push(ei);
        }
    }
    IncidenceIndex {
        edge_orders,
        pair_nodes,
        pair_edges,
        node_incident_edges,
        order_groups,
    }
}

// ---------------------------------------------------------------------------
// JSON format
//
// {"num_nodes": int, "hyperedges": [[int,...],...],
//  "node_features": [[float,...],...]?, "edge_features": ...?,
//  "node_labels": [int,...]?, "edge_labels": [int,...]?,
//  "splits": {"train":[...], "val":[...], "test":[...]}?}
//
// Floats go through serde_json's shortest round-trip decimal encoding.

#[derive(Serialize, Deserialize)]
struct HypergraphJson {
    num_nodes: usize,
    hyperedges: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    splits: Option<Splits>,
}

impl Hypergraph {
    pub fn to_json(&self) -> Result<String> {
        let j = HypergraphJson {
            num_nodes: self.num_nodes,
            hyperedges: self.edges.clone(),
            node_features: self.node_features.as_ref().map(|f| f.to_rows()),
            edge_features: self.edge_features.as_ref().map(|f| f.to_rows()),
            node_labels: self.node_labels.clone(),
            edge_labels: self.edge_labels.clone(),
            splits: self.splits.clone(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Hypergraph> {
        let j: HypergraphJson =
            serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        let mut h = Hypergraph::new(j.num_nodes, j.hyperedges)
            .map_err(|e| Error::Schema(e.to_string()))?;
        if let Some(f) = j.node_features {
            h = h
                .with_node_features(Features::from_rows(f)?)
                .map_err(|e| Error::Schema(e.to_string()))?;
        }
        if let Some(f) = j.edge_features {
            h = h
                .with_edge_features(Features::from_rows(f)?)
                .map_err(|e| Error::Schema(e.to_string()))?;
        }
        if let Some(ls) = j.node_labels {
            h = h
                .with_node_labels(ls)
                .map_err(|e| Error::Schema(e.to_string()))?;
        }
        if let Some(ls) = j.edge_labels {
            if ls.len() != h.num_edges() {
                return Err(Error::Schema(format!(
                    "{} edge labels for {} hyperedges",
                    ls.len(),
                    h.num_edges()
                )));
            }
            h.edge_labels = Some(ls);
        }
        if let Some(s) = j.splits {
            for &v in s.train.iter().chain(&s.val).chain(&s.test) {
                if v >= h.num_nodes() {
                    return Err(Error::Schema(format!("split index {v} out of range")));
                }
            }
            h.splits = Some(s);
        }
        Ok(h)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Hypergraph> {
        Hypergraph::from_json(&std::fs::read_to_string(path)?)
    }
}
