//! Synthetic hyperedge-order identification benchmark plus loading and
//! splitting for small transductive classification datasets.
//!
//! The synthetic task: wire random hyperedges, mark one uniformly at
//! random, set each node's input feature to 1.0 iff it belongs to the
//! marked hyperedge, and label a node positive iff it belongs to at least
//! one hyperedge whose order equals the marked hyperedge's order. Solving
//! it requires propagating the marked order globally while comparing it
//! against each hyperedge's own order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{Features, Hypergraph, Splits};
use crate::rng::Rng;

/// Generation parameters; defaults follow the benchmark protocol of
/// 100 train / 20 test graphs with 100 nodes and 10 hyperedges of orders
/// 2..=10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEdgeConfig {
    pub num_graphs_train: usize,
    pub num_graphs_test: usize,
    pub nodes_per_graph: usize,
    pub edges_per_graph: usize,
    pub train_orders: Vec<usize>,
    pub test_orders: Vec<usize>,
    pub seed: u64,
}

impl KEdgeConfig {
    pub fn seen(seed: u64) -> KEdgeConfig {
        KEdgeConfig {
            num_graphs_train: 100,
            num_graphs_test: 20,
            nodes_per_graph: 100,
            edges_per_graph: 10,
            train_orders: (2..=10).collect(),
            test_orders: (2..=10).collect(),
            seed,
        }
    }

    /// Train orders 2-4 and 8-10; test covers 2-10.
    pub fn interpolation(seed: u64) -> KEdgeConfig {
        KEdgeConfig {
            train_orders: vec![2, 3, 4, 8, 9, 10],
            ..KEdgeConfig::seen(seed)
        }
    }

    /// Train orders 2-7; test covers 2-10.
    pub fn extrapolation(seed: u64) -> KEdgeConfig {
        KEdgeConfig {
            train_orders: (2..=7).collect(),
            ..KEdgeConfig::seen(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for orders in [&self.train_orders, &self.test_orders] {
            if orders.is_empty() {
                return Err(Error::InvalidConfig("empty order set".into()));
            }
            if let Some(&bad) = orders.iter().find(|&&o| o < 2 || o > self.nodes_per_graph) {
                return Err(Error::InvalidConfig(format!(
                    "order {bad} outside 2..={}",
                    self.nodes_per_graph
                )));
            }
        }
        Ok(())
    }
}

/// One task instance: binary node features mark the chosen hyperedge,
/// binary labels mark nodes covered by any hyperedge of the marked order.
#[derive(Clone, Debug)]
pub struct KEdgeInstance {
    pub hypergraph: Hypergraph,
    pub marked_edge: usize,
}

impl KEdgeInstance {
    pub fn marked_order(&self) -> usize {
        self.hypergraph.edge(self.marked_edge).len()
    }

    /// Nodes of the marked hyperedge (feature exactly 1.0).
    pub fn marked_nodes(&self) -> Vec<usize> {
        self.hypergraph.edge(self.marked_edge).to_vec()
    }
}

fn generate_instance(cfg: &KEdgeConfig, orders: &[usize], rng: &mut Rng) -> KEdgeInstance {
    let n = cfg.nodes_per_graph;
    let mut edges = Vec::with_capacity(cfg.edges_per_graph);
    for _ in 0..cfg.edges_per_graph {
        let order = orders[rng.next_below(orders.len())];
        edges.push(rng.sample_distinct(n, order));
    }
    let marked_edge = rng.next_below(edges.len());
    let marked_order = edges[marked_edge].len();

    let mut labels = vec![0i64; n];
    for e in &edges {
        if e.len() == marked_order {
            for &v in e {
                labels[v] = 1;
            }
        }
    }
    let mut feats = vec![0.0f64; n];
    for &v in &edges[marked_edge] {
        feats[v] = 1.0;
    }
    let hypergraph = Hypergraph::new(n, edges)
        .expect("generated edges are valid")
        .with_node_features(Features {
            cols: 1,
            data: feats,
        })
        .expect("feature rows match")
        .with_node_labels(labels)
        .expect("label rows match");
    KEdgeInstance {
        hypergraph,
        marked_edge,
    }
}

/// Deterministic dataset generation: instance `i` (train graphs first,
/// then test graphs) uses the derived stream `Rng::derive(seed, i)`.
pub fn generate_kedge_dataset(
    cfg: &KEdgeConfig,
) -> Result<(Vec<KEdgeInstance>, Vec<KEdgeInstance>)> {
    cfg.validate()?;
    let train = (0..cfg.num_graphs_train)
        .map(|i| {
            let mut rng = Rng::derive(cfg.seed, i as u64);
            generate_instance(cfg, &cfg.train_orders, &mut rng)
        })
        .collect();
    let test = (0..cfg.num_graphs_test)
        .map(|j| {
            let mut rng = Rng::derive(cfg.seed, (cfg.num_graphs_train + j) as u64);
            generate_instance(cfg, &cfg.test_orders, &mut rng)
        })
        .collect();
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Dataset directories

#[derive(Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: KEdgeConfig,
    pub train: Vec<InstanceEntry>,
    pub test: Vec<InstanceEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct InstanceEntry {
    pub file: String,
    pub marked_edge: usize,
    pub marked_order: usize,
}

/// Write instances plus `manifest.json` into `dir`; returns the train and
/// test counts.
pub fn write_kedge_dataset(dir: &Path, cfg: &KEdgeConfig) -> Result<(usize, usize)> {
    let (train, test) = generate_kedge_dataset(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest {
        config: cfg.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, list, entries) in [
        ("train", &train, &mut manifest.train),
        ("test", &test, &mut manifest.test),
    ] {
        for (i, inst) in list.iter().enumerate() {
            let file = format!("{split}_{i:03}.json");
            inst.hypergraph.write_json(&dir.join(&file))?;
            entries.push(InstanceEntry {
                file,
                marked_edge: inst.marked_edge,
                marked_order: inst.marked_order(),
            });
        }
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok((train.len(), test.len()))
}

pub fn load_kedge_dataset(
    dir: &Path,
) -> Result<(Vec<KEdgeInstance>, Vec<KEdgeInstance>, KEdgeConfig)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Schema(format!("manifest.json: {e}")))?;
    let read = |entries: &[InstanceEntry]| -> Result<Vec<KEdgeInstance>> {
        entries
            .iter()
            .map(|e| {
                let hypergraph = Hypergraph::read_json(&dir.join(&e.file))?;
                if e.marked_edge >= hypergraph.num_edges() {
                    return Err(Error::Schema(format!(
                        "{}: marked edge {} out of range",
                        e.file, e.marked_edge
                    )));
                }
                Ok(KEdgeInstance {
                    hypergraph,
                    marked_edge: e.marked_edge,
                })
            })
            .collect()
    };
    Ok((
        read(&manifest.train)?,
        read(&manifest.test)?,
        manifest.config,
    ))
}

// ---------------------------------------------------------------------------
// Transductive classification

/// Load a node-classification hypergraph; node labels and features are
/// required.
pub fn load_classification_dataset(path: &Path) -> Result<Hypergraph> {
    let h = Hypergraph::read_json(path)?;
    let labels = h
        .node_labels
        .as_ref()
        .ok_or_else(|| Error::Schema("classification dataset needs node_labels".into()))?;
    if labels.len() != h.num_nodes() {
        return Err(Error::Schema(format!(
            "{} labels for {} nodes",
            labels.len(),
            h.num_nodes()
        )));
    }
    if h.node_features.is_none() {
        return Err(Error::Schema(
            "classification dataset needs node_features".into(),
        ));
    }
    Ok(h)
}

/// Random disjoint train/val/test cover of `[0, n)`. Sizes are the floors
/// of `ratio * n` with the remainder handed out by largest fractional
/// part (ties broken in train, val, test order).
pub fn split_transductive(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let rs = [ratios.0, ratios.1, ratios.2];
    if (rs.iter().sum::<f64>() - 1.0).abs() > 1e-9 || rs.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratios {rs:?} must be nonnegative and sum to 1"
        )));
    }
    let mut sizes: Vec<usize> = rs.iter().map(|r| (r * n as f64).floor() as usize).collect();
    let mut fracs: Vec<(usize, f64)> = rs
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r * n as f64 - sizes[i] as f64))
        .collect();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = n - sizes.iter().sum::<usize>();
    for (i, _) in fracs {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    let mut rng = Rng::derive(seed, 0x591);
    let perm = rng.permutation(n);
    let train = perm[..sizes[0]].to_vec();
    let val = perm[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = perm[sizes[0] + sizes[1]..].to_vec();
    Ok(Splits { train, val, test })
}

/// Synthetic stand-in with the shape of the small zoological dataset
/// (101 nodes, 43 hyperedges, 16 features, 7 classes): features are noisy
/// class prototypes and hyperedges group nodes sharing feature bits, so
/// transductive classification on it is learnable. A fixture for
/// exercising the classification path, not a replacement for real data.
pub fn synthetic_zoo_shaped(seed: u64) -> Hypergraph {
    let (n, m, d, classes) = (101usize, 43usize, 16usize, 7usize);
    let mut rng = Rng::derive(seed, 0x200);
    let labels: Vec<i64> = (0..n).map(|i| (i % classes) as i64).collect();
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..d)
                .map(|_| if rng.next_f64() < 0.5 { 0.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            prototypes[i % classes]
                .iter()
                .map(|&b| if rng.next_f64() < 0.05 { 1.0 - b } else { b })
                .collect()
        })
        .collect();
    // 21 class-aligned edges (attribute groups dominated by one class) and
    // 22 feature-bit groups, mirroring attribute-value hyperedges
    let mut edges: Vec<Vec<usize>> = Vec::with_capacity(m);
    for e in 0..21 {
        let class = e % classes;
        let members: Vec<usize> = (0..n)
            .filter(|&v| v % classes == class && rng.next_f64() < 0.8)
            .collect();
        edges.push(members);
    }
    while edges.len() < m {
        let bit = rng.next_below(d);
        let want = rng.next_below(2) as f64;
        let members: Vec<usize> = (0..n)
            .filter(|&v| rows[v][bit] == want && rng.next_f64() < 0.35)
            .collect();
        if members.len() >= 2 {
            edges.push(members);
        }
    }
    Hypergraph::new(n, edges)
        .unwrap()
        .with_node_features(Features::from_rows(rows).unwrap())
        .unwrap()
        .with_node_labels(labels)
        .unwrap()
}
