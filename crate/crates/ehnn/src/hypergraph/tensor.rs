//! Dense symmetric tensor sequences equivalent to sparse hypergraphs, plus
//! the packed single-tensor form. Oracle-side representation only: sizes are
//! guarded so nothing here ever runs at training scale.

use super::{Features, Hypergraph, Permutation};
use crate::error::{Error, Result};

/// Hard cap on dense materialization: n^order * channels elements.
const SIZE_GUARD: usize = 10_000_000;

fn guarded_len(n: usize, order: usize, channels: usize) -> Result<usize> {
    let mut len = channels.max(1);
    for _ in 0..order {
        len = len
            .checked_mul(n)
            .filter(|&l| l <= SIZE_GUARD)
            .ok_or_else(|| {
                Error::OracleGuard(format!(
                    "n={n} order={order} channels={channels} exceeds {SIZE_GUARD} elements"
                ))
            })?;
    }
    if channels == 0 {
        return Ok(0);
    }
    Ok(len)
}

/// Order-`order` tensor over `n` nodes with a trailing channel axis,
/// stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub n: usize,
    pub order: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(n: usize, order: usize, channels: usize) -> Result<DenseTensor> {
        let len = guarded_len(n, order, channels)?;
        Ok(DenseTensor {
            n,
            order,
            channels,
            data: vec![0.0; len],
        })
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        let mut at = 0;
        for &i in idx {
            at = at * self.n + i;
        }
        at * self.channels
    }

    pub fn get(&self, idx: &[usize]) -> &[f64] {
        let at = self.flat(idx);
        &self.data[at..at + self.channels]
    }

    pub fn set(&mut self, idx: &[usize], values: &[f64]) {
        let at = self.flat(idx);
        self.data[at..at + self.channels].copy_from_slice(values);
    }

    pub fn add_assign(&mut self, idx: &[usize], values: &[f64]) {
        let at = self.flat(idx);
        for (slot, v) in self.data[at..at + self.channels].iter_mut().zip(values) {
            *slot += v;
        }
    }

    /// Invariant under every axis permutation.
    pub fn is_symmetric(&self) -> bool {
        let mut ok = true;
        for_each_multi_index(self.n, self.order, |idx| {
            if !ok {
                return;
            }
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            if self.get(idx) != self.get(&sorted) {
                ok = false;
            }
        });
        ok
    }

    /// Nonzero entries only at multi-indices whose elements are all
    /// distinct (the support of a uniform hypergraph tensor).
    pub fn has_distinct_support(&self) -> bool {
        let mut ok = true;
        for_each_multi_index(self.n, self.order, |idx| {
            if ok && has_repeat(idx) && self.get(idx).iter().any(|&v| v != 0.0) {
                ok = false;
            }
        });
        ok
    }

    /// Node permutation action `(p . A)_i = A_{p^-1(i)}`.
    pub fn permute_nodes(&self, p: &Permutation) -> DenseTensor {
        let inv = p.inverse();
        let mut out = DenseTensor {
            n: self.n,
            order: self.order,
            channels: self.channels,
            data: vec![0.0; self.data.len()],
        };
        let mut src = vec![0usize; self.order];
        for_each_multi_index(self.n, self.order, |idx| {
            for (s, &i) in src.iter_mut().zip(idx) {
                *s = inv.apply(i);
            }
            let at = out.flat(idx);
            let from = self.flat(&src);
            out.data[at..at + self.channels]
                .copy_from_slice(&self.data[from..from + self.channels]);
        });
        out
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// How node and hyperedge features share the channel axis of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelLayout {
    /// Node and edge features have the same width and share all channels.
    Shared,
    /// Node features occupy the first `d_v` channels, edge features (or a
    /// constant 1.0 indicator when the hypergraph carries none) the last
    /// `d_e`; the complement is zero-filled.
    Split {
        d_v: usize,
        d_e: usize,
        edge_indicator: bool,
    },
}

/// Sequence of symmetric tensors `(A^(1), ..., A^(K))` representing a
/// hypergraph; order-k hyperedge features live in the order-k tensor and
/// node features in the first-order tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSequence {
    pub n: usize,
    pub max_order: usize,
    pub channels: usize,
    pub layout: ChannelLayout,
    /// `tensors[k - 1]` has order `k`.
    pub tensors: Vec<DenseTensor>,
}

impl TensorSequence {
    pub fn zeros(n: usize, max_order: usize, channels: usize) -> Result<TensorSequence> {
        let tensors = (1..=max_order)
            .map(|k| DenseTensor::zeros(n, k, channels))
            .collect::<Result<_>>()?;
        Ok(TensorSequence {
            n,
            max_order,
            channels,
            layout: ChannelLayout::Shared,
            tensors,
        })
    }

    pub fn order(&self, k: usize) -> &DenseTensor {
        &self.tensors[k - 1]
    }

    pub fn order_mut(&mut self, k: usize) -> &mut DenseTensor {
        &mut self.tensors[k - 1]
    }

    /// Joint node-permutation action on every tensor.
    pub fn permute_nodes(&self, p: &Permutation) -> TensorSequence {
        TensorSequence {
            n: self.n,
            max_order: self.max_order,
            channels: self.channels,
            layout: self.layout,
            tensors: self.tensors.iter().map(|t| t.permute_nodes(p)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &TensorSequence) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tensors {
            if !t.is_symmetric() {
                return Err(Error::InvalidTensorSequence(format!(
                    "order-{} tensor is not symmetric",
                    t.order
                )));
            }
            if !t.has_distinct_support() {
                return Err(Error::InvalidTensorSequence(format!(
                    "order-{} tensor has a nonzero entry at a repeated-index position",
                    t.order
                )));
            }
        }
        Ok(())
    }
}

/// Iterate all multi-indices of `[n]^order` in row-major order.
pub fn for_each_multi_index(n: usize, order: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; order];
    if order == 0 {
        f(&idx);
        return;
    }
    if n == 0 {
        return;
    }
    loop {
        f(&idx);
        let mut pos = order;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub fn has_repeat(idx: &[usize]) -> bool {
    for a in 1..idx.len() {
        if idx[..a].contains(&idx[a]) {
            return true;
        }
    }
    false
}

pub fn unique_sorted(idx: &[usize]) -> Vec<usize> {
    let mut u = idx.to_vec();
    u.sort_unstable();
    u.dedup();
    u
}

/// All permutations of `[0, k)` in a deterministic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    heap_permute(&mut cur, k, &mut out);
    out
}

fn heap_permute(cur: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(cur.clone());
        return;
    }
    for i in 0..k {
        heap_permute(cur, k - 1, out);
        if k % 2 == 0 {
            cur.swap(i, k - 1);
        } else {
            cur.swap(0, k - 1);
        }
    }
}

impl Hypergraph {
    /// Dense tensor-sequence representation with max order `max_order`.
    ///
    /// Every ordering of each hyperedge's indices receives the edge's
    /// feature row (the tensor genuinely contains k! copies of it); node
    /// features populate the first-order tensor. Duplicate hyperedges
    /// cannot be represented densely and are rejected.
    pub fn to_tensor_sequence(&self, max_order: usize) -> Result<TensorSequence> {
        for e in self.edges() {
            if e.len() > max_order {
                return Err(Error::OrderExceedsMax {
                    order: e.len(),
                    max_order,
                });
            }
        }
        let mut sorted_edges: Vec<&Vec<usize>> = self.edges().iter().collect();
        sorted_edges.sort();
        if sorted_edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTensorSequence(
                "duplicate hyperedges have no dense tensor representation".into(),
            ));
        }

        let d_v = self.node_features.as_ref().map_or(0, |f| f.cols);
        let (d_e, indicator) = match (&self.edge_features, self.num_edges()) {
            (Some(f), _) => (f.cols, false),
            (None, 0) => (0, false),
            (None, _) => (1, true),
        };
        let has_singleton = self.edges().iter().any(|e| e.len() == 1);
        let shared = d_v > 0 && d_e > 0 && !indicator && d_v == d_e && !has_singleton;
        let (channels, layout, edge_offset) = if shared {
            (d_v, ChannelLayout::Shared, 0)
        } else {
            (
                d_v + d_e,
                ChannelLayout::Split {
                    d_v,
                    d_e,
                    edge_indicator: indicator,
                },
                d_v,
            )
        };

        let mut seq = TensorSequence::zeros(self.num_nodes(), max_order, channels)?;
        seq.layout = layout;

        if let Some(f) = &self.node_features {
            for v in 0..self.num_nodes() {
                let at = v * channels;
                seq.order_mut(1).data[at..at + d_v].copy_from_slice(f.row(v));
            }
        }
        for (ei, e) in self.edges().iter().enumerate() {
            let k = e.len();
            let feature: Vec<f64> = if indicator {
                vec![1.0]
            } else {
                self.edge_features.as_ref().unwrap().row(ei).to_vec()
            };
            let mut idx = vec![0usize; k];
            for perm in all_permutations(k) {
                for (slot, &pos) in idx.iter_mut().zip(&perm) {
                    *slot = e[pos];
                }
                let t = seq.order_mut(k);
                let at = t.flat(&idx) + edge_offset;
                t.data[at..at + feature.len()].copy_from_slice(&feature);
            }
        }
        Ok(seq)
    }
}

/// Retrieve the hypergraph encoded by a valid tensor sequence; inverse of
/// [`Hypergraph::to_tensor_sequence`] up to canonical edge ordering.
pub fn from_tensor_sequence(seq: &TensorSequence) -> Result<Hypergraph> {
    seq.validate()?;
    let (d_v, d_e, indicator, edge_offset) = match seq.layout {
        ChannelLayout::Shared => (seq.channels, seq.channels, false, 0),
        ChannelLayout::Split {
            d_v,
            d_e,
            edge_indicator,
        } => (d_v, d_e, edge_indicator, d_v),
    };

    let mut edges = Vec::new();
    let mut edge_feature_rows = Vec::new();
    for k in 1..=seq.max_order {
        if k == 1 && matches!(seq.layout, ChannelLayout::Shared) {
            // first-order channels are node features by construction
            continue;
        }
        let t = seq.order(k);
        for_each_multi_index(seq.n, k, |idx| {
            if !idx.windows(2).all(|w| w[0] < w[1]) {
                return; // one canonical (ascending) representative per set
            }
            let entry = t.get(idx);
            let edge_part = &entry[edge_offset..edge_offset + d_e.min(entry.len() - edge_offset)];
            if edge_part.iter().any(|&v| v != 0.0) {
                edges.push(idx.to_vec());
                edge_feature_rows.push(edge_part.to_vec());
            }
        });
    }

    let mut h = Hypergraph::new(seq.n, edges)?;
    if d_v > 0 {
        let t1 = seq.order(1);
        let rows: Vec<Vec<f64>> = (0..seq.n)
            .map(|v| t1.get(&[v])[..d_v].to_vec())
            .collect();
        h = h.with_node_features(Features::from_rows(rows)?)?;
    }
    if !indicator && d_e > 0 && !edge_feature_rows.is_empty() {
        h = h.with_edge_features(Features::from_rows(edge_feature_rows)?)?;
    }
    Ok(h)
}

/// Pack a tensor sequence into the equivalent single symmetric order-K
/// tensor: the entry at a multi-index with `k` unique elements is the
/// order-k tensor's entry at that unique set.
pub fn pack(seq: &TensorSequence) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(seq.n, seq.max_order, seq.channels)?;
    for_each_multi_index(seq.n, seq.max_order, |idx| {
        let u = unique_sorted(idx);
        let src = seq.order(u.len()).get(&u).to_vec();
        out.set(idx, &src);
    });
    Ok(out)
}

/// Invert [`pack`] by grouping multi-indices by unique-element count.
pub fn unpack(packed: &DenseTensor, layout: ChannelLayout) -> Result<TensorSequence> {
    let (n, max_order) = (packed.n, packed.order);
    let mut seq = TensorSequence::zeros(n, max_order, packed.channels)?;
    seq.layout = layout;
    for k in 1..=max_order {
        let mut extended = vec![0usize; max_order];
        let mut entries: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for_each_multi_index(n, k, |idx| {
            if has_repeat(idx) {
                return;
            }
            extended[..k].copy_from_slice(idx);
            for slot in extended[k..].iter_mut() {
                *slot = idx[0];
            }
            entries.push((idx.to_vec(), packed.get(&extended).to_vec()));
        });
        let t = seq.order_mut(k);
        for (idx, vals) in entries {
            t.set(&idx, &vals);
        }
    }
    // the packed form must be constant across indices with equal unique sets
    let mut consistent = true;
    for_each_multi_index(n, max_order, |idx| {
        if consistent {
            let u = unique_sorted(idx);
            if packed.get(idx) != seq.order(u.len()).get(&u) {
                consistent = false;
            }
        }
    });
    if !consistent {
        return Err(Error::InvalidTensorSequence(
            "packed tensor varies across multi-indices with equal unique-element sets".into(),
        ));
    }
    Ok(seq)
}
