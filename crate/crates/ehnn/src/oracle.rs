//! Brute-force maximally expressive equivariant linear layers on dense
//! tensors at tiny n. These layers exist to certify the sparse path, not to
//! train: scale is hard-capped and every loop is written for obviousness,
//! not speed.
//!
//! The layer family, from most general to most reduced:
//! * [`full_layer_forward`] - one weight per equality pattern of the joint
//!   input/output multi-index, one bias per output pattern.
//! * [`symmetric_layer_forward`] - patterns coarsened by separate axis
//!   permutations of the input and output positions.
//! * [`uniform_layer_forward`] - inputs/outputs constrained to uniform
//!   hypergraph tensors: `1 + min(k, l)` weights and a single bias, keyed by
//!   the overlap between input and output index sets.
//! * [`sequence_layer_forward`] - all pairwise uniform layers between the
//!   tensors of an input and output sequence, with one merged bias per
//!   output order.
//!
//! The `tie_*` constructions build the parameter maps under which a more
//! general layer collapses onto a reduced one; the verification suites
//! compare both sides numerically.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hypergraph::{
    all_permutations, for_each_multi_index, has_repeat, pack, unique_sorted, DenseTensor,
    TensorSequence,
};
use crate::rng::Rng;

/// Hard caps: the oracles certify correctness at toy scale only.
pub const MAX_ORACLE_NODES: usize = 5;
pub const MAX_ORACLE_ORDER: usize = 3;
pub const MAX_ORACLE_CHANNELS: usize = 4;
const MAX_PATTERN_ORDER: usize = 6; // bell(6) = 203

pub fn check_oracle_scale(n: usize, order: usize, channels: usize) -> Result<()> {
    if n > MAX_ORACLE_NODES || order > MAX_ORACLE_ORDER || channels > MAX_ORACLE_CHANNELS {
        return Err(Error::OracleGuard(format!(
            "n={n} order={order} channels={channels} beyond oracle caps \
             ({MAX_ORACLE_NODES}/{MAX_ORACLE_ORDER}/{MAX_ORACLE_CHANNELS})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Equality patterns (set partitions of index positions)

/// Partition of multi-index positions into equality blocks, in canonical
/// restricted-growth form: `rgs[0] = 0` and each later symbol is at most one
/// above the running maximum. Two multi-indices belong to the same pattern
/// iff they have identical equality structure.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EqualityPattern {
    rgs: Vec<usize>,
}

impl EqualityPattern {
    pub fn order(&self) -> usize {
        self.rgs.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.rgs.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn rgs(&self) -> &[usize] {
        &self.rgs
    }

    /// Equality structure of a concrete multi-index, by first-occurrence
    /// relabeling.
    pub fn of_multi_index(idx: &[usize]) -> EqualityPattern {
        let mut seen: Vec<usize> = Vec::new();
        let rgs = idx
            .iter()
            .map(|&v| match seen.iter().position(|&s| s == v) {
                Some(b) => b,
                None => {
                    seen.push(v);
                    seen.len() - 1
                }
            })
            .collect();
        EqualityPattern { rgs }
    }

    /// A representative multi-index realizing this pattern (block id used
    /// as node id).
    pub fn representative(&self) -> Vec<usize> {
        self.rgs.clone()
    }

    /// Pattern of the position-permuted multi-index
    /// `(idx[perm[0]], ..., idx[perm[r-1]])`, re-canonicalized.
    fn permute_positions(&self, perm: &[usize]) -> EqualityPattern {
        let permuted: Vec<usize> = perm.iter().map(|&p| self.rgs[p]).collect();
        EqualityPattern::of_multi_index(&permuted)
    }
}

impl std::fmt::Display for EqualityPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let strs: Vec<String> = self.rgs.iter().map(|b| b.to_string()).collect();
        write!(f, "({})", strs.join(","))
    }
}

/// All equality patterns of order `r` in lexicographic restricted-growth
/// order; the count is the r-th Bell number.
pub fn enumerate_equality_patterns(r: usize) -> Result<Vec<EqualityPattern>> {
    if r > MAX_PATTERN_ORDER {
        return Err(Error::OracleGuard(format!(
            "pattern order {r} > {MAX_PATTERN_ORDER} (Bell blowup guard)"
        )));
    }
    if r == 0 {
        return Ok(vec![EqualityPattern { rgs: vec![] }]);
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; r];
    grow(&mut rgs, 1, 0, &mut out);
    Ok(out)
}

fn grow(rgs: &mut Vec<usize>, pos: usize, max_sym: usize, out: &mut Vec<EqualityPattern>) {
    if pos == rgs.len() {
        out.push(EqualityPattern { rgs: rgs.clone() });
        return;
    }
    for sym in 0..=max_sym + 1 {
        rgs[pos] = sym;
        grow(rgs, pos + 1, max_sym.max(sym), out);
    }
}

pub fn bell_number(r: usize) -> Result<usize> {
    Ok(enumerate_equality_patterns(r)?.len())
}

/// Canonicalization of patterns modulo separate axis permutations of the
/// first `k` and last `l` positions: maps each pattern to the
/// lexicographically smallest pattern in its orbit.
pub fn symmetric_class_map(k: usize, l: usize) -> Result<BTreeMap<Vec<usize>, EqualityPattern>> {
    let patterns = enumerate_equality_patterns(k + l)?;
    let perms_k = all_permutations(k);
    let perms_l = all_permutations(l);
    let mut map = BTreeMap::new();
    let mut pos_perm = vec![0usize; k + l];
    for p in &patterns {
        let mut best: Option<EqualityPattern> = None;
        for pk in &perms_k {
            for pl in &perms_l {
                pos_perm[..k].copy_from_slice(pk);
                for (slot, &v) in pos_perm[k..].iter_mut().zip(pl) {
                    *slot = k + v;
                }
                let candidate = p.permute_positions(&pos_perm);
                if best.as_ref().is_none_or(|b| candidate < *b) {
                    best = Some(candidate);
                }
            }
        }
        map.insert(p.rgs.clone(), best.unwrap());
    }
    Ok(map)
}

/// Distinct orbit representatives under the `S_k x S_l` axis action.
pub fn enumerate_symmetric_classes(k: usize, l: usize) -> Result<Vec<EqualityPattern>> {
    let map = symmetric_class_map(k, l)?;
    let mut reps: Vec<EqualityPattern> = map.into_values().collect();
    reps.sort();
    reps.dedup();
    Ok(reps)
}

/// For an order-(K+L) pattern: number of blocks touching the input
/// positions, blocks touching the output positions, and blocks touching
/// both. These are the unique-element counts (k, l) and the overlap of any
/// multi-index pair realizing the pattern.
pub fn class_triple(pattern: &EqualityPattern, num_in: usize) -> (usize, usize, usize) {
    let blocks = pattern.num_blocks();
    let mut in_blocks = vec![false; blocks];
    let mut out_blocks = vec![false; blocks];
    for (pos, &b) in pattern.rgs.iter().enumerate() {
        if pos < num_in {
            in_blocks[b] = true;
        } else {
            out_blocks[b] = true;
        }
    }
    let k = in_blocks.iter().filter(|&&x| x).count();
    let l = out_blocks.iter().filter(|&&x| x).count();
    let overlap = in_blocks
        .iter()
        .zip(&out_blocks)
        .filter(|(&a, &b)| a && b)
        .count();
    (k, l, overlap)
}

// ---------------------------------------------------------------------------
// Parameters

/// Small dense `d_in x d_out` weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.next_symmetric(1.0)).collect(),
        }
    }

    /// Small random integers; sums of products of integers stay exact in
    /// f64, which the bit-exact oracle equalities rely on.
    pub fn random_integer(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
        Mat {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| (rng.next_below(7) as f64) - 3.0)
                .collect(),
        }
    }

    /// `out += x @ M`
    pub fn apply_accumulate(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                for (o, &m) in out
                    .iter_mut()
                    .zip(&self.data[r * self.cols..(r + 1) * self.cols])
                {
                    *o += xv * m;
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Mat, factor: f64) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * factor;
        }
    }
}

/// One weight per equality pattern of order `k + l`, one bias per pattern
/// of order `l`.
#[derive(Clone, Debug)]
pub struct FullLayerParams {
    pub k: usize,
    pub l: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub weights: BTreeMap<Vec<usize>, Mat>,
    pub biases: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl FullLayerParams {
    pub fn random(k: usize, l: usize, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        let weights = enumerate_equality_patterns(k + l)?
            .into_iter()
            .map(|p| (p.rgs.clone(), Mat::random(d_in, d_out, rng)))
            .collect();
        let biases = enumerate_equality_patterns(l)?
            .into_iter()
            .map(|p| {
                let b = (0..d_out).map(|_| rng.next_symmetric(1.0)).collect();
                (p.rgs.clone(), b)
            })
            .collect();
        Ok(FullLayerParams {
            k,
            l,
            d_in,
            d_out,
            weights,
            biases,
        })
    }
}

/// Weights keyed by the orbit representatives of patterns under separate
/// input/output axis permutations.
#[derive(Clone, Debug)]
pub struct SymmetricLayerParams {
    pub k: usize,
    pub l: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub weights: BTreeMap<Vec<usize>, Mat>,
    pub biases: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl SymmetricLayerParams {
    pub fn random(k: usize, l: usize, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        let weights = enumerate_symmetric_classes(k, l)?
            .into_iter()
            .map(|p| (p.rgs.clone(), Mat::random(d_in, d_out, rng)))
            .collect();
        let biases = enumerate_symmetric_classes(0, l)?
            .into_iter()
            .map(|p| {
                let b = (0..d_out).map(|_| rng.next_symmetric(1.0)).collect();
                (p.rgs.clone(), b)
            })
            .collect();
        Ok(SymmetricLayerParams {
            k,
            l,
            d_in,
            d_out,
            weights,
            biases,
        })
    }
}

/// The reduced uniform-hypergraph layer: overlap weights `w_I` for
/// `I = 1..min(k, l)`, one global weight `w_0`, one bias.
#[derive(Clone, Debug)]
pub struct UniformLayerParams {
    pub k: usize,
    pub l: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// `w_local[I - 1]` applies to inputs overlapping the output in exactly
    /// `I` nodes.
    pub w_local: Vec<Mat>,
    /// Applied to every input (global pooling term).
    pub w_global: Mat,
    pub bias: Vec<f64>,
}

impl UniformLayerParams {
    pub fn random(k: usize, l: usize, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        UniformLayerParams {
            k,
            l,
            d_in,
            d_out,
            w_local: (1..=k.min(l))
                .map(|_| Mat::random(d_in, d_out, rng))
                .collect(),
            w_global: Mat::random(d_in, d_out, rng),
            bias: (0..d_out).map(|_| rng.next_symmetric(1.0)).collect(),
        }
    }
}

/// All pairwise uniform layers between an input sequence of max order K and
/// an output sequence of max order L: weights keyed by `(k, l, overlap)`
/// (overlap 0 is the global term), one merged bias per output order.
#[derive(Clone, Debug)]
pub struct SequenceLayerParams {
    pub max_in: usize,
    pub max_out: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub weights: BTreeMap<(usize, usize, usize), Mat>,
    pub biases: BTreeMap<usize, Vec<f64>>,
}

impl SequenceLayerParams {
    pub fn random(max_in: usize, max_out: usize, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let mut weights = BTreeMap::new();
        for k in 1..=max_in {
            for l in 1..=max_out {
                for overlap in 0..=k.min(l) {
                    weights.insert((k, l, overlap), Mat::random(d_in, d_out, rng));
                }
            }
        }
        let biases = (1..=max_out)
            .map(|l| (l, (0..d_out).map(|_| rng.next_symmetric(1.0)).collect()))
            .collect();
        SequenceLayerParams {
            max_in,
            max_out,
            d_in,
            d_out,
            weights,
            biases,
        }
    }

    pub fn random_integer(
        max_in: usize,
        max_out: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut weights = BTreeMap::new();
        for k in 1..=max_in {
            for l in 1..=max_out {
                for overlap in 0..=k.min(l) {
                    weights.insert((k, l, overlap), Mat::random_integer(d_in, d_out, rng));
                }
            }
        }
        let biases = (1..=max_out)
            .map(|l| {
                let b = (0..d_out).map(|_| (rng.next_below(7) as f64) - 3.0).collect();
                (l, b)
            })
            .collect();
        SequenceLayerParams {
            max_in,
            max_out,
            d_in,
            d_out,
            weights,
            biases,
        }
    }

    /// Total weight matrices: sum over (k, l) of `1 + min(k, l)`.
    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    pub fn num_biases(&self) -> usize {
        self.biases.len()
    }

    /// Effective per-overlap weight after expanding the global term:
    /// inputs overlapping in `I >= 1` nodes see `w_I + w_0`, disjoint
    /// inputs see `w_0` alone.
    fn effective(&self, k: usize, l: usize, overlap: usize) -> Mat {
        let w0 = &self.weights[&(k, l, 0)];
        if overlap == 0 {
            w0.clone()
        } else {
            let mut w = self.weights[&(k, l, overlap)].clone();
            w.add_scaled(w0, 1.0);
            w
        }
    }
}

// ---------------------------------------------------------------------------
// Forward evaluation

fn eval_pairwise(
    a: &DenseTensor,
    l: usize,
    d_out: usize,
    weight_of: &dyn Fn(&[usize]) -> Result<Mat>,
    bias_of: &dyn Fn(&[usize]) -> Result<Vec<f64>>,
) -> Result<DenseTensor> {
    let n = a.n;
    let mut out = DenseTensor::zeros(n, l, d_out)?;
    let mut joint = vec![0usize; a.order + l];
    let mut j_indices: Vec<Vec<usize>> = Vec::new();
    for_each_multi_index(n, l, |j| j_indices.push(j.to_vec()));
    let mut i_indices: Vec<Vec<usize>> = Vec::new();
    for_each_multi_index(n, a.order, |i| i_indices.push(i.to_vec()));
    for j in &j_indices {
        joint[a.order..].copy_from_slice(j);
        let mut acc = bias_of(j)?;
        for i in &i_indices {
            joint[..a.order].copy_from_slice(i);
            // classification is by direct equality-structure extraction
            let w = weight_of(&joint)?;
            w.apply_accumulate(a.get(i), &mut acc);
        }
        out.set(j, &acc);
    }
    Ok(out)
}

/// Exact evaluation of the maximally expressive equivariant linear layer:
/// every (input, output) index pair is classified by the equality pattern
/// of its joint multi-index and routed through that pattern's weight.
pub fn full_layer_forward(a: &DenseTensor, params: &FullLayerParams) -> Result<DenseTensor> {
    check_oracle_scale(a.n, a.order.max(params.l), a.channels.max(params.d_out))?;
    if a.order != params.k || a.channels != params.d_in {
        return Err(Error::ShapeMismatch {
            op: "full_layer_forward",
            detail: format!(
                "input order {} channels {} vs params ({}, {})",
                a.order, a.channels, params.k, params.d_in
            ),
        });
    }
    let weights = &params.weights;
    let biases = &params.biases;
    eval_pairwise(
        a,
        params.l,
        params.d_out,
        &|joint| {
            let p = EqualityPattern::of_multi_index(joint);
            weights
                .get(p.rgs())
                .cloned()
                .ok_or_else(|| Error::MissingPatternWeight(p.to_string()))
        },
        &|j| {
            let p = EqualityPattern::of_multi_index(j);
            biases
                .get(p.rgs())
                .cloned()
                .ok_or_else(|| Error::MissingPatternWeight(p.to_string()))
        },
    )
}

/// The full layer specialized to symmetric inputs/outputs: weights are
/// looked up through the coarse orbit classes instead of raw patterns.
pub fn symmetric_layer_forward(
    a: &DenseTensor,
    params: &SymmetricLayerParams,
) -> Result<DenseTensor> {
    check_oracle_scale(a.n, a.order.max(params.l), a.channels.max(params.d_out))?;
    if a.order != params.k || a.channels != params.d_in {
        return Err(Error::ShapeMismatch {
            op: "symmetric_layer_forward",
            detail: format!("input order {} vs k={}", a.order, params.k),
        });
    }
    if !a.is_symmetric() {
        return Err(Error::InvalidTensorSequence(
            "symmetric layer applied to an asymmetric tensor".into(),
        ));
    }
    let wmap = symmetric_class_map(params.k, params.l)?;
    let bmap = symmetric_class_map(0, params.l)?;
    let weights = &params.weights;
    let biases = &params.biases;
    eval_pairwise(
        a,
        params.l,
        params.d_out,
        &|joint| {
            let p = EqualityPattern::of_multi_index(joint);
            let rep = &wmap[p.rgs()];
            weights
                .get(rep.rgs())
                .cloned()
                .ok_or_else(|| Error::MissingPatternWeight(rep.to_string()))
        },
        &|j| {
            let p = EqualityPattern::of_multi_index(j);
            let rep = &bmap[p.rgs()];
            biases
                .get(rep.rgs())
                .cloned()
                .ok_or_else(|| Error::MissingPatternWeight(rep.to_string()))
        },
    )
}

/// Literal evaluation of the reduced uniform-hypergraph layer: the output
/// at an all-distinct index j sums overlap-weighted inputs, a global pool,
/// and the single bias; all other outputs are zero.
pub fn uniform_layer_forward(a: &DenseTensor, params: &UniformLayerParams) -> Result<DenseTensor> {
    check_oracle_scale(a.n, a.order.max(params.l), a.channels.max(params.d_out))?;
    if a.order != params.k || a.channels != params.d_in {
        return Err(Error::ShapeMismatch {
            op: "uniform_layer_forward",
            detail: format!("input order {} vs k={}", a.order, params.k),
        });
    }
    if !a.is_symmetric() || !a.has_distinct_support() {
        return Err(Error::InvalidTensorSequence(
            "uniform layer input must be a symmetric tensor with distinct-index support".into(),
        ));
    }
    let n = a.n;
    let l = params.l;
    let mut out = DenseTensor::zeros(n, l, params.d_out)?;

    // global pool is independent of the output index
    let mut global = vec![0.0; params.d_out];
    for_each_multi_index(n, a.order, |i| {
        params.w_global.apply_accumulate(a.get(i), &mut global);
    });

    let mut j_indices: Vec<Vec<usize>> = Vec::new();
    for_each_multi_index(n, l, |j| j_indices.push(j.to_vec()));
    for j in &j_indices {
        if has_repeat(j) {
            continue;
        }
        let j_set = unique_sorted(j);
        let mut acc = vec![0.0; params.d_out];
        for_each_multi_index(n, a.order, |i| {
            let overlap = unique_sorted(i)
                .iter()
                .filter(|v| j_set.binary_search(v).is_ok())
                .count();
            if overlap >= 1 && overlap <= params.w_local.len() {
                params.w_local[overlap - 1].apply_accumulate(a.get(i), &mut acc);
            }
        });
        for ((o, g), b) in acc.iter_mut().zip(&global).zip(&params.bias) {
            *o += g;
            *o += b;
        }
        out.set(j, &acc);
    }
    Ok(out)
}

/// All pairwise uniform layers between sequences: output order l collects
/// the (k -> l) contributions from every input order plus one merged bias.
pub fn sequence_layer_forward(
    seq: &TensorSequence,
    params: &SequenceLayerParams,
) -> Result<TensorSequence> {
    check_oracle_scale(
        seq.n,
        seq.max_order.max(params.max_out),
        seq.channels.max(params.d_out),
    )?;
    if seq.max_order != params.max_in || seq.channels != params.d_in {
        return Err(Error::ShapeMismatch {
            op: "sequence_layer_forward",
            detail: format!(
                "sequence (K={}, d={}) vs params (K={}, d={})",
                seq.max_order, seq.channels, params.max_in, params.d_in
            ),
        });
    }
    seq.validate()?;
    let mut out = TensorSequence::zeros(seq.n, params.max_out, params.d_out)?;
    for l in 1..=params.max_out {
        for k in 1..=params.max_in {
            let sub = UniformLayerParams {
                k,
                l,
                d_in: params.d_in,
                d_out: params.d_out,
                w_local: (1..=k.min(l))
                    .map(|i| params.weights[&(k, l, i)].clone())
                    .collect(),
                w_global: params.weights[&(k, l, 0)].clone(),
                bias: vec![0.0; params.d_out], // merged bias added once below
            };
            let part = uniform_layer_forward(seq.order(k), &sub)?;
            for (o, p) in out.order_mut(l).data.iter_mut().zip(&part.data) {
                *o += p;
            }
        }
        let bias = params.biases[&l].clone();
        let t = out.order_mut(l);
        let n = t.n;
        let mut updates: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for_each_multi_index(n, l, |j| {
            if !has_repeat(j) {
                updates.push((j.to_vec(), vec![]));
            }
        });
        for (j, _) in updates {
            let mut row = t.get(&j).to_vec();
            for (r, b) in row.iter_mut().zip(&bias) {
                *r += b;
            }
            t.set(&j, &row);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tie constructions

/// Full-layer parameters that reproduce a symmetric layer: every pattern in
/// an orbit receives the orbit's weight.
pub fn tie_full_from_symmetric(sym: &SymmetricLayerParams) -> Result<FullLayerParams> {
    let wmap = symmetric_class_map(sym.k, sym.l)?;
    let bmap = symmetric_class_map(0, sym.l)?;
    let weights = wmap
        .into_iter()
        .map(|(rgs, rep)| (rgs, sym.weights[rep.rgs()].clone()))
        .collect();
    let biases = bmap
        .into_iter()
        .map(|(rgs, rep)| (rgs, sym.biases[rep.rgs()].clone()))
        .collect();
    Ok(FullLayerParams {
        k: sym.k,
        l: sym.l,
        d_in: sym.d_in,
        d_out: sym.d_out,
        weights,
        biases,
    })
}

/// Full-layer parameters that reproduce a uniform layer on inputs with
/// distinct-index support, compared at all-distinct output positions.
///
/// Patterns that tie two positions within the input (or output) side never
/// touch the supported entries and get zero weight. Patterns with fully
/// distinct sides are keyed by their cross-overlap: `w_I + w_0` for overlap
/// `I >= 1` and `w_0` for disjoint pairs, matching the split of the global
/// pooling term out of the per-overlap sum.
pub fn tie_full_from_uniform(u: &UniformLayerParams) -> Result<FullLayerParams> {
    let patterns = enumerate_equality_patterns(u.k + u.l)?;
    let mut weights = BTreeMap::new();
    for p in patterns {
        let (pk, pl, overlap) = class_triple(&p, u.k);
        let w = if pk == u.k && pl == u.l {
            let mut w = u.w_global.clone();
            if overlap >= 1 {
                w.add_scaled(&u.w_local[overlap - 1], 1.0);
            }
            w
        } else {
            Mat::zeros(u.d_in, u.d_out)
        };
        weights.insert(p.rgs().to_vec(), w);
    }
    let mut biases = BTreeMap::new();
    for p in enumerate_equality_patterns(u.l)? {
        let b = if p.num_blocks() == u.l {
            u.bias.clone()
        } else {
            vec![0.0; u.d_out]
        };
        biases.insert(p.rgs().to_vec(), b);
    }
    Ok(FullLayerParams {
        k: u.k,
        l: u.l,
        d_in: u.d_in,
        d_out: u.d_out,
        weights,
        biases,
    })
}

/// Stirling number of the second kind S(n, k).
pub fn stirling2(n: usize, k: usize) -> usize {
    if k == 0 {
        return usize::from(n == 0);
    }
    if k > n {
        return 0;
    }
    let mut row = vec![0usize; k + 1];
    row[0] = 1;
    for _ in 1..=n {
        for j in (1..=k).rev() {
            row[j] = j * row[j] + row[j - 1];
        }
        row[0] = 0;
    }
    row[k]
}

/// Symmetric-layer parameters over packed order-K tensors that reproduce a
/// sequence layer. Each orbit class is keyed by its (k, l, overlap) triple;
/// the weight is the effective sequence weight divided by S(K, k), because
/// a hyperedge of order k is hit by `k! * S(K, k)` packed multi-indices but
/// only `k!` sequence multi-indices.
pub fn tie_symmetric_from_sequence(params: &SequenceLayerParams) -> Result<SymmetricLayerParams> {
    let (big_k, big_l) = (params.max_in, params.max_out);
    let mut weights = BTreeMap::new();
    for rep in enumerate_symmetric_classes(big_k, big_l)? {
        let (k, l, overlap) = class_triple(&rep, big_k);
        let mut w = params.effective(k, l, overlap);
        let scale = 1.0 / stirling2(big_k, k) as f64;
        for v in w.data.iter_mut() {
            *v *= scale;
        }
        weights.insert(rep.rgs().to_vec(), w);
    }
    let mut biases = BTreeMap::new();
    for rep in enumerate_symmetric_classes(0, big_l)? {
        biases.insert(rep.rgs().to_vec(), params.biases[&rep.num_blocks()].clone());
    }
    Ok(SymmetricLayerParams {
        k: big_k,
        l: big_l,
        d_in: params.d_in,
        d_out: params.d_out,
        weights,
        biases,
    })
}

/// Max abs difference restricted to all-distinct output positions (the
/// support shared by the reduced layers).
pub fn max_abs_diff_on_distinct_support(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let mut worst: f64 = 0.0;
    for_each_multi_index(a.n, a.order, |idx| {
        if !has_repeat(idx) {
            for (x, y) in a.get(idx).iter().zip(b.get(idx)) {
                worst = worst.max((x - y).abs());
            }
        }
    });
    worst
}

/// Evaluate the sequence layer both directly and through the packed
/// order-K route (pack input, run the tied symmetric layer) and return the
/// max abs deviation between the two.
pub fn packed_route_deviation(seq: &TensorSequence, params: &SequenceLayerParams) -> Result<f64> {
    let packed_in = pack(seq)?;
    let tied = tie_symmetric_from_sequence(params)?;
    let via_packed = symmetric_layer_forward(&packed_in, &tied)?;
    let direct = sequence_layer_forward(seq, params)?;
    let packed_direct = pack(&direct)?;
    Ok(via_packed.max_abs_diff(&packed_direct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Permutation;

    #[test]
    fn bell_counts() {
        let counts: Vec<usize> = (1..=5).map(|r| bell_number(r).unwrap()).collect();
        assert_eq!(counts, vec![1, 2, 5, 15, 52]);
        assert_eq!(bell_number(6).unwrap(), 203);
        assert!(bell_number(7).is_err(), "guard against blowup");
    }

    #[test]
    fn order_two_patterns_are_diagonal_and_off_diagonal() {
        let ps = enumerate_equality_patterns(2).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].rgs(), &[0, 0]); // i = j
        assert_eq!(ps[1].rgs(), &[0, 1]); // i != j
    }

    #[test]
    fn pattern_extraction_examples() {
        assert_eq!(EqualityPattern::of_multi_index(&[4, 4, 7]).rgs(), &[0, 0, 1]);
        assert_eq!(
            EqualityPattern::of_multi_index(&[2, 5, 2, 9]).rgs(),
            &[0, 1, 0, 2]
        );
    }

    #[test]
    fn symmetric_classes_1_1_match_full() {
        assert_eq!(enumerate_symmetric_classes(1, 1).unwrap().len(), 2);
    }

    #[test]
    fn symmetric_classes_2_2_are_nine() {
        // orbit count of the 15 order-4 partitions under S_2 x S_2, derived
        // by enumerating the axis action
        let classes = enumerate_symmetric_classes(2, 2).unwrap();
        assert_eq!(classes.len(), 9);
        assert!(classes.len() < 15);
    }

    #[test]
    fn classes_biject_with_order_triples_at_2_2() {
        let mut triples: Vec<(usize, usize, usize)> = enumerate_symmetric_classes(2, 2)
            .unwrap()
            .iter()
            .map(|c| class_triple(c, 2))
            .collect();
        triples.sort_unstable();
        let mut expected = vec![];
        for k in 1..=2usize {
            for l in 1..=2usize {
                for i in 0..=k.min(l) {
                    expected.push((k, l, i));
                }
            }
        }
        expected.sort_unstable();
        assert_eq!(triples, expected);
    }

    #[test]
    fn stirling_numbers() {
        assert_eq!(stirling2(2, 1), 1);
        assert_eq!(stirling2(2, 2), 1);
        assert_eq!(stirling2(3, 2), 3);
        assert_eq!(stirling2(4, 2), 7);
        assert_eq!(stirling2(4, 3), 6);
    }

    fn first_order_params(w_diag: f64, w_off: f64, bias: f64) -> FullLayerParams {
        let mut weights = BTreeMap::new();
        weights.insert(
            vec![0, 0],
            Mat {
                rows: 1,
                cols: 1,
                data: vec![w_diag],
            },
        );
        weights.insert(
            vec![0, 1],
            Mat {
                rows: 1,
                cols: 1,
                data: vec![w_off],
            },
        );
        let mut biases = BTreeMap::new();
        biases.insert(vec![0], vec![bias]);
        FullLayerParams {
            k: 1,
            l: 1,
            d_in: 1,
            d_out: 1,
            weights,
            biases,
        }
    }

    #[test]
    fn full_layer_identity_component() {
        let a = DenseTensor {
            n: 2,
            order: 1,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        let out = full_layer_forward(&a, &first_order_params(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out.data, vec![1.0, 2.0]);
        let swapped = full_layer_forward(&a, &first_order_params(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(swapped.data, vec![2.0, 1.0]);
    }

    #[test]
    fn full_layer_missing_weight_errors() {
        let mut p = first_order_params(1.0, 0.0, 0.0);
        p.weights.remove(&vec![0, 1]);
        let a = DenseTensor {
            n: 2,
            order: 1,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        assert!(matches!(
            full_layer_forward(&a, &p),
            Err(Error::MissingPatternWeight(_))
        ));
    }

    fn random_integer_tensor(n: usize, order: usize, channels: usize, rng: &mut Rng) -> DenseTensor {
        let mut t = DenseTensor::zeros(n, order, channels).unwrap();
        for v in t.data.iter_mut() {
            *v = (rng.next_below(9) as f64) - 4.0;
        }
        t
    }

    fn random_integer_full_params(k: usize, l: usize, d: usize, rng: &mut Rng) -> FullLayerParams {
        let mut p = FullLayerParams::random(k, l, d, d, rng).unwrap();
        for w in p.weights.values_mut() {
            *w = Mat::random_integer(d, d, rng);
        }
        for b in p.biases.values_mut() {
            for v in b.iter_mut() {
                *v = (rng.next_below(5) as f64) - 2.0;
            }
        }
        p
    }

    #[test]
    fn full_layer_is_equivariant_exactly() {
        // integer-valued tensors keep every f64 sum exact, so the defining
        // property can be asserted bitwise
        let mut rng = Rng::new(404);
        for _ in 0..10 {
            let (n, k, l) = (3, 2, 2);
            let a = random_integer_tensor(n, k, 1, &mut rng);
            let params = random_integer_full_params(k, l, 1, &mut rng);
            let p = Permutation::new(rng.permutation(n)).unwrap();
            let lhs = full_layer_forward(&a.permute_nodes(&p), &params).unwrap();
            let rhs = full_layer_forward(&a, &params).unwrap().permute_nodes(&p);
            assert_eq!(lhs.data, rhs.data);
        }
    }

    #[test]
    fn symmetric_layer_rejects_asymmetric_input() {
        let mut a = DenseTensor::zeros(2, 2, 1).unwrap();
        a.set(&[0, 1], &[1.0]);
        let mut rng = Rng::new(1);
        let params = SymmetricLayerParams::random(2, 2, 1, 1, &mut rng).unwrap();
        assert!(symmetric_layer_forward(&a, &params).is_err());
    }

    fn symmetrize(t: &mut DenseTensor) {
        let perms = all_permutations(t.order);
        let mut acc = DenseTensor::zeros(t.n, t.order, t.channels).unwrap();
        let mut permuted = vec![0usize; t.order];
        let snapshot = t.clone();
        for_each_multi_index(t.n, t.order, |idx| {
            for p in &perms {
                for (slot, &pos) in permuted.iter_mut().zip(p) {
                    *slot = idx[pos];
                }
                let v = snapshot.get(&permuted).to_vec();
                acc.add_assign(idx, &v);
            }
        });
        t.data = acc.data;
    }

    #[test]
    fn lemma_tying_full_equals_symmetric_bitwise() {
        // identical loop structure plus tied weight values gives max abs
        // diff of exactly 0 on random symmetric inputs
        let mut rng = Rng::new(2121);
        for &(k, l) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
            for _ in 0..5 {
                let n = 3;
                let sym = SymmetricLayerParams::random(k, l, 2, 2, &mut rng).unwrap();
                let full = tie_full_from_symmetric(&sym).unwrap();
                let mut a = DenseTensor::zeros(n, k, 2).unwrap();
                for v in a.data.iter_mut() {
                    *v = rng.next_symmetric(1.0);
                }
                symmetrize(&mut a);
                let via_full = full_layer_forward(&a, &full).unwrap();
                let via_sym = symmetric_layer_forward(&a, &sym).unwrap();
                assert_eq!(via_full.data, via_sym.data);
            }
        }
    }

    fn random_uniform_tensor(n: usize, k: usize, d: usize, rng: &mut Rng) -> DenseTensor {
        // distinct-support symmetric tensor: random features on a few
        // hyperedges, mirrored over all orderings
        let mut t = DenseTensor::zeros(n, k, d).unwrap();
        let edges = 2 + rng.next_below(2);
        for _ in 0..edges {
            let e = rng.sample_distinct(n, k);
            let feat: Vec<f64> = (0..d).map(|_| rng.next_symmetric(1.0)).collect();
            let mut idx = vec![0usize; k];
            for p in all_permutations(k) {
                for (slot, &pos) in idx.iter_mut().zip(&p) {
                    *slot = e[pos];
                }
                t.set(&idx, &feat);
            }
        }
        t
    }

    #[test]
    fn uniform_layer_first_order_example() {
        // k=l=1, n=2, A=[1,0], w_1=1, w_0=1, b=0: direct evaluation gives [2,1]
        let a = DenseTensor {
            n: 2,
            order: 1,
            channels: 1,
            data: vec![1.0, 0.0],
        };
        let params = UniformLayerParams {
            k: 1,
            l: 1,
            d_in: 1,
            d_out: 1,
            w_local: vec![Mat {
                rows: 1,
                cols: 1,
                data: vec![1.0],
            }],
            w_global: Mat {
                rows: 1,
                cols: 1,
                data: vec![1.0],
            },
            bias: vec![0.0],
        };
        let out = uniform_layer_forward(&a, &params).unwrap();
        assert_eq!(out.data, vec![2.0, 1.0]);
    }

    #[test]
    fn uniform_layer_pooling_only() {
        let mut rng = Rng::new(33);
        let a = random_uniform_tensor(4, 2, 1, &mut rng);
        let params = UniformLayerParams {
            k: 2,
            l: 2,
            d_in: 1,
            d_out: 1,
            w_local: vec![Mat::zeros(1, 1), Mat::zeros(1, 1)],
            w_global: Mat {
                rows: 1,
                cols: 1,
                data: vec![1.0],
            },
            bias: vec![0.0],
        };
        let out = uniform_layer_forward(&a, &params).unwrap();
        let total: f64 = a.data.iter().sum();
        for_each_multi_index(4, 2, |j| {
            if has_repeat(j) {
                assert_eq!(out.get(j), &[0.0]);
            } else {
                assert!((out.get(j)[0] - total).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn uniform_layer_rejects_non_lemma_support() {
        let mut a = DenseTensor::zeros(3, 2, 1).unwrap();
        a.set(&[1, 1], &[2.0]); // diagonal entry
        let mut rng = Rng::new(1);
        let params = UniformLayerParams::random(2, 2, 1, 1, &mut rng);
        assert!(uniform_layer_forward(&a, &params).is_err());
    }

    #[test]
    fn prop_tying_full_equals_uniform() {
        let mut rng = Rng::new(9000);
        for &(k, l) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2), (2, 3), (3, 2)] {
            for _ in 0..4 {
                let n = 4;
                let params = UniformLayerParams::random(k, l, 2, 2, &mut rng);
                let tied = tie_full_from_uniform(&params).unwrap();
                let a = random_uniform_tensor(n, k, 2, &mut rng);
                let via_full = full_layer_forward(&a, &tied).unwrap();
                let via_uniform = uniform_layer_forward(&a, &params).unwrap();
                let diff = max_abs_diff_on_distinct_support(&via_full, &via_uniform);
                assert!(diff <= 1e-9, "k={k} l={l}: deviation {diff}");
            }
        }
    }

    #[test]
    fn sequence_layer_weight_and_bias_counts() {
        let mut rng = Rng::new(2);
        let p = SequenceLayerParams::random(2, 2, 1, 1, &mut rng);
        assert_eq!(p.num_weights(), 9); // sum over k,l of 1 + min(k, l)
        assert_eq!(p.num_biases(), 2);
        let p32 = SequenceLayerParams::random(3, 2, 1, 1, &mut rng);
        assert_eq!(p32.num_weights(), 14);
    }

    #[test]
    fn sequence_layer_single_order_reduces_to_uniform() {
        let mut rng = Rng::new(7);
        let seqp = SequenceLayerParams::random(1, 1, 2, 2, &mut rng);
        let u = UniformLayerParams {
            k: 1,
            l: 1,
            d_in: 2,
            d_out: 2,
            w_local: vec![seqp.weights[&(1, 1, 1)].clone()],
            w_global: seqp.weights[&(1, 1, 0)].clone(),
            bias: seqp.biases[&1].clone(),
        };
        let mut seq = TensorSequence::zeros(3, 1, 2).unwrap();
        for v in seq.order_mut(1).data.iter_mut() {
            *v = rng.next_symmetric(1.0);
        }
        let via_seq = sequence_layer_forward(&seq, &seqp).unwrap();
        let via_uniform = uniform_layer_forward(seq.order(1), &u).unwrap();
        assert_eq!(via_seq.order(1).data, via_uniform.data);
    }

    #[test]
    fn sequence_layer_is_equivariant_exactly() {
        let mut rng = Rng::new(64);
        for _ in 0..10 {
            let n = 4;
            let params = SequenceLayerParams::random_integer(2, 2, 1, 1, &mut rng);
            let mut seq = TensorSequence::zeros(n, 2, 1).unwrap();
            for v in seq.order_mut(1).data.iter_mut() {
                *v = (rng.next_below(9) as f64) - 4.0;
            }
            let t2 = random_uniform_tensor(n, 2, 1, &mut rng);
            seq.order_mut(2).data = t2.data.iter().map(|v| v.round()).collect();
            let p = Permutation::new(rng.permutation(n)).unwrap();
            let lhs = sequence_layer_forward(&seq.permute_nodes(&p), &params).unwrap();
            let rhs = sequence_layer_forward(&seq, &params)
                .unwrap()
                .permute_nodes(&p);
            assert_eq!(lhs.max_abs_diff(&rhs), 0.0);
        }
    }

    #[test]
    fn packed_route_matches_sequence_route_exactly_with_integer_weights() {
        // the packed order-K tensor and the tied symmetric layer replay the
        // sequence layer; integer draws keep both routes exact
        let mut rng = Rng::new(11188);
        for _ in 0..10 {
            let n = 4;
            let params = SequenceLayerParams::random_integer(2, 2, 1, 1, &mut rng);
            let mut seq = TensorSequence::zeros(n, 2, 1).unwrap();
            for v in seq.order_mut(1).data.iter_mut() {
                *v = (rng.next_below(9) as f64) - 4.0;
            }
            let t2 = random_uniform_tensor(n, 2, 1, &mut rng);
            seq.order_mut(2).data = t2.data.iter().map(|v| v.round()).collect();
            let dev = packed_route_deviation(&seq, &params).unwrap();
            assert_eq!(dev, 0.0);
        }
    }

    #[test]
    fn oracle_guard_rejects_large_inputs() {
        assert!(check_oracle_scale(6, 2, 1).is_err());
        assert!(check_oracle_scale(4, 4, 1).is_err());
        assert!(check_oracle_scale(4, 2, 5).is_err());
    }
}
