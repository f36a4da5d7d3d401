//! Practical sparse layers operating on hypergraphs through node/hyperedge
//! incidence: the naive hypernetwork layer, the three-MLP realization, the
//! attention realization, and the two message-passing baselines they
//! subsume. All propagation is node<->hyperedge, so the overlap between a
//! source and a target is 0 (global pooling) or 1 (incidence); general
//! overlaps live in the dense oracle only.

mod model;
mod variants;

pub use model::{build_model, ArchSpec, Checkpoint, Model, Variant};
pub use variants::{
    allset_attention, AllDeepSetsLayer, AllSetTransformerLayer, EhnnMlpLayer, EhnnNaiveLayer,
    EhnnTransformerLayer, PropLayer, WeightHypernet,
};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::array::{DiffArray, Gradients, Tape};
use crate::error::{Error, Result};
use crate::hypergraph::IncidenceIndex;
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Order embedding

/// Sinusoidal embedding of an integer order:
/// `emb[2i] = sin(p / 10000^(2i/d))`, `emb[2i+1] = cos(p / 10000^(2i/d))`.
/// Deterministic, defined for any order, which is what lets the
/// hypernetworks evaluate hyperedge orders never seen in training.
pub fn order_embedding(p: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "order embedding dimension {d} must be even"
        )));
    }
    let mut emb = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        let x = p as f64 * freq;
        emb[2 * i] = x.sin();
        emb[2 * i + 1] = x.cos();
    }
    Ok(emb)
}

// ---------------------------------------------------------------------------
// Parameter store and per-step binding

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Master copy of all trainable tensors; the optimizer mutates these
/// between steps, and each step binds them onto a fresh tape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            values,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.next_symmetric(a)).collect();
        self.add(name, vec![rows, cols], values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.entries[id.0].values
    }

    pub fn set_values(&mut self, id: ParamId, values: Vec<f64>) {
        assert_eq!(values.len(), self.entries[id.0].values.len());
        self.entries[id.0].values = values;
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.values.clone()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut at = 0;
        for e in &mut self.entries {
            let len = e.values.len();
            e.values.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        assert_eq!(at, flat.len());
    }
}

/// Parameters bound onto one tape for one forward/backward step.
pub struct Binding<'t> {
    tape: &'t Tape,
    arrays: Vec<DiffArray>,
}

impl<'t> Binding<'t> {
    /// Bind every parameter as its own gradient leaf (training path).
    pub fn leaves(store: &ParamStore, tape: &'t Tape) -> Result<Binding<'t>> {
        let arrays = store
            .entries
            .iter()
            .map(|e| tape.leaf(e.shape.clone(), e.values.clone()))
            .collect::<Result<_>>()?;
        Ok(Binding { tape, arrays })
    }

    /// Bind parameters as constants (inference path).
    pub fn constants(store: &ParamStore, tape: &'t Tape) -> Binding<'t> {
        let arrays = store
            .entries
            .iter()
            .map(|e| DiffArray::from_vec(e.shape.clone(), e.values.clone()))
            .collect();
        Binding { tape, arrays }
    }

    /// Bind every parameter as a slice of one flat leaf, so a single
    /// gradient check covers the whole model.
    pub fn from_flat(store: &ParamStore, tape: &'t Tape, flat: &DiffArray) -> Result<Binding<'t>> {
        let row = tape.reshape(flat, vec![1, flat.numel()])?;
        let mut arrays = Vec::with_capacity(store.entries.len());
        let mut at = 0;
        for e in &store.entries {
            let len = e.values.len();
            let slice = tape.slice_channels(&row, at, len)?;
            arrays.push(tape.reshape(&slice, e.shape.clone())?);
            at += len;
        }
        Ok(Binding { tape, arrays })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> &DiffArray {
        &self.arrays[id.0]
    }

    /// Per-parameter gradients after a backward pass, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.arrays.iter().map(|a| grads.for_leaf(a)).collect()
    }
}

// ---------------------------------------------------------------------------
// Dropout

/// Dropout sites: inside MLP hidden activations, and on the local/global
/// attention outputs. Disabled entirely outside training (all property and
/// theorem tests run with dropout off).
pub struct DropoutCtx {
    pub enabled: bool,
    pub rate_mlp: f64,
    pub rate_local: f64,
    pub rate_global: f64,
    rng: RefCell<Rng>,
}

impl DropoutCtx {
    pub fn disabled() -> DropoutCtx {
        DropoutCtx {
            enabled: false,
            rate_mlp: 0.0,
            rate_local: 0.0,
            rate_global: 0.0,
            rng: RefCell::new(Rng::new(0)),
        }
    }

    pub fn training(rate_mlp: f64, rate_local: f64, rate_global: f64, seed: u64) -> DropoutCtx {
        DropoutCtx {
            enabled: true,
            rate_mlp,
            rate_local,
            rate_global,
            rng: RefCell::new(Rng::new(seed)),
        }
    }

    fn apply(&self, tape: &Tape, x: &DiffArray, rate: f64) -> Result<DiffArray> {
        if !self.enabled || rate <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul(x, &DiffArray::from_vec(x.shape().to_vec(), mask))
    }

    pub fn mlp(&self, tape: &Tape, x: &DiffArray) -> Result<DiffArray> {
        self.apply(tape, x, self.rate_mlp)
    }

    pub fn local(&self, tape: &Tape, x: &DiffArray) -> Result<DiffArray> {
        self.apply(tape, x, self.rate_local)
    }

    pub fn global(&self, tape: &Tape, x: &DiffArray) -> Result<DiffArray> {
        self.apply(tape, x, self.rate_global)
    }
}

// ---------------------------------------------------------------------------
// MLP

#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub relu_after: bool,
    /// Row layer-norm after the activation; keeps summed-message scale
    /// bounded in trained models. Exact-equality constructions leave it off.
    pub norm_after: bool,
}

/// Plain MLP: linear layers with relu on all but the last, and MLP dropout
/// after each relu.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dims: &[usize]) -> Mlp {
        Mlp::with_norm(store, rng, name, dims, false)
    }

    pub fn with_norm(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        dims: &[usize],
        norm: bool,
    ) -> Mlp {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let w = store.add_glorot(format!("{name}.w{i}"), dims[i], dims[i + 1], rng);
            let b = store.add_zeros(format!("{name}.b{i}"), vec![dims[i + 1]]);
            let hidden = i + 2 < dims.len();
            layers.push(MlpLayer {
                w,
                b,
                relu_after: hidden,
                norm_after: norm && hidden,
            });
        }
        Mlp { layers }
    }

    /// Composition `second(first(x))`, sharing the parameter ids.
    pub fn compose(first: &Mlp, second: &Mlp) -> Mlp {
        let mut layers = first.layers.clone();
        layers.extend(second.layers.iter().cloned());
        Mlp { layers }
    }

    pub fn in_dim(&self, store: &ParamStore) -> usize {
        store.entry(self.layers[0].w).shape[0]
    }

    pub fn apply(&self, bind: &Binding, x: &DiffArray, drop: &DropoutCtx) -> Result<DiffArray> {
        let tape = bind.tape();
        let mut h = x.clone();
        for layer in &self.layers {
            h = tape.add(&tape.matmul(&h, bind.get(layer.w))?, bind.get(layer.b))?;
            if layer.relu_after {
                h = tape.relu(&h)?;
                if layer.norm_after {
                    h = tape.layer_norm_rows(&h)?;
                }
                h = drop.mlp(tape, &h)?;
            }
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
// Order-conditioned maps

/// Orders attached to the rows of a batch: one shared order, or one per row.
#[derive(Clone, Debug)]
pub enum OrderSpec {
    Uniform(usize),
    PerRow(Rc<Vec<usize>>),
}

impl OrderSpec {
    pub fn max_order(&self) -> usize {
        match self {
            OrderSpec::Uniform(p) => *p,
            OrderSpec::PerRow(ps) => ps.iter().copied().max().unwrap_or(0),
        }
    }
}

/// An elementwise map conditioned on an integer order. The production form
/// concatenates a sinusoidal order embedding with the feature and applies
/// an MLP; the other forms exist for ablations and for the constructive
/// equality checks, where exact (linear) routing is required.
#[derive(Clone, Debug)]
pub enum CondMap {
    /// `mlp(concat(emb(order), x))`
    EmbedMlp { emb_dim: usize, mlp: Mlp },
    /// `mlp(x)`: order conditioning ablated
    SharedMlp { mlp: Mlp },
    /// Exact per-order constant linear map `x @ M_order` (no parameters)
    PerOrderLinear {
        in_dim: usize,
        out_dim: usize,
        maps: BTreeMap<usize, Vec<f64>>,
    },
    Identity,
}

impl CondMap {
    pub fn apply(
        &self,
        bind: &Binding,
        orders: &OrderSpec,
        x: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        match self {
            CondMap::EmbedMlp { emb_dim, mlp } => {
                let rows = x.rows();
                let emb = match orders {
                    OrderSpec::Uniform(p) => {
                        let row = order_embedding(*p, *emb_dim)?;
                        DiffArray::from_vec(
                            vec![rows, *emb_dim],
                            row.iter().cycle().take(rows * emb_dim).copied().collect(),
                        )
                    }
                    OrderSpec::PerRow(ps) => {
                        let mut data = Vec::with_capacity(rows * emb_dim);
                        for &p in ps.iter() {
                            data.extend(order_embedding(p, *emb_dim)?);
                        }
                        DiffArray::from_vec(vec![rows, *emb_dim], data)
                    }
                };
                let joined = tape.concat_channels(&[&emb, x])?;
                mlp.apply(bind, &joined, drop)
            }
            CondMap::SharedMlp { mlp } => mlp.apply(bind, x, drop),
            CondMap::PerOrderLinear {
                in_dim,
                out_dim,
                maps,
            } => match orders {
                OrderSpec::Uniform(p) => {
                    let m = maps.get(p).ok_or(Error::UnseenOrder {
                        k: *p,
                        l: 0,
                        overlap: 0,
                    })?;
                    let mat = DiffArray::from_vec(vec![*in_dim, *out_dim], m.clone());
                    tape.matmul(x, &mat)
                }
                OrderSpec::PerRow(ps) => {
                    let mut data = Vec::with_capacity(ps.len() * in_dim * out_dim);
                    for &p in ps.iter() {
                        let m = maps.get(&p).ok_or(Error::UnseenOrder {
                            k: p,
                            l: 0,
                            overlap: 0,
                        })?;
                        data.extend_from_slice(m);
                    }
                    let mats = DiffArray::from_vec(vec![ps.len(), in_dim * out_dim], data);
                    tape.rowwise_matmul(x, &mats)
                }
            },
            CondMap::Identity => Ok(x.clone()),
        }
    }
}

/// The bias-producing network `B(l)`, keyed by output hyperedge order.
#[derive(Clone, Debug)]
pub enum BiasNet {
    /// `mlp(emb(l))`
    Hyper { emb_dim: usize, mlp: Mlp },
    /// Trainable row per order, `1..=max_order`
    Lookup { table: ParamId, max_order: usize },
    Zero,
}

impl BiasNet {
    /// Bias rows for a batch of targets, or `None` when ablated.
    pub fn apply(
        &self,
        bind: &Binding,
        orders: &OrderSpec,
        rows: usize,
    ) -> Result<Option<DiffArray>> {
        let tape = bind.tape();
        match self {
            BiasNet::Zero => Ok(None),
            BiasNet::Hyper { emb_dim, mlp } => {
                let emb = match orders {
                    OrderSpec::Uniform(p) => {
                        let row = order_embedding(*p, *emb_dim)?;
                        DiffArray::from_vec(
                            vec![rows, *emb_dim],
                            row.iter().cycle().take(rows * emb_dim).copied().collect(),
                        )
                    }
                    OrderSpec::PerRow(ps) => {
                        let mut data = Vec::with_capacity(rows * emb_dim);
                        for &p in ps.iter() {
                            data.extend(order_embedding(p, *emb_dim)?);
                        }
                        DiffArray::from_vec(vec![rows, *emb_dim], data)
                    }
                };
                Ok(Some(mlp.apply(bind, &emb, &DropoutCtx::disabled())?))
            }
            BiasNet::Lookup { table, max_order } => {
                let ids: Vec<usize> = match orders {
                    OrderSpec::Uniform(p) => vec![*p; rows],
                    OrderSpec::PerRow(ps) => ps.as_ref().clone(),
                };
                if let Some(&bad) = ids.iter().find(|&&p| p == 0 || p > *max_order) {
                    return Err(Error::UnseenOrder {
                        k: 0,
                        l: bad,
                        overlap: 0,
                    });
                }
                let ids: Vec<usize> = ids.into_iter().map(|p| p - 1).collect();
                Ok(Some(tape.gather_rows(bind.get(*table), &Rc::new(ids))?))
            }
        }
    }
}

/// Query side of the attention coefficients, keyed by overlap.
#[derive(Clone, Debug)]
pub enum QueryNet {
    /// `mlp(emb(overlap))`: one query vector per overlap value
    Hyper { emb_dim: usize, mlp: Mlp },
    /// A single static query shared by all overlaps
    Static { q: ParamId },
}

impl QueryNet {
    /// `[1, heads * head_dim]`
    pub fn query(&self, bind: &Binding, overlap: usize) -> Result<DiffArray> {
        let tape = bind.tape();
        match self {
            QueryNet::Hyper { emb_dim, mlp } => {
                let emb = DiffArray::from_vec(vec![1, *emb_dim], order_embedding(overlap, *emb_dim)?);
                mlp.apply(bind, &emb, &DropoutCtx::disabled())
            }
            QueryNet::Static { q } => {
                let arr = bind.get(*q);
                tape.reshape(arr, vec![1, arr.numel()])
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Propagation context

/// One direction of sparse propagation (node->edge or edge->node) with the
/// index arrays every layer variant consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    NodeToEdge,
    EdgeToNode,
}

#[derive(Clone, Debug)]
pub struct PropContext {
    pub direction: Direction,
    pub num_src: usize,
    pub num_tgt: usize,
    pub src_orders: OrderSpec,
    pub tgt_orders: OrderSpec,
    /// Per incidence pair: source row and target row.
    pub pair_src: Rc<Vec<usize>>,
    pub pair_tgt: Rc<Vec<usize>>,
    /// All-zero segment ids over sources (global pooling).
    pub src_zero_ids: Rc<Vec<usize>>,
    /// All-zero gather ids over targets (global broadcast).
    pub tgt_zero_ids: Rc<Vec<usize>>,
}

impl PropContext {
    pub fn new(incidence: &IncidenceIndex, direction: Direction) -> PropContext {
        let num_nodes = incidence.node_incident_edges.len();
        let num_edges = incidence.edge_orders.len();
        let edge_orders = Rc::new(incidence.edge_orders.clone());
        let (num_src, num_tgt, src_orders, tgt_orders, pair_src, pair_tgt) = match direction {
            Direction::NodeToEdge => (
                num_nodes,
                num_edges,
                OrderSpec::Uniform(1),
                OrderSpec::PerRow(Rc::clone(&edge_orders)),
                Rc::new(incidence.pair_nodes.clone()),
                Rc::new(incidence.pair_edges.clone()),
            ),
            Direction::EdgeToNode => (
                num_edges,
                num_nodes,
                OrderSpec::PerRow(Rc::clone(&edge_orders)),
                OrderSpec::Uniform(1),
                Rc::new(incidence.pair_edges.clone()),
                Rc::new(incidence.pair_nodes.clone()),
            ),
        };
        PropContext {
            direction,
            num_src,
            num_tgt,
            src_orders,
            tgt_orders,
            pair_src,
            pair_tgt,
            src_zero_ids: Rc::new(vec![0; num_src]),
            tgt_zero_ids: Rc::new(vec![0; num_tgt]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_embedding_at_zero() {
        assert_eq!(order_embedding(0, 4).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn order_embedding_formula() {
        let e = order_embedding(1, 2).unwrap();
        assert!((e[0] - 1f64.sin()).abs() < 1e-15);
        assert!((e[1] - 1f64.cos()).abs() < 1e-15);
        let e4 = order_embedding(3, 4).unwrap();
        assert!((e4[2] - (3.0 / 10000f64.powf(0.5)).sin()).abs() < 1e-15);
        assert!((e4[3] - (3.0 / 10000f64.powf(0.5)).cos()).abs() < 1e-15);
    }

    #[test]
    fn order_embedding_rejects_odd_dim() {
        assert!(order_embedding(2, 3).is_err());
    }

    #[test]
    fn order_embedding_deterministic() {
        assert_eq!(order_embedding(7, 8).unwrap(), order_embedding(7, 8).unwrap());
    }

    #[test]
    fn param_store_flatten_round_trip() {
        let mut rng = Rng::new(1);
        let mut store = ParamStore::new();
        store.add_glorot("a", 2, 3, &mut rng);
        store.add_zeros("b", vec![4]);
        let flat = store.flatten();
        assert_eq!(flat.len(), 10);
        let mut store2 = store.clone();
        store2.unflatten(&flat);
        assert_eq!(store2.flatten(), flat);
    }

    #[test]
    fn mlp_forward_shape_and_grad() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "m", &[3, 5, 2]);
        let tape = Tape::new();
        let bind = Binding::leaves(&store, &tape).unwrap();
        let x = DiffArray::from_vec(vec![4, 3], (0..12).map(|i| i as f64 * 0.1).collect());
        let y = mlp.apply(&bind, &x, &DropoutCtx::disabled()).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        let loss = tape.sum_all(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let per_param = bind.gradients(&grads);
        assert_eq!(per_param.len(), store.len());
        assert!(per_param.iter().any(|g| g.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn cond_map_per_order_routing() {
        // order 2 routes into the second block, order 1 into the first
        let mut maps = BTreeMap::new();
        maps.insert(1usize, vec![1.0, 0.0, 0.0, 0.0]); // 1x4 blocks: [x, 0]
        maps.insert(2usize, vec![0.0, 0.0, 1.0, 0.0]);
        let cm = CondMap::PerOrderLinear {
            in_dim: 1,
            out_dim: 4,
            maps,
        };
        let store = ParamStore::new();
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let x = DiffArray::from_vec(vec![2, 1], vec![5.0, 7.0]);
        let orders = OrderSpec::PerRow(Rc::new(vec![1, 2]));
        let y = cm.apply(&bind, &orders, &x, &DropoutCtx::disabled()).unwrap();
        assert_eq!(y.data(), &[5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn cond_map_embed_mlp_respects_orders() {
        let mut rng = Rng::new(5);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "phi", &[4 + 2, 6, 3]);
        let cm = CondMap::EmbedMlp { emb_dim: 4, mlp };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let x = DiffArray::from_vec(vec![2, 2], vec![0.3, -0.2, 0.3, -0.2]);
        let drop = DropoutCtx::disabled();
        let same = cm
            .apply(&bind, &OrderSpec::PerRow(Rc::new(vec![2, 2])), &x, &drop)
            .unwrap();
        assert_eq!(&same.data()[..3], &same.data()[3..6], "same order, same rows");
        let diff = cm
            .apply(&bind, &OrderSpec::PerRow(Rc::new(vec![2, 9])), &x, &drop)
            .unwrap();
        assert_ne!(&diff.data()[..3], &diff.data()[3..6], "orders separate rows");
    }

    #[test]
    fn bias_lookup_rejects_unseen_order() {
        let mut store = ParamStore::new();
        let table = store.add_zeros("b", vec![3, 2]);
        let bias = BiasNet::Lookup {
            table,
            max_order: 3,
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let err = bias.apply(&bind, &OrderSpec::Uniform(4), 2);
        assert!(matches!(err, Err(Error::UnseenOrder { .. })));
    }

    #[test]
    fn binding_from_flat_matches_leaves() {
        let mut rng = Rng::new(8);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "m", &[2, 3, 1]);
        let x = DiffArray::from_vec(vec![2, 2], vec![0.1, 0.5, -0.3, 0.9]);
        let drop = DropoutCtx::disabled();

        let t1 = Tape::new();
        let b1 = Binding::leaves(&store, &t1).unwrap();
        let y1 = mlp.apply(&b1, &x, &drop).unwrap();

        let t2 = Tape::new();
        let flat = t2.leaf(vec![store.total_params()], store.flatten()).unwrap();
        let b2 = Binding::from_flat(&store, &t2, &flat).unwrap();
        let y2 = mlp.apply(&b2, &x, &drop).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn dropout_disabled_is_identity() {
        let tape = Tape::new();
        let x = DiffArray::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let d = DropoutCtx::disabled();
        let y = d.mlp(&tape, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
