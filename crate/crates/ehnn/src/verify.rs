//! Named verification batteries: oracle equivalences of the reduced dense
//! layers, constructive reduction equalities between the sparse variants,
//! permutation-equivariance sweeps, and gradient checks. The CLI `verify`
//! command and the acceptance suite both run these.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::array::{gradcheck, DiffArray, Tape};
use crate::error::{Error, Result};
use crate::hypergraph::{
    build_incidence, from_tensor_sequence, pack, unpack, Features, Hypergraph, Permutation,
    TensorSequence,
};
use crate::layers::{
    allset_attention, build_model, ArchSpec, Binding, BiasNet, CondMap, Direction, DropoutCtx,
    EhnnMlpLayer, EhnnNaiveLayer, EhnnTransformerLayer, Mlp, Model, ParamStore,
    PropContext, QueryNet, Variant, AllDeepSetsLayer, AllSetTransformerLayer, WeightHypernet,
};
use crate::oracle::{
    bell_number, full_layer_forward, max_abs_diff_on_distinct_support, packed_route_deviation,
    sequence_layer_forward, symmetric_layer_forward, tie_full_from_symmetric,
    tie_full_from_uniform, uniform_layer_forward, SequenceLayerParams, SymmetricLayerParams,
    UniformLayerParams,
};
use crate::rng::Rng;
use crate::train::bce_with_logits_mean;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Equivariance,
    Reductions,
    Gradcheck,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Option<Suite>> {
        match s {
            "oracle" => Ok(Some(Suite::Oracle)),
            "equivariance" => Ok(Some(Suite::Equivariance)),
            "reductions" => Ok(Some(Suite::Reductions)),
            "gradcheck" => Ok(Some(Suite::Gradcheck)),
            "all" => Ok(None),
            other => Err(Error::InvalidConfig(format!("unknown suite `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Equivariance => "equivariance",
            Suite::Reductions => "reductions",
            Suite::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
    pub millis: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Inject this perturbation into one tied weight inside the oracle
    /// equivalence checks; the suite must then fail (negative control).
    pub perturb: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            perturb: None,
        }
    }
}

type CheckFn = fn(&VerifyOptions) -> Result<(bool, String)>;

pub const CHECKS: &[(&str, Suite, CheckFn)] = &[
    ("bell-pattern-counts", Suite::Oracle, check_bell_counts),
    ("lemma-symmetric-tying", Suite::Oracle, check_symmetric_tying),
    ("prop-uniform-reduction", Suite::Oracle, check_uniform_reduction),
    ("thm-sequence-packed-equivalence", Suite::Oracle, check_packed_equivalence),
    ("lemma-pack-roundtrip", Suite::Oracle, check_pack_roundtrip),
    ("lemma-distinct-support", Suite::Oracle, check_distinct_support),
    ("bridge-roundtrip", Suite::Oracle, check_bridge_roundtrip),
    ("bridge-equivariance", Suite::Oracle, check_bridge_equivariance),
    ("naive-vs-dense-oracle", Suite::Oracle, check_naive_vs_dense),
    ("thm-mlp-channel-routing", Suite::Reductions, check_channel_routing),
    ("thm-alldeepsets-reduction", Suite::Reductions, check_alldeepsets_reduction),
    ("thm-allsettransformer-reduction", Suite::Reductions, check_allsettransformer_reduction),
    ("attention-counting-counterexample", Suite::Reductions, check_counting_counterexample),
    ("layer-equivariance", Suite::Equivariance, check_layer_equivariance),
    ("model-gradcheck", Suite::Gradcheck, check_model_gradcheck),
];

/// Run one suite (or all), collecting per-check results and timings.
pub fn run_checks(suite: Option<Suite>, opts: &VerifyOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|(_, s, _)| suite.is_none_or(|want| *s == want))
        .map(|(name, s, f)| {
            let start = Instant::now();
            let (passed, detail) = match f(opts) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                suite: *s,
                passed,
                detail,
                millis: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// shared generators

fn random_hypergraph(
    rng: &mut Rng,
    n: usize,
    m: usize,
    min_order: usize,
    max_order: usize,
    d: usize,
) -> Hypergraph {
    let mut edges: Vec<Vec<usize>> = Vec::new();
    let mut tries = 0;
    while edges.len() < m && tries < 500 {
        tries += 1;
        let k = min_order + rng.next_below(max_order - min_order + 1);
        let mut e = rng.sample_distinct(n, k);
        e.sort_unstable();
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    let m = edges.len();
    let node_feats = Features::from_rows(
        (0..n)
            .map(|_| (0..d).map(|_| rng.next_symmetric(1.0)).collect())
            .collect(),
    )
    .unwrap();
    let edge_feats = Features::from_rows(
        (0..m)
            .map(|_| (0..d).map(|_| rng.next_symmetric(1.0) + 2.0).collect())
            .collect(),
    )
    .unwrap();
    Hypergraph::new(n, edges)
        .unwrap()
        .with_node_features(node_feats)
        .unwrap()
        .with_edge_features(edge_feats)
        .unwrap()
}

fn uniform_support_tensor(n: usize, k: usize, d: usize, rng: &mut Rng) -> crate::hypergraph::DenseTensor {
    use crate::hypergraph::all_permutations;
    let mut t = crate::hypergraph::DenseTensor::zeros(n, k, d).unwrap();
    for _ in 0..(2 + rng.next_below(2)) {
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

fn symmetrized_tensor(n: usize, k: usize, d: usize, rng: &mut Rng) -> crate::hypergraph::DenseTensor {
    use crate::hypergraph::{all_permutations, for_each_multi_index};
    let mut t = crate::hypergraph::DenseTensor::zeros(n, k, d).unwrap();
    for v in t.data.iter_mut() {
        *v = rng.next_symmetric(1.0);
    }
    let snapshot = t.clone();
    let perms = all_permutations(k);
    let mut acc = crate::hypergraph::DenseTensor::zeros(n, k, d).unwrap();
    let mut permuted = vec![0usize; k];
    for_each_multi_index(n, k, |idx| {
        for p in &perms {
            for (slot, &pos) in permuted.iter_mut().zip(p) {
                *slot = idx[pos];
            }
            let row = snapshot.get(&permuted).to_vec();
            acc.add_assign(idx, &row);
        }
    });
    t.data = acc.data;
    t
}

// ---------------------------------------------------------------------------
// oracle suite

fn check_bell_counts(_: &VerifyOptions) -> Result<(bool, String)> {
    let got: Vec<usize> = (1..=5).map(|r| bell_number(r).unwrap_or(0)).collect();
    let want = vec![1, 2, 5, 15, 52];
    Ok((got == want, format!("counts {got:?}")))
}

fn check_symmetric_tying(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 1);
    let mut worst: f64 = 0.0;
    for &(k, l) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
        for _ in 0..20 {
            let sym = SymmetricLayerParams::random(k, l, 2, 2, &mut rng)?;
            let mut full = tie_full_from_symmetric(&sym)?;
            if let Some(eps) = opts.perturb {
                // break the tie inside one multi-pattern class
                if let Some(w) = full.weights.values_mut().last() {
                    w.data[0] += eps;
                }
            }
            let a = symmetrized_tensor(4, k, 2, &mut rng);
            let via_full = full_layer_forward(&a, &full)?;
            let via_sym = symmetric_layer_forward(&a, &sym)?;
            worst = worst.max(via_full.max_abs_diff(&via_sym));
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

fn check_uniform_reduction(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 2);
    let mut worst: f64 = 0.0;
    for &(k, l) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
        for _ in 0..20 {
            let u = UniformLayerParams::random(k, l, 2, 2, &mut rng);
            let mut full = tie_full_from_uniform(&u)?;
            if let Some(eps) = opts.perturb {
                if let Some(w) = full.weights.values_mut().next() {
                    w.data[0] += eps;
                }
            }
            let a = uniform_support_tensor(4, k, 2, &mut rng);
            let via_full = full_layer_forward(&a, &full)?;
            let via_uniform = uniform_layer_forward(&a, &u)?;
            worst = worst.max(max_abs_diff_on_distinct_support(&via_full, &via_uniform));
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

fn check_packed_equivalence(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params = SequenceLayerParams::random(2, 2, 1, 1, &mut rng);
        let h = random_hypergraph(&mut rng, 4, 3, 2, 2, 1);
        let mut seq = h.to_tensor_sequence(2)?;
        // feed node features in channel 0 of the first-order tensor
        let feats = h.node_features.as_ref().unwrap();
        let mut t1 = TensorSequence::zeros(4, 2, 1)?;
        for v in 0..4 {
            t1.order_mut(1).set(&[v], &[feats.row(v)[0]]);
        }
        t1.order_mut(2).data = seq.order(2).data.iter().map(|&x| x).collect();
        seq = t1;
        worst = worst.max(packed_route_deviation(&seq, &params)?);
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

fn check_pack_roundtrip(opts: &VerifyOptions) -> Result<(bool, String)> {
    use crate::hypergraph::{for_each_multi_index, unique_sorted};
    let mut rng = Rng::derive(opts.seed, 4);
    for _ in 0..10 {
        let h = random_hypergraph(&mut rng, 4, 3, 2, 3, 1);
        let seq = h.to_tensor_sequence(3)?;
        let packed = pack(&seq)?;
        let back = unpack(&packed, seq.layout)?;
        if back != seq {
            return Ok((false, "unpack(pack(T)) != T".into()));
        }
        let mut constant = true;
        for_each_multi_index(4, 3, |idx| {
            let u = unique_sorted(idx);
            if packed.get(idx) != seq.order(u.len()).get(&u) {
                constant = false;
            }
        });
        if !constant {
            return Ok((false, "packed entries vary within a unique set".into()));
        }
    }
    Ok((true, "10 random hypergraphs".into()))
}

fn check_distinct_support(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 5);
    for _ in 0..10 {
        let h = random_hypergraph(&mut rng, 5, 4, 2, 3, 2);
        let seq = h.to_tensor_sequence(3)?;
        for t in &seq.tensors {
            if !t.is_symmetric() || !t.has_distinct_support() {
                return Ok((false, format!("order-{} tensor violates support", t.order)));
            }
        }
    }
    Ok((true, "10 random hypergraphs".into()))
}

fn check_bridge_roundtrip(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 6);
    for trial in 0..50 {
        let h = random_hypergraph(&mut rng, 5, 3, 2, 3, 1);
        let back = from_tensor_sequence(&h.to_tensor_sequence(3)?)?;
        if !back.canonical_eq(&h) {
            return Ok((false, format!("round trip failed on trial {trial}")));
        }
    }
    Ok((true, "50 random hypergraphs".into()))
}

fn check_bridge_equivariance(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 7);
    for _ in 0..20 {
        let h = random_hypergraph(&mut rng, 5, 3, 2, 3, 1);
        let p = Permutation::new(rng.permutation(5))?;
        let lhs = h.apply_permutation(&p)?.to_tensor_sequence(3)?;
        let rhs = h.to_tensor_sequence(3)?.permute_nodes(&p);
        if lhs.max_abs_diff(&rhs) != 0.0 {
            return Ok((false, "bridge not exactly equivariant".into()));
        }
    }
    Ok((true, "20 random (H, pi), element-wise exact".into()))
}

/// Sparse naive layer with lookup tables against the dense sequence oracle,
/// restricted to realized hyperedges, with the k!-multiplicity rescale on
/// the dense side.
fn check_naive_vs_dense(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = 4;
        let h = random_hypergraph(&mut rng, n, 3, 2, 2, 1);
        let inc = build_incidence(&h);

        // shared random parameters
        let mut store = ParamStore::new();
        let wrows: Vec<f64> = (0..2 * 2 * 2).map(|_| rng.next_symmetric(1.0)).collect();
        let table = store.add("w", vec![2 * 2 * 2, 1], wrows.clone());
        let brows: Vec<f64> = (0..2).map(|_| rng.next_symmetric(1.0)).collect();
        let btable = store.add("b", vec![2, 1], brows.clone());
        let layer = EhnnNaiveLayer {
            w: WeightHypernet::Lookup {
                table,
                max_k: 2,
                max_l: 2,
            },
            bias: BiasNet::Lookup {
                table: btable,
                max_order: 2,
            },
            d_in: 1,
            d_out: 1,
        };
        let lookup = |k: usize, l: usize, o: usize| wrows[((k - 1) * 2 + (l - 1)) * 2 + o];

        // dense twin: w_{k,l,I} = W(k,l,I) / k!. Overlaps above 1 never
        // occur in node<->edge propagation and only touch dense entries
        // outside the comparison; zero them.
        let mut params = SequenceLayerParams::random(2, 2, 1, 1, &mut rng);
        for ((k, l, o), w) in params.weights.iter_mut() {
            let kfact = if *k == 2 { 2.0 } else { 1.0 };
            w.data[0] = if *o > 1 { 0.0 } else { lookup(*k, *l, *o) / kfact };
        }
        for (l, b) in params.biases.iter_mut() {
            b[0] = brows[*l - 1];
        }

        // node -> edge: sources are the first-order tensor
        let feats = h.node_features.as_ref().unwrap();
        let mut seq_v = TensorSequence::zeros(n, 2, 1)?;
        for v in 0..n {
            seq_v.order_mut(1).set(&[v], &[feats.row(v)[0]]);
        }
        let dense_v = sequence_layer_forward(&seq_v, &params)?;
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let src = DiffArray::from_vec(vec![n, 1], feats.data.clone());
        let sparse_v = layer.forward(
            &bind,
            &PropContext::new(&inc, Direction::NodeToEdge),
            &src,
            &DropoutCtx::disabled(),
        )?;
        for (ei, e) in h.edges().iter().enumerate() {
            let dense_val = dense_v.order(2).get(&[e[0], e[1]])[0];
            worst = worst.max((dense_val - sparse_v.data()[ei]).abs());
        }

        // edge -> node: sources are the second-order tensor
        let edge_feats = h.edge_features.as_ref().unwrap();
        let mut seq_e = TensorSequence::zeros(n, 2, 1)?;
        for (ei, e) in h.edges().iter().enumerate() {
            let x = edge_feats.row(ei)[0];
            seq_e.order_mut(2).set(&[e[0], e[1]], &[x]);
            seq_e.order_mut(2).set(&[e[1], e[0]], &[x]);
        }
        let dense_e = sequence_layer_forward(&seq_e, &params)?;
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let esrc = DiffArray::from_vec(vec![h.num_edges(), 1], edge_feats.data.clone());
        let sparse_e = layer.forward(
            &bind,
            &PropContext::new(&inc, Direction::EdgeToNode),
            &esrc,
            &DropoutCtx::disabled(),
        )?;
        for v in 0..n {
            let dense_val = dense_e.order(1).get(&[v])[0];
            worst = worst.max((dense_val - sparse_e.data()[v]).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

// ---------------------------------------------------------------------------
// reductions suite

/// Exact channel-routing construction: phi1 places features in the block of
/// their source order, phi2 routes blocks by overlap, phi3 applies the
/// summed per-triple weights. The composite must replay the naive layer.
fn check_channel_routing(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 9);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = 8;
        let d = 2;
        let d_out = 2;
        let max_order = 3;
        let h = random_hypergraph(&mut rng, n, 4, 2, max_order, d);
        let inc = build_incidence(&h);

        let mut store = ParamStore::new();
        let rows = max_order * max_order * 2;
        let wdata: Vec<f64> = (0..rows * d * d_out).map(|_| rng.next_symmetric(1.0)).collect();
        let table = store.add("w", vec![rows, d * d_out], wdata.clone());
        let bdata: Vec<f64> = (0..max_order * d_out).map(|_| rng.next_symmetric(1.0)).collect();
        let btable = store.add("b", vec![max_order, d_out], bdata);
        let bias = BiasNet::Lookup {
            table: btable,
            max_order,
        };
        let naive = EhnnNaiveLayer {
            w: WeightHypernet::Lookup {
                table,
                max_k: max_order,
                max_l: max_order,
            },
            bias: bias.clone(),
            d_in: d,
            d_out,
        };
        let wmat = |k: usize, l: usize, o: usize| -> Vec<f64> {
            let r = ((k - 1) * max_order + (l - 1)) * 2 + o;
            wdata[r * d * d_out..(r + 1) * d * d_out].to_vec()
        };

        // phi1: block-k placement
        let mut phi1_maps = BTreeMap::new();
        for k in 1..=max_order {
            let mut m = vec![0.0; d * max_order * d];
            for c in 0..d {
                m[c * max_order * d + (k - 1) * d + c] = 1.0;
            }
            phi1_maps.insert(k, m);
        }
        // phi2: block-I placement over the K*d-wide input
        let wide = max_order * d;
        let mut phi2_maps = BTreeMap::new();
        for overlap in 0..2usize {
            let mut m = vec![0.0; wide * 2 * wide];
            for c in 0..wide {
                m[c * 2 * wide + overlap * wide + c] = 1.0;
            }
            phi2_maps.insert(overlap, m);
        }
        // phi3 per target order: stacked W(k, l, I) blocks
        let mut phi3_maps = BTreeMap::new();
        for l in 1..=max_order {
            let mut m = vec![0.0; 2 * wide * d_out];
            for overlap in 0..2usize {
                for k in 1..=max_order {
                    let w = wmat(k, l, overlap);
                    for c in 0..d {
                        let row = overlap * wide + (k - 1) * d + c;
                        m[row * d_out..(row + 1) * d_out]
                            .copy_from_slice(&w[c * d_out..(c + 1) * d_out]);
                    }
                }
            }
            phi3_maps.insert(l, m);
        }
        let routed = EhnnMlpLayer {
            phi1: CondMap::PerOrderLinear {
                in_dim: d,
                out_dim: wide,
                maps: phi1_maps,
            },
            phi2: CondMap::PerOrderLinear {
                in_dim: wide,
                out_dim: 2 * wide,
                maps: phi2_maps,
            },
            phi3: CondMap::PerOrderLinear {
                in_dim: 2 * wide,
                out_dim: d_out,
                maps: phi3_maps,
            },
            bias,
            use_global: true,
        };

        for dir in [Direction::NodeToEdge, Direction::EdgeToNode] {
            let ctx = PropContext::new(&inc, dir);
            let src = match dir {
                Direction::NodeToEdge => {
                    let f = h.node_features.as_ref().unwrap();
                    DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone())
                }
                Direction::EdgeToNode => {
                    let f = h.edge_features.as_ref().unwrap();
                    DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone())
                }
            };
            let tape = Tape::new();
            let bind = Binding::constants(&store, &tape);
            let drop = DropoutCtx::disabled();
            let a = naive.forward(&bind, &ctx, &src, &drop)?;
            let b = routed.forward(&bind, &ctx, &src, &drop)?;
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

/// Order-agnostic phis, identity overlap map, no global term, zero bias:
/// the layer collapses onto AllDeepSets built from the same MLPs.
fn check_alldeepsets_reduction(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = 3;
        let hdim = 6;
        let h = random_hypergraph(&mut rng, 7, 4, 2, 4, d);
        let inc = build_incidence(&h);
        let mut store = ParamStore::new();
        let mlp_a = Mlp::new(&mut store, &mut rng, "p1", &[d, hdim, hdim]);
        let mlp_b = Mlp::new(&mut store, &mut rng, "p2", &[hdim, hdim, d]);
        let ablated = EhnnMlpLayer {
            phi1: CondMap::SharedMlp { mlp: mlp_a.clone() },
            phi2: CondMap::Identity,
            phi3: CondMap::SharedMlp { mlp: mlp_b.clone() },
            bias: BiasNet::Zero,
            use_global: false,
        };
        let baseline = AllDeepSetsLayer {
            phi1: mlp_a,
            phi2: mlp_b,
        };
        let ctx = PropContext::new(&inc, Direction::NodeToEdge);
        let f = h.node_features.as_ref().unwrap();
        let src = DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone());
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let drop = DropoutCtx::disabled();
        let a = ablated.forward(&bind, &ctx, &src, &drop)?;
        let b = baseline.forward(&bind, &ctx, &src, &drop)?;
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

/// Static query, order-agnostic key/phi1, identity phi3 and value matrices,
/// no global branch: the layer collapses onto AllSetTransformer whose key
/// network is the composition of phi1 and the key MLP.
fn check_allsettransformer_reduction(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = 3;
        let hdim = 6;
        let heads = 2;
        let head_dim = 2;
        let h = random_hypergraph(&mut rng, 7, 4, 2, 4, d);
        let inc = build_incidence(&h);
        let mut store = ParamStore::new();
        let mlp_a = Mlp::new(&mut store, &mut rng, "p1", &[d, hdim, hdim]);
        let mlp_k = Mlp::new(&mut store, &mut rng, "k", &[hdim, heads * head_dim]);
        let q = store.add_glorot("q", 1, heads * head_dim, &mut rng);
        let ffn = Mlp::new(&mut store, &mut rng, "ffn", &[hdim, hdim, hdim]);
        let mut eye = vec![0.0; hdim * hdim];
        for i in 0..hdim {
            eye[i * hdim + i] = 1.0;
        }
        let value_mats: Vec<_> = (0..heads)
            .map(|i| store.add(format!("v{i}"), vec![hdim, hdim], eye.clone()))
            .collect();
        let ablated = EhnnTransformerLayer {
            phi1: CondMap::SharedMlp { mlp: mlp_a.clone() },
            phi2: CondMap::Identity,
            phi3: CondMap::Identity,
            bias: BiasNet::Zero,
            query: QueryNet::Static { q },
            key: CondMap::SharedMlp { mlp: mlp_k.clone() },
            value_mats,
            heads,
            head_dim,
            ffn: ffn.clone(),
            use_global: false,
        };
        let baseline = AllSetTransformerLayer {
            phi1: mlp_a.clone(),
            key_mlp: Mlp::compose(&mlp_a, &mlp_k),
            query: q,
            heads,
            head_dim,
            ffn,
        };
        let ctx = PropContext::new(&inc, Direction::NodeToEdge);
        let f = h.node_features.as_ref().unwrap();
        let src = DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone());
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let drop = DropoutCtx::disabled();
        let a = ablated.forward(&bind, &ctx, &src, &drop)?;
        let b = baseline.forward(&bind, &ctx, &src, &drop)?;
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

/// With identical source features, attention normalization makes the
/// AllSet pool constant: every target gets `heads * phi1(x)`, so the layer
/// cannot count its members.
fn check_counting_counterexample(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 12);
    let d = 2;
    let hdim = 5;
    let heads = 3;
    let head_dim = 2;
    let h = Hypergraph::new(9, vec![vec![0, 1], vec![2, 3, 4, 5, 6], vec![7, 8, 0]])
        .unwrap()
        .with_node_features(Features::from_rows(vec![vec![1.0; d]; 9]).unwrap())
        .unwrap();
    let inc = build_incidence(&h);
    let mut store = ParamStore::new();
    let layer = AllSetTransformerLayer {
        phi1: Mlp::new(&mut store, &mut rng, "p1", &[d, hdim, hdim]),
        key_mlp: Mlp::new(&mut store, &mut rng, "k", &[d, heads * head_dim]),
        query: store.add_glorot("q", 1, heads * head_dim, &mut rng),
        heads,
        head_dim,
        ffn: Mlp::new(&mut store, &mut rng, "ffn", &[hdim, hdim, hdim]),
    };
    let tape = Tape::new();
    let bind = Binding::constants(&store, &tape);
    let ctx = PropContext::new(&inc, Direction::NodeToEdge);
    let f = h.node_features.as_ref().unwrap();
    let src = DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone());
    let drop = DropoutCtx::disabled();
    let attn = allset_attention(&layer, &bind, &ctx, &src, &drop)?;
    let ones = DiffArray::from_vec(vec![1, d], vec![1.0; d]);
    let p1 = layer.phi1.apply(&bind, &ones, &drop)?;
    let mut worst: f64 = 0.0;
    for e in 0..h.num_edges() {
        for c in 0..hdim {
            let got = attn.data()[e * hdim + c];
            let want = heads as f64 * p1.data()[c];
            worst = worst.max((got - want).abs());
        }
    }
    Ok((
        worst <= 1e-12,
        format!("max abs dev from heads*phi1(1): {worst:.3e}"),
    ))
}

// ---------------------------------------------------------------------------
// equivariance suite

fn all_variants() -> [Variant; 6] {
    [
        Variant::EhnnNaiveLookup,
        Variant::EhnnNaiveHypernet,
        Variant::EhnnMlp,
        Variant::EhnnTransformer,
        Variant::AllDeepSets,
        Variant::AllSetTransformer,
    ]
}

fn small_arch(variant: Variant) -> ArchSpec {
    ArchSpec {
        in_dim: 2,
        hidden: 8,
        heads: 2,
        order_emb_dim: 8,
        max_lookup_order: 6,
        ..ArchSpec::synthetic(variant)
    }
}

fn model_logits(model: &Model, h: &Hypergraph) -> Result<Vec<f64>> {
    let inc = build_incidence(h);
    let tape = Tape::new();
    let bind = Binding::constants(&model.store, &tape);
    Ok(model
        .forward(&bind, h, &inc, &DropoutCtx::disabled())?
        .data()
        .to_vec())
}

/// `output(pi . H) = pi . output(H)` for every variant, 10 graphs x 5
/// permutations, forward only, dropout disabled.
fn check_layer_equivariance(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 13);
    let mut worst: f64 = 0.0;
    for variant in all_variants() {
        let model = build_model(&small_arch(variant), opts.seed ^ 0xabc)?;
        for g in 0..10 {
            let n = 6 + g % 3;
            let h = random_hypergraph(&mut rng, n, 4, 2, 4.min(n), 2);
            let base = model_logits(&model, &h)?;
            for _ in 0..5 {
                let p = Permutation::new(rng.permutation(n))?;
                let hp = h.apply_permutation(&p)?;
                let permuted = model_logits(&model, &hp)?;
                let out_dim = base.len() / n;
                for v in 0..n {
                    for c in 0..out_dim {
                        let dev =
                            (permuted[p.apply(v) * out_dim + c] - base[v * out_dim + c]).abs();
                        worst = worst.max(dev);
                    }
                }
            }
        }
    }
    Ok((worst <= 1e-9, format!("max abs dev {worst:.3e}")))
}

// ---------------------------------------------------------------------------
// gradcheck suite

/// Every variant passes a central-difference gradient check over all model
/// parameters on a 5-node, 3-edge instance.
fn check_model_gradcheck(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = Rng::derive(opts.seed, 14);
    let h = random_hypergraph(&mut rng, 5, 3, 2, 3, 2);
    let targets: Vec<f64> = (0..5).map(|v| f64::from(v % 2 == 0)).collect();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for variant in all_variants() {
        let model = build_model(&small_arch(variant), opts.seed ^ 0x6ad)?;
        let inc = build_incidence(&h);
        let feats = h.node_features.as_ref().unwrap();
        let x = DiffArray::from_vec(vec![feats.rows(), feats.cols], feats.data.clone());
        let flat = model.store.flatten();
        let err = gradcheck(
            |tape, p| {
                let bind = Binding::from_flat(&model.store, tape, p)?;
                let logits = model.forward_features(&bind, &x, &inc, &DropoutCtx::disabled())?;
                bce_with_logits_mean(tape, &logits, &targets, 1.0)
            },
            &flat,
            1e-5,
        )?;
        details.push(format!("{}={err:.2e}", variant.name()));
        worst = worst.max(err);
    }
    Ok((worst <= 1e-4, details.join(" ")))
}

// ---------------------------------------------------------------------------

/// Sanity harness used by the CLI and tests: a trained-weights perturbation
/// must break the oracle equivalences.
pub fn oracle_suite_fails_under_perturbation(seed: u64, eps: f64) -> bool {
    let opts = VerifyOptions {
        seed,
        perturb: Some(eps),
    };
    let results = run_checks(Some(Suite::Oracle), &opts);
    results.iter().any(|r| !r.passed)
}
