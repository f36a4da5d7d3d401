//! The sparse layer family: naive hypernetwork EHNN, EHNN-MLP,
//! EHNN-Transformer, and the AllDeepSets / AllSetTransformer baselines.
//!
//! A layer maps source features to target features along one propagation
//! direction. Local interactions run over incidence pairs (overlap 1);
//! global interactions pool over all sources (overlap 0) and broadcast.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::array::DiffArray;
use crate::error::{Error, Result};

use super::{Binding, BiasNet, CondMap, DropoutCtx, Mlp, OrderSpec, ParamId, PropContext, QueryNet};

// ---------------------------------------------------------------------------
// Naive EHNN

/// Backend producing the per-(k, l, overlap) weight matrices of the naive
/// layer: a trainable lookup table over order triples, or an MLP over
/// concatenated sinusoidal embeddings of the triple.
#[derive(Clone, Debug)]
pub enum WeightHypernet {
    Lookup {
        /// `[max_k * max_l * 2, d_in * d_out]`, row per (k, l, overlap).
        table: ParamId,
        max_k: usize,
        max_l: usize,
    },
    Mlp { emb_dim: usize, mlp: Mlp },
}

impl WeightHypernet {
    fn lookup_index(max_l: usize, k: usize, l: usize, overlap: usize) -> usize {
        ((k - 1) * max_l + (l - 1)) * 2 + overlap
    }
}

/// Direct realization of the hypernetwork layer: every message carries its
/// own inferred `d_in x d_out` weight matrix, explicitly materialized per
/// incidence pair. This is the expensive path the three-MLP decomposition
/// exists to avoid; the cost benchmark measures exactly that gap.
#[derive(Clone, Debug)]
pub struct EhnnNaiveLayer {
    pub w: WeightHypernet,
    pub bias: BiasNet,
    pub d_in: usize,
    pub d_out: usize,
}

impl EhnnNaiveLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        _drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let (src_orders, tgt_orders) = (orders_vec(&ctx.src_orders, ctx.num_src), orders_vec(&ctx.tgt_orders, ctx.num_tgt));

        // weight rows for every triple realized by this propagation
        let mut triples: Vec<(usize, usize, usize)> = Vec::new();
        for p in 0..ctx.pair_src.len() {
            triples.push((src_orders[ctx.pair_src[p]], tgt_orders[ctx.pair_tgt[p]], 1));
        }
        let src_order_set = distinct(&src_orders);
        let tgt_order_set = distinct(&tgt_orders);
        for &k in &src_order_set {
            for &l in &tgt_order_set {
                triples.push((k, l, 0));
            }
        }
        let mut unique: Vec<(usize, usize, usize)> = triples.clone();
        unique.sort_unstable();
        unique.dedup();

        // materialize one weight row per realized triple
        let weight_rows: DiffArray = match &self.w {
            WeightHypernet::Lookup { table, max_k, max_l } => {
                for &(k, l, _) in &unique {
                    if k == 0 || k > *max_k || l == 0 || l > *max_l {
                        return Err(Error::UnseenOrder { k, l, overlap: 1 });
                    }
                }
                let ids: Vec<usize> = unique
                    .iter()
                    .map(|&(k, l, o)| WeightHypernet::lookup_index(*max_l, k, l, o))
                    .collect();
                tape.gather_rows(bind.get(*table), &Rc::new(ids))?
            }
            WeightHypernet::Mlp { emb_dim, mlp } => {
                let mut emb = Vec::with_capacity(unique.len() * 3 * emb_dim);
                for &(k, l, o) in &unique {
                    emb.extend(super::order_embedding(k, *emb_dim)?);
                    emb.extend(super::order_embedding(l, *emb_dim)?);
                    emb.extend(super::order_embedding(o, *emb_dim)?);
                }
                let emb = DiffArray::from_vec(vec![unique.len(), 3 * emb_dim], emb);
                mlp.apply(bind, &emb, &DropoutCtx::disabled())?
            }
        };
        let row_of = |t: (usize, usize, usize)| unique.binary_search(&t).unwrap();

        // local messages: gather each pair's weight matrix and feature row,
        // apply per-row, scatter into targets
        let mut out = if ctx.pair_src.is_empty() {
            DiffArray::zeros(vec![ctx.num_tgt, self.d_out])
        } else {
            let pair_w_ids: Vec<usize> = (0..ctx.pair_src.len())
                .map(|p| row_of((src_orders[ctx.pair_src[p]], tgt_orders[ctx.pair_tgt[p]], 1)))
                .collect();
            let pair_w = tape.gather_rows(&weight_rows, &Rc::new(pair_w_ids))?;
            let pair_x = tape.gather_rows(src, &ctx.pair_src)?;
            let msgs = tape.rowwise_matmul(&pair_x, &pair_w)?;
            tape.segment_sum(&msgs, &ctx.pair_tgt, ctx.num_tgt)?
        };

        // global term: per source order, pool all features and route through
        // W(k, l, 0) for each realized target order
        let src_group_of: BTreeMap<usize, usize> = src_order_set
            .iter()
            .enumerate()
            .map(|(g, &k)| (k, g))
            .collect();
        let group_ids: Vec<usize> = src_orders.iter().map(|k| src_group_of[k]).collect();
        let sums = tape.segment_sum(src, &Rc::new(group_ids), src_order_set.len())?;
        for &l in &tgt_order_set {
            let mut total: Option<DiffArray> = None;
            for (g, &k) in src_order_set.iter().enumerate() {
                let w_row = tape.gather_rows(&weight_rows, &Rc::new(vec![row_of((k, l, 0))]))?;
                let w = tape.reshape(&w_row, vec![self.d_in, self.d_out])?;
                let sum_k = tape.gather_rows(&sums, &Rc::new(vec![g]))?;
                let part = tape.matmul(&sum_k, &w)?;
                total = Some(match total {
                    Some(t) => tape.add(&t, &part)?,
                    None => part,
                });
            }
            let total = total.expect("at least one source order");
            let tgt_rows: Vec<usize> = tgt_orders
                .iter()
                .enumerate()
                .filter(|(_, &o)| o == l)
                .map(|(i, _)| i)
                .collect();
            let spread = tape.gather_rows(&total, &Rc::new(vec![0; tgt_rows.len()]))?;
            let scattered = tape.segment_sum(&spread, &Rc::new(tgt_rows), ctx.num_tgt)?;
            out = tape.add(&out, &scattered)?;
        }

        if let Some(b) = self.bias.apply(bind, &ctx.tgt_orders, ctx.num_tgt)? {
            out = tape.add(&out, &b)?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// EHNN-MLP

/// Three-MLP decomposition of the weight hypernetwork: phi1 conditioned on
/// the source order, phi2 on the overlap (local sum vs global pool), phi3
/// on the target order, plus the bias hypernetwork.
#[derive(Clone, Debug)]
pub struct EhnnMlpLayer {
    pub phi1: CondMap,
    pub phi2: CondMap,
    pub phi3: CondMap,
    pub bias: BiasNet,
    pub use_global: bool,
}

impl EhnnMlpLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let h1 = self.phi1.apply(bind, &ctx.src_orders, src, drop)?;

        let local = if ctx.pair_src.is_empty() {
            DiffArray::zeros(vec![ctx.num_tgt, h1.cols()])
        } else {
            let pair_vals = tape.gather_rows(&h1, &ctx.pair_src)?;
            tape.segment_sum(&pair_vals, &ctx.pair_tgt, ctx.num_tgt)?
        };
        let mut z = self.phi2.apply(bind, &OrderSpec::Uniform(1), &local, drop)?;

        if self.use_global {
            let pooled = tape.segment_sum(&h1, &ctx.src_zero_ids, 1)?;
            let spread = tape.gather_rows(&pooled, &ctx.tgt_zero_ids)?;
            let g = self.phi2.apply(bind, &OrderSpec::Uniform(0), &spread, drop)?;
            z = tape.add(&z, &g)?;
        }

        let mut out = self.phi3.apply(bind, &ctx.tgt_orders, &z, drop)?;
        if let Some(b) = self.bias.apply(bind, &ctx.tgt_orders, ctx.num_tgt)? {
            out = tape.add(&out, &b)?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// EHNN-Transformer

/// Attention realization: the static sums of EHNN-MLP become multihead
/// scaled-dot-product pools, with softmax taken over each target's masked
/// key set (incident sources for overlap 1, all sources for overlap 0),
/// followed by the phi2/phi3 conditioning and a residual feed-forward.
#[derive(Clone, Debug)]
pub struct EhnnTransformerLayer {
    pub phi1: CondMap,
    pub phi2: CondMap,
    pub phi3: CondMap,
    pub bias: BiasNet,
    pub query: QueryNet,
    /// Key network over phi1 outputs, conditioned on the overlap.
    pub key: CondMap,
    /// Per-head value matrices, each `[d_phi1, d_value]`, summed over heads.
    pub value_mats: Vec<ParamId>,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn: Mlp,
    pub use_global: bool,
}

impl EhnnTransformerLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let h1 = self.phi1.apply(bind, &ctx.src_orders, src, drop)?;
        let values: Vec<DiffArray> = self
            .value_mats
            .iter()
            .map(|&v| tape.matmul(&h1, bind.get(v)))
            .collect::<Result<_>>()?;
        let d_v = values[0].cols();

        // local branch: masked softmax over each target's incident sources
        let local = if ctx.pair_src.is_empty() {
            DiffArray::zeros(vec![ctx.num_tgt, d_v])
        } else {
            let keys = self.key.apply(bind, &OrderSpec::Uniform(1), &h1, drop)?;
            let q = self.query.query(bind, 1)?;
            let logits = self.head_logits(bind, &keys, &q)?;
            let pair_logits = tape.gather_rows(&logits, &ctx.pair_src)?;
            let alpha = tape.softmax_over_segments(&pair_logits, &ctx.pair_tgt, ctx.num_tgt)?;
            let mut acc: Option<DiffArray> = None;
            for (h, vh) in values.iter().enumerate() {
                let pv = tape.gather_rows(vh, &ctx.pair_src)?;
                let ah = tape.slice_channels(&alpha, h, 1)?;
                let weighted = tape.mul(&pv, &ah)?;
                let pooled = tape.segment_sum(&weighted, &ctx.pair_tgt, ctx.num_tgt)?;
                acc = Some(match acc {
                    Some(a) => tape.add(&a, &pooled)?,
                    None => pooled,
                });
            }
            acc.unwrap()
        };
        let local = drop.local(tape, &local)?;
        let mut z = self.phi2.apply(bind, &OrderSpec::Uniform(1), &local, drop)?;

        if self.use_global && ctx.num_src > 0 {
            let keys = self.key.apply(bind, &OrderSpec::Uniform(0), &h1, drop)?;
            let q = self.query.query(bind, 0)?;
            let logits = self.head_logits(bind, &keys, &q)?;
            let alpha = tape.softmax_over_segments(&logits, &ctx.src_zero_ids, 1)?;
            let mut acc: Option<DiffArray> = None;
            for (h, vh) in values.iter().enumerate() {
                let ah = tape.slice_channels(&alpha, h, 1)?;
                let weighted = tape.mul(vh, &ah)?;
                let pooled = tape.segment_sum(&weighted, &ctx.src_zero_ids, 1)?;
                acc = Some(match acc {
                    Some(a) => tape.add(&a, &pooled)?,
                    None => pooled,
                });
            }
            let spread = tape.gather_rows(&acc.unwrap(), &ctx.tgt_zero_ids)?;
            let spread = drop.global(tape, &spread)?;
            let g = self.phi2.apply(bind, &OrderSpec::Uniform(0), &spread, drop)?;
            z = tape.add(&z, &g)?;
        }

        let mut attn = self.phi3.apply(bind, &ctx.tgt_orders, &z, drop)?;
        if let Some(b) = self.bias.apply(bind, &ctx.tgt_orders, ctx.num_tgt)? {
            attn = tape.add(&attn, &b)?;
        }
        let ff = self.ffn.apply(bind, &attn, drop)?;
        tape.add(&attn, &ff)
    }

    /// Scaled per-head dot products of key rows against one query row:
    /// `[rows, heads]`.
    fn head_logits(&self, bind: &Binding, keys: &DiffArray, q: &DiffArray) -> Result<DiffArray> {
        head_logits(bind, keys, q, self.heads, self.head_dim)
    }
}

fn head_logits(
    bind: &Binding,
    keys: &DiffArray,
    q: &DiffArray,
    heads: usize,
    head_dim: usize,
) -> Result<DiffArray> {
    let tape = bind.tape();
    if keys.cols() != heads * head_dim || q.numel() != heads * head_dim {
        return Err(Error::ShapeMismatch {
            op: "head_logits",
            detail: format!(
                "keys {:?} / query {:?} vs {} heads x {}",
                keys.shape(),
                q.shape(),
                heads,
                head_dim
            ),
        });
    }
    let mut cols = Vec::with_capacity(heads);
    for h in 0..heads {
        let kh = tape.slice_channels(keys, h * head_dim, head_dim)?;
        let qh = tape.slice_channels(q, h * head_dim, head_dim)?;
        let qcol = tape.reshape(&qh, vec![head_dim, 1])?;
        cols.push(tape.matmul(&kh, &qcol)?);
    }
    let refs: Vec<&DiffArray> = cols.iter().collect();
    let joined = tape.concat_channels(&refs)?;
    tape.scale(&joined, 1.0 / (head_dim as f64).sqrt())
}

// ---------------------------------------------------------------------------
// AllDeepSets

/// Two-MLP message passing over incident pairs: no order conditioning, no
/// global term, no bias hypernetwork.
#[derive(Clone, Debug)]
pub struct AllDeepSetsLayer {
    pub phi1: Mlp,
    pub phi2: Mlp,
}

impl AllDeepSetsLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let h1 = self.phi1.apply(bind, src, drop)?;
        let agg = if ctx.pair_src.is_empty() {
            DiffArray::zeros(vec![ctx.num_tgt, h1.cols()])
        } else {
            let pair_vals = tape.gather_rows(&h1, &ctx.pair_src)?;
            tape.segment_sum(&pair_vals, &ctx.pair_tgt, ctx.num_tgt)?
        };
        self.phi2.apply(bind, &agg, drop)
    }
}

// ---------------------------------------------------------------------------
// AllSetTransformer

/// Attention-based message passing with a static query: keys come from raw
/// source features, values are phi1 features weighted per head, and the
/// softmax normalizes over each target's incident key set only.
#[derive(Clone, Debug)]
pub struct AllSetTransformerLayer {
    pub phi1: Mlp,
    pub key_mlp: Mlp,
    pub query: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn: Mlp,
}

/// The attention pool of the layer (before the residual feed-forward).
/// With identical source features every target receives `heads * phi1(x)`
/// no matter how many sources it touches: softmax normalization makes the
/// pool blind to neighborhood size.
pub fn allset_attention(
    layer: &AllSetTransformerLayer,
    bind: &Binding,
    ctx: &PropContext,
    src: &DiffArray,
    drop: &DropoutCtx,
) -> Result<DiffArray> {
    let tape = bind.tape();
    let h1 = layer.phi1.apply(bind, src, drop)?;
    if ctx.pair_src.is_empty() {
        return Ok(DiffArray::zeros(vec![ctx.num_tgt, h1.cols()]));
    }
    let keys = layer.key_mlp.apply(bind, src, drop)?;
    let qarr = bind.get(layer.query);
    let q = tape.reshape(qarr, vec![1, qarr.numel()])?;
    let logits = head_logits(bind, &keys, &q, layer.heads, layer.head_dim)?;
    let pair_logits = tape.gather_rows(&logits, &ctx.pair_src)?;
    let alpha = tape.softmax_over_segments(&pair_logits, &ctx.pair_tgt, ctx.num_tgt)?;
    let pair_vals = tape.gather_rows(&h1, &ctx.pair_src)?;
    let mut acc: Option<DiffArray> = None;
    for h in 0..layer.heads {
        let ah = tape.slice_channels(&alpha, h, 1)?;
        let weighted = tape.mul(&pair_vals, &ah)?;
        let pooled = tape.segment_sum(&weighted, &ctx.pair_tgt, ctx.num_tgt)?;
        acc = Some(match acc {
            Some(a) => tape.add(&a, &pooled)?,
            None => pooled,
        });
    }
    Ok(acc.unwrap())
}

impl AllSetTransformerLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let attn = allset_attention(self, bind, ctx, src, drop)?;
        let ff = self.ffn.apply(bind, &attn, drop)?;
        tape.add(&attn, &ff)
    }
}

// ---------------------------------------------------------------------------

/// Any of the five propagation layers.
#[derive(Clone, Debug)]
pub enum PropLayer {
    EhnnNaive(EhnnNaiveLayer),
    EhnnMlp(EhnnMlpLayer),
    EhnnTransformer(EhnnTransformerLayer),
    AllDeepSets(AllDeepSetsLayer),
    AllSetTransformer(AllSetTransformerLayer),
}

impl PropLayer {
    pub fn forward(
        &self,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        match self {
            PropLayer::EhnnNaive(l) => l.forward(bind, ctx, src, drop),
            PropLayer::EhnnMlp(l) => l.forward(bind, ctx, src, drop),
            PropLayer::EhnnTransformer(l) => l.forward(bind, ctx, src, drop),
            PropLayer::AllDeepSets(l) => l.forward(bind, ctx, src, drop),
            PropLayer::AllSetTransformer(l) => l.forward(bind, ctx, src, drop),
        }
    }
}

fn orders_vec(spec: &OrderSpec, rows: usize) -> Vec<usize> {
    match spec {
        OrderSpec::Uniform(p) => vec![*p; rows],
        OrderSpec::PerRow(ps) => ps.as_ref().clone(),
    }
}

fn distinct(xs: &[usize]) -> Vec<usize> {
    let mut d = xs.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Tape;
    use crate::hypergraph::{build_incidence, Features, Hypergraph};
    use crate::layers::{Direction, ParamStore};
    use crate::rng::Rng;

    fn ctx_for(h: &Hypergraph, dir: Direction) -> PropContext {
        PropContext::new(&build_incidence(h), dir)
    }

    fn node_feats(h: &Hypergraph) -> DiffArray {
        let f = h.node_features.as_ref().unwrap();
        DiffArray::from_vec(vec![f.rows(), f.cols], f.data.clone())
    }

    fn identity_table(store: &mut ParamStore, max_k: usize, max_l: usize, d: usize, local: f64, global: f64) -> ParamId {
        // W(.,.,1) = local * I, W(.,.,0) = global * I
        let mut rows = vec![0.0; max_k * max_l * 2 * d * d];
        for k in 1..=max_k {
            for l in 1..=max_l {
                for o in 0..2 {
                    let r = WeightHypernet::lookup_index(max_l, k, l, o);
                    let scale = if o == 1 { local } else { global };
                    for c in 0..d {
                        rows[r * d * d + c * d + c] = scale;
                    }
                }
            }
        }
        store.add("w", vec![max_k * max_l * 2, d * d], rows)
    }

    #[test]
    fn naive_local_identity_sums_members() {
        let h = Hypergraph::new(3, vec![vec![0, 1]])
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![1.0], vec![2.0], vec![4.0]]).unwrap())
            .unwrap();
        let mut store = ParamStore::new();
        let table = identity_table(&mut store, 1, 2, 1, 1.0, 0.0);
        let layer = EhnnNaiveLayer {
            w: WeightHypernet::Lookup { table, max_k: 1, max_l: 2 },
            bias: BiasNet::Zero,
            d_in: 1,
            d_out: 1,
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let out = layer
            .forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled())
            .unwrap();
        assert_eq!(out.data(), &[3.0]); // x0 + x1
    }

    #[test]
    fn naive_global_identity_pools_everything() {
        let h = Hypergraph::new(3, vec![vec![0, 1], vec![1, 2]])
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![1.0], vec![2.0], vec![4.0]]).unwrap())
            .unwrap();
        let mut store = ParamStore::new();
        let table = identity_table(&mut store, 1, 2, 1, 0.0, 1.0);
        let layer = EhnnNaiveLayer {
            w: WeightHypernet::Lookup { table, max_k: 1, max_l: 2 },
            bias: BiasNet::Zero,
            d_in: 1,
            d_out: 1,
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let out = layer
            .forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled())
            .unwrap();
        assert_eq!(out.data(), &[7.0, 7.0]); // every edge sees the global sum
    }

    #[test]
    fn naive_lookup_rejects_unseen_order() {
        let h = Hypergraph::new(4, vec![vec![0, 1, 2, 3]]) // order 4 edge
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![0.0]; 4]).unwrap())
            .unwrap();
        let mut store = ParamStore::new();
        let table = identity_table(&mut store, 1, 3, 1, 1.0, 0.0);
        let layer = EhnnNaiveLayer {
            w: WeightHypernet::Lookup { table, max_k: 1, max_l: 3 },
            bias: BiasNet::Zero,
            d_in: 1,
            d_out: 1,
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let err = layer.forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled());
        assert!(matches!(err, Err(Error::UnseenOrder { .. })));
    }

    fn single_linear_identity(store: &mut ParamStore, name: &str, d: usize) -> Mlp {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        let w = store.add(format!("{name}.w0"), vec![d, d], eye);
        let b = store.add_zeros(format!("{name}.b0"), vec![d]);
        Mlp {
            layers: vec![crate::layers::MlpLayer {
                w,
                b,
                relu_after: false,
                norm_after: false,
            }],
        }
    }

    #[test]
    fn alldeepsets_identity_sums_members() {
        let h = Hypergraph::new(4, vec![vec![0, 1, 2], vec![2, 3]])
            .unwrap()
            .with_node_features(
                Features::from_rows(vec![vec![1.0], vec![2.0], vec![4.0], vec![8.0]]).unwrap(),
            )
            .unwrap();
        let mut store = ParamStore::new();
        let phi1 = single_linear_identity(&mut store, "p1", 1);
        let phi2 = single_linear_identity(&mut store, "p2", 1);
        let layer = AllDeepSetsLayer { phi1, phi2 };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let out = layer
            .forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled())
            .unwrap();
        assert_eq!(out.data(), &[7.0, 12.0]);
    }

    #[test]
    fn alldeepsets_components_stay_isolated() {
        // two disconnected components; zeroing one never changes the other
        let h = |a: f64| {
            Hypergraph::new(4, vec![vec![0, 1], vec![2, 3]])
                .unwrap()
                .with_node_features(
                    Features::from_rows(vec![vec![a], vec![a * 2.0], vec![5.0], vec![6.0]]).unwrap(),
                )
                .unwrap()
        };
        let mut rng = Rng::new(12);
        let mut store = ParamStore::new();
        let layer_ve = AllDeepSetsLayer {
            phi1: Mlp::new(&mut store, &mut rng, "ve.p1", &[1, 8, 8]),
            phi2: Mlp::new(&mut store, &mut rng, "ve.p2", &[8, 8, 8]),
        };
        let layer_ev = AllDeepSetsLayer {
            phi1: Mlp::new(&mut store, &mut rng, "ev.p1", &[8, 8, 8]),
            phi2: Mlp::new(&mut store, &mut rng, "ev.p2", &[8, 8, 2]),
        };
        let run = |g: &Hypergraph| {
            let tape = Tape::new();
            let bind = Binding::constants(&store, &tape);
            let ve = ctx_for(g, Direction::NodeToEdge);
            let ev = ctx_for(g, Direction::EdgeToNode);
            let e = layer_ve
                .forward(&bind, &ve, &node_feats(g), &DropoutCtx::disabled())
                .unwrap();
            layer_second(&layer_ev, &bind, &ev, &e)
        };
        let full = run(&h(3.0));
        let zeroed = run(&h(0.0));
        // second component (nodes 2, 3) rows are bitwise unaffected
        assert_eq!(&full.data()[2 * 2..], &zeroed.data()[2 * 2..]);
        assert_ne!(&full.data()[..2 * 2], &zeroed.data()[..2 * 2]);
    }

    fn layer_second(
        layer: &AllDeepSetsLayer,
        bind: &Binding,
        ctx: &PropContext,
        src: &DiffArray,
    ) -> DiffArray {
        layer.forward(bind, ctx, src, &DropoutCtx::disabled()).unwrap()
    }

    #[test]
    fn ehnn_mlp_accepts_unseen_orders() {
        // hypernetworks evaluate any order: order-40 edge, finite output
        let h = Hypergraph::new(50, vec![(0..40).collect(), vec![40, 41]])
            .unwrap()
            .with_node_features(Features::from_rows((0..50).map(|i| vec![i as f64 / 50.0]).collect()).unwrap())
            .unwrap();
        let mut rng = Rng::new(77);
        let mut store = ParamStore::new();
        let emb = 8;
        let layer = EhnnMlpLayer {
            phi1: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(&mut store, &mut rng, "p1", &[emb + 1, 8, 8]) },
            phi2: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(&mut store, &mut rng, "p2", &[emb + 8, 8, 8]) },
            phi3: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(&mut store, &mut rng, "p3", &[emb + 8, 8, 8]) },
            bias: BiasNet::Hyper { emb_dim: emb, mlp: Mlp::new(&mut store, &mut rng, "b", &[emb, 8, 8]) },
            use_global: true,
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let out = layer
            .forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled())
            .unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out.shape(), &[2, 8]);
    }

    fn toy_transformer(store: &mut ParamStore, rng: &mut Rng, d_in: usize, d: usize, heads: usize) -> EhnnTransformerLayer {
        let emb = 4;
        let dh = d / heads;
        EhnnTransformerLayer {
            phi1: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(store, rng, "p1", &[emb + d_in, d, d]) },
            phi2: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(store, rng, "p2", &[emb + d, d, d]) },
            phi3: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(store, rng, "p3", &[emb + d, d, d]) },
            bias: BiasNet::Hyper { emb_dim: emb, mlp: Mlp::new(store, rng, "b", &[emb, d, d]) },
            query: QueryNet::Hyper { emb_dim: emb, mlp: Mlp::new(store, rng, "q", &[emb, heads * dh]) },
            key: CondMap::EmbedMlp { emb_dim: emb, mlp: Mlp::new(store, rng, "k", &[emb + d, heads * dh]) },
            value_mats: (0..heads).map(|h| store.add_glorot(format!("v{h}"), d, d, rng)).collect(),
            heads,
            head_dim: dh,
            ffn: Mlp::new(store, rng, "ffn", &[d, d, d]),
            use_global: true,
        }
    }

    #[test]
    fn transformer_uniform_keys_mean_uniform_attention() {
        // identical node features give identical keys, so attention over a
        // neighborhood degenerates to mean pooling: two same-order edges
        // with disjoint members produce identical rows
        let h = Hypergraph::new(4, vec![vec![0, 1], vec![2, 3]])
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![0.5]; 4]).unwrap())
            .unwrap();
        let mut rng = Rng::new(5);
        let mut store = ParamStore::new();
        let layer = toy_transformer(&mut store, &mut rng, 1, 4, 2);
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let out = layer
            .forward(&bind, &ctx, &node_feats(&h), &DropoutCtx::disabled())
            .unwrap();
        // identical inputs + uniform attention -> both edges get identical rows
        let d = out.cols();
        assert!(out
            .data()[..d]
            .iter()
            .zip(&out.data()[d..])
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn transformer_singleton_neighborhood_attention_is_one() {
        let h = Hypergraph::new(2, vec![vec![0]])
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![1.5], vec![-0.5]]).unwrap())
            .unwrap();
        let mut rng = Rng::new(6);
        let mut store = ParamStore::new();
        let mut layer = toy_transformer(&mut store, &mut rng, 1, 4, 2);
        layer.use_global = false;
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);

        // with a single incident source, softmax weight is exactly 1, so the
        // attention pool equals the member's value rows summed over heads
        let drop = DropoutCtx::disabled();
        let h1 = layer.phi1.apply(&bind, &ctx.src_orders, &node_feats(&h), &drop).unwrap();
        let mut expect = vec![0.0; 4];
        for v in &layer.value_mats {
            let vh = tape.matmul(&h1, bind.get(*v)).unwrap();
            for (e, x) in expect.iter_mut().zip(&vh.data()[..4]) {
                *e += x;
            }
        }
        let z = layer.phi2.apply(&bind, &OrderSpec::Uniform(1), &DiffArray::from_vec(vec![1, 4], expect), &drop).unwrap();
        let mut manual = layer.phi3.apply(&bind, &ctx.tgt_orders, &z, &drop).unwrap();
        if let Some(b) = layer.bias.apply(&bind, &ctx.tgt_orders, 1).unwrap() {
            manual = tape.add(&manual, &b).unwrap();
        }
        let ff = layer.ffn.apply(&bind, &manual, &drop).unwrap();
        let manual = tape.add(&manual, &ff).unwrap();

        let out = layer.forward(&bind, &ctx, &node_feats(&h), &drop).unwrap();
        for (a, b) in out.data().iter().zip(manual.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn allset_attention_is_constant_on_identical_features() {
        // the counting counterexample: identical features make every
        // attention output heads * phi1(x), regardless of hyperedge order
        let h = Hypergraph::new(6, vec![vec![0, 1], vec![0, 1, 2, 3, 4], vec![5, 0, 3]])
            .unwrap()
            .with_node_features(Features::from_rows(vec![vec![1.0, 1.0]; 6]).unwrap())
            .unwrap();
        let mut rng = Rng::new(9);
        let mut store = ParamStore::new();
        let heads = 3;
        let dh = 2;
        let layer = AllSetTransformerLayer {
            phi1: Mlp::new(&mut store, &mut rng, "p1", &[2, 5, 4]),
            key_mlp: Mlp::new(&mut store, &mut rng, "k", &[2, heads * dh]),
            query: store.add_glorot("q", 1, heads * dh, &mut rng),
            heads,
            head_dim: dh,
            ffn: Mlp::new(&mut store, &mut rng, "ffn", &[4, 4, 4]),
        };
        let tape = Tape::new();
        let bind = Binding::constants(&store, &tape);
        let ctx = ctx_for(&h, Direction::NodeToEdge);
        let drop = DropoutCtx::disabled();
        let attn = allset_attention(&layer, &bind, &ctx, &node_feats(&h), &drop).unwrap();

        // expected: heads * phi1(ones-row)
        let one = DiffArray::from_vec(vec![1, 2], vec![1.0, 1.0]);
        let p1 = layer.phi1.apply(&bind, &one, &drop).unwrap();
        for e in 0..h.num_edges() {
            for c in 0..4 {
                let got = attn.data()[e * 4 + c];
                let want = heads as f64 * p1.data()[c];
                assert!(
                    (got - want).abs() <= 1e-12,
                    "edge {e} channel {c}: {got} vs {want}"
                );
            }
        }
    }
}
