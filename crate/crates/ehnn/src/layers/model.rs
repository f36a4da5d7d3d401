//! Model assembly: a stack of node->edge / edge->node propagation layers
//! plus a classifier head, with a flat parameter registry for the optimizer
//! and a JSON checkpoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::DiffArray;
use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, IncidenceIndex};
use crate::rng::Rng;

use super::{
    Binding, BiasNet, CondMap, Direction, DropoutCtx, EhnnMlpLayer, EhnnNaiveLayer,
    EhnnTransformerLayer, Mlp, AllDeepSetsLayer, AllSetTransformerLayer, ParamStore, PropContext,
    PropLayer, QueryNet, WeightHypernet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    EhnnNaiveLookup,
    EhnnNaiveHypernet,
    EhnnMlp,
    EhnnTransformer,
    AllDeepSets,
    AllSetTransformer,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "ehnn-naive" | "ehnn-naive-lookup" => Ok(Variant::EhnnNaiveLookup),
            "ehnn-naive-hypernet" => Ok(Variant::EhnnNaiveHypernet),
            "ehnn-mlp" => Ok(Variant::EhnnMlp),
            "ehnn-transformer" => Ok(Variant::EhnnTransformer),
            "alldeepsets" => Ok(Variant::AllDeepSets),
            "allsettransformer" => Ok(Variant::AllSetTransformer),
            other => Err(Error::UnknownVariant(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::EhnnNaiveLookup => "ehnn-naive-lookup",
            Variant::EhnnNaiveHypernet => "ehnn-naive-hypernet",
            Variant::EhnnMlp => "ehnn-mlp",
            Variant::EhnnTransformer => "ehnn-transformer",
            Variant::AllDeepSets => "alldeepsets",
            Variant::AllSetTransformer => "allsettransformer",
        }
    }
}

/// Architecture description; echoed verbatim into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Number of node->edge->node modules (each contributes two
    /// propagation layers).
    pub modules: usize,
    pub heads: usize,
    pub order_emb_dim: usize,
    pub classifier_hidden: Option<usize>,
    pub dropout_mlp: f64,
    pub dropout_local: f64,
    pub dropout_global: f64,
    /// Ablation switch: global (overlap-0) interactions.
    pub use_global: bool,
    /// Ablation switch: sinusoidal order conditioning in the phi MLPs.
    pub use_order_conditioning: bool,
    /// Row layer-norm inside MLP hidden layers and after each propagation
    /// step; on for trained models, off in exact-equality constructions.
    pub layer_norm: bool,
    /// Order coverage of naive-EHNN lookup tables.
    pub max_lookup_order: usize,
    /// Hidden layers inside each phi MLP.
    #[serde(default = "default_phi_depth")]
    pub phi_depth: usize,
}

fn default_phi_depth() -> usize {
    1
}

impl ArchSpec {
    /// Two-layer architecture used on the synthetic benchmark: one
    /// node->edge->node module, hidden 64, 4 attention heads.
    pub fn synthetic(variant: Variant) -> ArchSpec {
        ArchSpec {
            variant,
            in_dim: 1,
            hidden: 64,
            out_dim: 1,
            modules: 1,
            heads: 4,
            order_emb_dim: 64,
            classifier_hidden: None,
            dropout_mlp: 0.0,
            dropout_local: 0.0,
            dropout_global: 0.0,
            use_global: true,
            use_order_conditioning: true,
            layer_norm: true,
            max_lookup_order: 10,
            phi_depth: 1,
        }
    }
}

/// A stack of propagation layers with a classifier head. Parameters live in
/// the [`ParamStore`]; forward passes bind them onto a caller-provided tape.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ArchSpec,
    pub store: ParamStore,
    pub stack: Vec<PropLayer>,
    pub classifier: Mlp,
}

fn cond_map(
    store: &mut ParamStore,
    rng: &mut Rng,
    name: &str,
    arch: &ArchSpec,
    in_dim: usize,
    out_dim: usize,
) -> CondMap {
    let dims = |first: usize| -> Vec<usize> {
        let mut d = vec![first];
        d.extend(std::iter::repeat(arch.hidden).take(arch.phi_depth));
        d.push(out_dim);
        d
    };
    if arch.use_order_conditioning {
        CondMap::EmbedMlp {
            emb_dim: arch.order_emb_dim,
            mlp: Mlp::with_norm(
                store,
                rng,
                name,
                &dims(arch.order_emb_dim + in_dim),
                arch.layer_norm,
            ),
        }
    } else {
        CondMap::SharedMlp {
            mlp: Mlp::with_norm(store, rng, name, &dims(in_dim), arch.layer_norm),
        }
    }
}

fn bias_hyper(store: &mut ParamStore, rng: &mut Rng, name: &str, arch: &ArchSpec, d: usize) -> BiasNet {
    BiasNet::Hyper {
        emb_dim: arch.order_emb_dim,
        mlp: Mlp::with_norm(store, rng, name, &[arch.order_emb_dim, arch.hidden, d], arch.layer_norm),
    }
}

/// Build a model with freshly initialized parameters.
pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<Model> {
    if arch.order_emb_dim % 2 != 0 {
        return Err(Error::InvalidConfig("order_emb_dim must be even".into()));
    }
    if arch.heads == 0 || arch.hidden % arch.heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "hidden {} not divisible by heads {}",
            arch.hidden, arch.heads
        )));
    }
    let mut rng = Rng::derive(seed, 0xeb);
    let mut store = ParamStore::new();
    let d = arch.hidden;
    let mut stack = Vec::new();
    for m in 0..arch.modules {
        for (step, dir_name) in [(0, "ve"), (1, "ev")] {
            let in_dim = if m == 0 && step == 0 { arch.in_dim } else { d };
            let prefix = format!("m{m}.{dir_name}");
            let layer = match arch.variant {
                Variant::EhnnMlp => PropLayer::EhnnMlp(EhnnMlpLayer {
                    phi1: cond_map(&mut store, &mut rng, &format!("{prefix}.phi1"), arch, in_dim, d),
                    phi2: cond_map(&mut store, &mut rng, &format!("{prefix}.phi2"), arch, d, d),
                    phi3: cond_map(&mut store, &mut rng, &format!("{prefix}.phi3"), arch, d, d),
                    bias: if arch.use_order_conditioning {
                        bias_hyper(&mut store, &mut rng, &format!("{prefix}.bias"), arch, d)
                    } else {
                        BiasNet::Zero
                    },
                    use_global: arch.use_global,
                }),
                Variant::EhnnTransformer => {
                    let head_dim = d / arch.heads;
                    PropLayer::EhnnTransformer(EhnnTransformerLayer {
                        phi1: cond_map(&mut store, &mut rng, &format!("{prefix}.phi1"), arch, in_dim, d),
                        phi2: cond_map(&mut store, &mut rng, &format!("{prefix}.phi2"), arch, d, d),
                        phi3: cond_map(&mut store, &mut rng, &format!("{prefix}.phi3"), arch, d, d),
                        bias: if arch.use_order_conditioning {
                            bias_hyper(&mut store, &mut rng, &format!("{prefix}.bias"), arch, d)
                        } else {
                            BiasNet::Zero
                        },
                        query: QueryNet::Hyper {
                            emb_dim: arch.order_emb_dim,
                            mlp: Mlp::new(
                                &mut store,
                                &mut rng,
                                &format!("{prefix}.query"),
                                &[arch.order_emb_dim, d],
                            ),
                        },
                        key: CondMap::EmbedMlp {
                            emb_dim: arch.order_emb_dim,
                            mlp: Mlp::new(
                                &mut store,
                                &mut rng,
                                &format!("{prefix}.key"),
                                &[arch.order_emb_dim + d, d],
                            ),
                        },
                        value_mats: (0..arch.heads)
                            .map(|h| store.add_glorot(format!("{prefix}.value{h}"), d, d, &mut rng))
                            .collect(),
                        heads: arch.heads,
                        head_dim,
                        ffn: Mlp::with_norm(&mut store, &mut rng, &format!("{prefix}.ffn"), &[d, d, d], arch.layer_norm),
                        use_global: arch.use_global,
                    })
                }
                Variant::EhnnNaiveLookup => {
                    let rows = arch.max_lookup_order * arch.max_lookup_order * 2;
                    let a = (6.0 / (in_dim + d) as f64).sqrt();
                    let values: Vec<f64> = (0..rows * in_dim * d)
                        .map(|_| rng.next_symmetric(a))
                        .collect();
                    let table = store.add(
                        format!("{prefix}.wtable"),
                        vec![rows, in_dim * d],
                        values,
                    );
                    let bias_table =
                        store.add_zeros(format!("{prefix}.btable"), vec![arch.max_lookup_order, d]);
                    PropLayer::EhnnNaive(EhnnNaiveLayer {
                        w: WeightHypernet::Lookup {
                            table,
                            max_k: arch.max_lookup_order,
                            max_l: arch.max_lookup_order,
                        },
                        bias: BiasNet::Lookup {
                            table: bias_table,
                            max_order: arch.max_lookup_order,
                        },
                        d_in: in_dim,
                        d_out: d,
                    })
                }
                Variant::EhnnNaiveHypernet => PropLayer::EhnnNaive(EhnnNaiveLayer {
                    w: WeightHypernet::Mlp {
                        emb_dim: arch.order_emb_dim,
                        mlp: Mlp::with_norm(
                            &mut store,
                            &mut rng,
                            &format!("{prefix}.whyper"),
                            &[3 * arch.order_emb_dim, arch.hidden, in_dim * d],
                            arch.layer_norm,
                        ),
                    },
                    bias: bias_hyper(&mut store, &mut rng, &format!("{prefix}.bias"), arch, d),
                    d_in: in_dim,
                    d_out: d,
                }),
                Variant::AllDeepSets => PropLayer::AllDeepSets(AllDeepSetsLayer {
                    phi1: Mlp::with_norm(&mut store, &mut rng, &format!("{prefix}.phi1"), &[in_dim, d, d], arch.layer_norm),
                    phi2: Mlp::with_norm(&mut store, &mut rng, &format!("{prefix}.phi2"), &[d, d, d], arch.layer_norm),
                }),
                Variant::AllSetTransformer => {
                    let head_dim = d / arch.heads;
                    PropLayer::AllSetTransformer(AllSetTransformerLayer {
                        phi1: Mlp::with_norm(&mut store, &mut rng, &format!("{prefix}.phi1"), &[in_dim, d, d], arch.layer_norm),
                        key_mlp: Mlp::new(&mut store, &mut rng, &format!("{prefix}.key"), &[in_dim, d]),
                        query: store.add_glorot(format!("{prefix}.query"), 1, d, &mut rng),
                        heads: arch.heads,
                        head_dim,
                        ffn: Mlp::with_norm(&mut store, &mut rng, &format!("{prefix}.ffn"), &[d, d, d], arch.layer_norm),
                    })
                }
            };
            stack.push(layer);
        }
    }
    let clf_in = if arch.modules == 0 { arch.in_dim } else { d };
    let classifier = match arch.classifier_hidden {
        Some(h) => Mlp::with_norm(&mut store, &mut rng, "classifier", &[clf_in, h, arch.out_dim], arch.layer_norm),
        None => Mlp::new(&mut store, &mut rng, "classifier", &[clf_in, arch.out_dim]),
    };
    Ok(Model {
        arch: arch.clone(),
        store,
        stack,
        classifier,
    })
}

impl Model {
    /// Node logits `[n, out_dim]` from the hypergraph's node features.
    pub fn forward(
        &self,
        bind: &Binding,
        h: &Hypergraph,
        incidence: &IncidenceIndex,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let feats = h.node_features.as_ref().ok_or_else(|| {
            Error::InvalidConfig("model forward requires node features".into())
        })?;
        if feats.cols != self.arch.in_dim {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!("{} feature dims vs in_dim {}", feats.cols, self.arch.in_dim),
            });
        }
        let x = DiffArray::from_vec(vec![feats.rows(), feats.cols], feats.data.clone());
        self.forward_features(bind, &x, incidence, drop)
    }

    pub fn forward_features(
        &self,
        bind: &Binding,
        node_feats: &DiffArray,
        incidence: &IncidenceIndex,
        drop: &DropoutCtx,
    ) -> Result<DiffArray> {
        let tape = bind.tape();
        let ve = PropContext::new(incidence, Direction::NodeToEdge);
        let ev = PropContext::new(incidence, Direction::EdgeToNode);
        let mut x = node_feats.clone();
        for m in 0..self.arch.modules {
            let mut e = self.stack[2 * m].forward(bind, &ve, &x, drop)?;
            if self.arch.layer_norm {
                e = tape.layer_norm_rows(&e)?;
            }
            let e = tape.relu(&e)?;
            let mut v = self.stack[2 * m + 1].forward(bind, &ev, &e, drop)?;
            if self.arch.layer_norm {
                v = tape.layer_norm_rows(&v)?;
            }
            x = tape.relu(&v)?;
        }
        self.classifier.apply(bind, &x, drop)
    }

    // -- checkpointing ------------------------------------------------------

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            arch: self.arch.clone(),
            params: self
                .store
                .entries()
                .iter()
                .map(|e| ParamDump {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.values.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Model::from_checkpoint(ckpt)
    }

    /// Rebuild the architecture from the echoed spec and validate every
    /// stored tensor against it by name and shape before loading values.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Model> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!(
                "format `{}`, expected `{CHECKPOINT_FORMAT}`",
                ckpt.format
            )));
        }
        let mut model = build_model(&ckpt.arch, 0)?;
        if ckpt.params.len() != model.store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} tensors stored, architecture has {}",
                ckpt.params.len(),
                model.store.len()
            )));
        }
        for (i, dump) in ckpt.params.iter().enumerate() {
            let entry = model.store.entry(super::ParamId(i));
            if entry.name != dump.name || entry.shape != dump.shape {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {i}: `{}` {:?} vs `{}` {:?}",
                    dump.name, dump.shape, entry.name, entry.shape
                )));
            }
            if dump.data.len() != entry.values.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor `{}` has {} values, expected {}",
                    dump.name,
                    dump.data.len(),
                    entry.values.len()
                )));
            }
            model.store.set_values(super::ParamId(i), dump.data.clone());
        }
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "ehnn-checkpoint-v1";

/// Named parameter tensors plus the architecture spec echoed verbatim.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub arch: ArchSpec,
    pub params: Vec<ParamDump>,
}

#[derive(Serialize, Deserialize)]
pub struct ParamDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
