//! Runtime and memory cost measurement on randomly wired hypergraphs. The
//! point of the protocol is the ordering between variants (per-message
//! weight materialization is far heavier than the three-MLP decomposition,
//! which costs a small constant over plain message passing), not absolute
//! milliseconds.

use std::time::Instant;

use crate::array::{live_bytes, peak_bytes, reset_peak_bytes, Tape};
use crate::error::{Error, Result};
use crate::hypergraph::{build_incidence, Features, Hypergraph};
use crate::layers::{build_model, ArchSpec, Binding, DropoutCtx, Variant};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub nodes: usize,
    pub edges: usize,
    pub min_order: usize,
    pub max_order: usize,
    pub hidden: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            nodes: 1024,
            edges: 128,
            min_order: 2,
            max_order: 10,
            hidden: 64,
            repeats: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub variant: Variant,
    pub forward_ms_mean: f64,
    pub forward_ms_std: Option<f64>,
    pub backward_ms_mean: f64,
    pub backward_ms_std: Option<f64>,
    /// Allocator-level accounting of bytes live in engine buffers, not OS
    /// resident size.
    pub peak_bytes: usize,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// Random benchmark instance: `edges` hyperedges of uniform random order,
/// gaussian node features at the model input width.
pub fn bench_hypergraph(cfg: &BenchConfig) -> Result<Hypergraph> {
    let mut rng = Rng::derive(cfg.seed, 0xbe);
    let edges: Vec<Vec<usize>> = (0..cfg.edges)
        .map(|_| {
            let k = cfg.min_order + rng.next_below(cfg.max_order - cfg.min_order + 1);
            rng.sample_distinct(cfg.nodes, k)
        })
        .collect();
    let feats = Features::from_rows(
        (0..cfg.nodes)
            .map(|_| (0..cfg.hidden).map(|_| rng.next_gaussian() * 0.1).collect())
            .collect(),
    )?;
    Hypergraph::new(cfg.nodes, edges)?.with_node_features(feats)
}

/// Forward/backward wall time and engine peak memory for one variant on a
/// shared instance, mean and sample std over `repeats` runs.
pub fn bench_variant(variant: Variant, h: &Hypergraph, cfg: &BenchConfig) -> Result<BenchRow> {
    let pairs: usize = h.edges().iter().map(|e| e.len()).sum();
    // guard on the naive layer's per-pair weight materialization
    let weight_elems = pairs * cfg.hidden * cfg.hidden;
    if weight_elems > 256_000_000 {
        return Err(Error::OracleGuard(format!(
            "bench instance needs {weight_elems} per-pair weight elements; reduce sizes"
        )));
    }
    let arch = ArchSpec {
        in_dim: cfg.hidden,
        hidden: cfg.hidden,
        order_emb_dim: cfg.hidden.next_multiple_of(2),
        max_lookup_order: cfg.max_order,
        ..ArchSpec::synthetic(variant)
    };
    let model = build_model(&arch, cfg.seed)?;
    let inc = build_incidence(h);
    let drop = DropoutCtx::disabled();

    let mut fwd = Vec::with_capacity(cfg.repeats);
    let mut bwd = Vec::with_capacity(cfg.repeats);
    let mut peak = 0usize;
    for _ in 0..cfg.repeats {
        let baseline = live_bytes();
        reset_peak_bytes();
        let tape = Tape::new();
        let bind = Binding::leaves(&model.store, &tape)?;
        let t0 = Instant::now();
        let out = model.forward(&bind, h, &inc, &drop)?;
        let loss = tape.sum_all(&out)?;
        let t1 = Instant::now();
        let grads = tape.backward(&loss)?;
        let t2 = Instant::now();
        std::hint::black_box(grads.for_leaf(bind.get(crate::layers::ParamId(0))));
        fwd.push((t1 - t0).as_secs_f64() * 1e3);
        bwd.push((t2 - t1).as_secs_f64() * 1e3);
        peak = peak.max(peak_bytes().saturating_sub(baseline));
    }
    let (fm, fs) = mean_std(&fwd);
    let (bm, bs) = mean_std(&bwd);
    Ok(BenchRow {
        variant,
        forward_ms_mean: fm,
        forward_ms_std: fs,
        backward_ms_mean: bm,
        backward_ms_std: bs,
        peak_bytes: peak,
    })
}

pub fn run_bench(variants: &[Variant], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let h = bench_hypergraph(cfg)?;
    variants
        .iter()
        .map(|&v| bench_variant(v, &h, cfg))
        .collect()
}

/// CSV: variant,forward_ms_mean,forward_ms_std,backward_ms_mean,
/// backward_ms_std,peak_bytes (std columns empty with a single repeat).
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("variant,forward_ms_mean,forward_ms_std,backward_ms_mean,backward_ms_std,peak_bytes\n");
    for r in rows {
        let fs = r.forward_ms_std.map_or(String::new(), |v| format!("{v:.4}"));
        let bs = r.backward_ms_std.map_or(String::new(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "{},{:.4},{},{:.4},{},{}\n",
            r.variant.name(),
            r.forward_ms_mean,
            fs,
            r.backward_ms_mean,
            bs,
            r.peak_bytes
        ));
    }
    out
}
