//! Command-line entry point: dataset generation, training, evaluation,
//! verification batteries, and the cost benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ehnn::bench::{run_bench, rows_to_csv, BenchConfig};
use ehnn::error::{Error, Result};
use ehnn::hypergraph::build_incidence;
use ehnn::layers::{build_model, ArchSpec, Model, Variant};
use ehnn::tasks::{
    load_classification_dataset, load_kedge_dataset, split_transductive, write_kedge_dataset,
    KEdgeConfig,
};
use ehnn::train::{
    evaluate_classification, evaluate_kedge, train_kedge, train_transductive, TrainConfig,
};
use ehnn::verify::{run_checks, Suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "ehnn", version, about = "Equivariant hypergraph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hyperedge-order identification dataset.
    GenKedge(GenKedgeArgs),
    /// Train a model on a generated dataset or a classification file.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Run the named verification batteries.
    Verify(VerifyArgs),
    /// Runtime/memory cost benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenKedgeArgs {
    #[arg(long)]
    out: PathBuf,
    /// seen | interp | extrap
    #[arg(long, default_value = "seen")]
    variant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    graphs_train: usize,
    #[arg(long, default_value_t = 20)]
    graphs_test: usize,
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    edges: usize,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (manifest.json) or classification JSON file.
    #[arg(long)]
    data: PathBuf,
    /// Model variant name or path to an architecture JSON file.
    #[arg(long)]
    model: String,
    /// Run directory for checkpoint, metrics.csv, and config echoes.
    #[arg(long)]
    out: PathBuf,
    /// Training-config JSON; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split seed for classification files without stored splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// oracle | equivariance | reductions | gradcheck | all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a perturbation into tied oracle weights (negative control;
    /// the oracle suite must then fail).
    #[arg(long)]
    perturb: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1024)]
    nodes: usize,
    #[arg(long, default_value_t = 128)]
    edges: usize,
    /// Hyperedge order range, e.g. 2..10 (inclusive).
    #[arg(long, default_value = "2..10")]
    orders: String,
    /// Variant name or `all`.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here in addition to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenKedge(a) => cmd_gen_kedge(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn ensure_empty_or_force(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(Error::InvalidConfig(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_gen_kedge(a: GenKedgeArgs) -> Result<ExitCode> {
    ensure_empty_or_force(&a.out, a.force)?;
    let mut cfg = match a.variant.as_str() {
        "seen" => KEdgeConfig::seen(a.seed),
        "interp" => KEdgeConfig::interpolation(a.seed),
        "extrap" => KEdgeConfig::extrapolation(a.seed),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown dataset variant `{other}` (seen|interp|extrap)"
            )))
        }
    };
    cfg.num_graphs_train = a.graphs_train;
    cfg.num_graphs_test = a.graphs_test;
    cfg.nodes_per_graph = a.nodes;
    cfg.edges_per_graph = a.edges;
    let (train, test) = write_kedge_dataset(&a.out, &cfg)?;
    println!(
        "wrote {train} train + {test} test graphs ({} nodes, {} hyperedges each) to {}",
        cfg.nodes_per_graph,
        cfg.edges_per_graph,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn resolve_arch(spec: &str, in_dim: usize, out_dim: usize) -> Result<ArchSpec> {
    if spec.ends_with(".json") {
        let arch: ArchSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)
            .map_err(|e| Error::Schema(format!("architecture file: {e}")))?;
        return Ok(arch);
    }
    let variant = Variant::parse(spec)?;
    Ok(ArchSpec {
        in_dim,
        out_dim,
        ..ArchSpec::synthetic(variant)
    })
}

fn load_train_config(a: &TrainArgs, default: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Schema(format!("config file: {e}")))?,
        None => default,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(wd) = a.weight_decay {
        cfg.weight_decay = wd;
    }
    Ok(cfg)
}

fn echo_configs(a: &TrainArgs, run: &Path, arch: &ArchSpec, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(run)?;
    if let Some(path) = &a.config {
        // byte-identical echo of the user-provided file
        std::fs::write(run.join("config_input.json"), std::fs::read(path)?)?;
    }
    let effective = serde_json::json!({
        "data": a.data.display().to_string(),
        "arch": arch,
        "train": cfg,
    });
    std::fs::write(
        run.join("effective_config.json"),
        serde_json::to_string_pretty(&effective)?,
    )?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    ensure_empty_or_force(&a.out, a.force)?;
    if a.data.is_dir() {
        let (train, test, _) = load_kedge_dataset(&a.data)?;
        let cfg = load_train_config(&a, TrainConfig::synthetic(a.seed.unwrap_or(0)))?;
        let arch = resolve_arch(&a.model, 1, 1)?;
        echo_configs(&a, &a.out, &arch, &cfg)?;
        let mut model = build_model(&arch, cfg.seed)?;
        let metrics = train_kedge(&mut model, &train, &test, &cfg, Some(&a.out))?;
        if metrics.diverged {
            println!("training diverged (non-finite loss); metrics recorded");
            return Ok(ExitCode::from(1));
        }
        println!(
            "best test accuracy {:.4} at epoch {} ({} epochs trained)",
            metrics.best_test,
            metrics.best_epoch,
            metrics.history.last().map_or(0, |e| e.epoch)
        );
    } else {
        let mut h = load_classification_dataset(&a.data)?;
        let cfg = load_train_config(&a, TrainConfig::transductive(a.seed.unwrap_or(0)))?;
        if h.splits.is_none() {
            h.splits = Some(split_transductive(
                h.num_nodes(),
                (0.5, 0.25, 0.25),
                cfg.seed,
            )?);
        }
        let classes = h
            .node_labels
            .as_ref()
            .map(|ls| ls.iter().map(|&l| l as usize + 1).max().unwrap_or(1))
            .unwrap_or(1);
        let in_dim = h.node_features.as_ref().map_or(1, |f| f.cols);
        let arch = resolve_arch(&a.model, in_dim, classes)?;
        echo_configs(&a, &a.out, &arch, &cfg)?;
        let mut model = build_model(&arch, cfg.seed)?;
        let metrics = train_transductive(&mut model, &h, &cfg, Some(&a.out))?;
        if metrics.diverged {
            println!("training diverged (non-finite loss); metrics recorded");
            return Ok(ExitCode::from(1));
        }
        println!(
            "best test accuracy {:.4} at epoch {}; test at best val {:.4}",
            metrics.best_test,
            metrics.best_epoch,
            metrics.test_at_best_val.unwrap_or(f64::NAN)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let model = Model::load(&a.checkpoint)?;
    if a.data.is_dir() {
        let (train, test, _) = load_kedge_dataset(&a.data)?;
        let tr = evaluate_kedge(&model, &train)?;
        let te = evaluate_kedge(&model, &test)?;
        println!(
            "train: accuracy {:.4} (excl marked {:.4}, balanced {:.4})",
            tr.accuracy, tr.accuracy_excluding_marked, tr.balanced_accuracy
        );
        println!(
            "test:  accuracy {:.4} (excl marked {:.4}, balanced {:.4})",
            te.accuracy, te.accuracy_excluding_marked, te.balanced_accuracy
        );
    } else {
        let mut h = load_classification_dataset(&a.data)?;
        if h.splits.is_none() {
            h.splits = Some(split_transductive(h.num_nodes(), (0.5, 0.25, 0.25), a.seed)?);
        }
        let splits = h.splits.clone().unwrap();
        let inc = build_incidence(&h);
        for (name, split) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            let eval = evaluate_classification(&model, &h, &inc, split)?;
            println!(
                "{name}: accuracy {:.4} over {} nodes",
                eval.accuracy,
                split.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let suite = Suite::parse(&a.suite)?;
    let opts = VerifyOptions {
        seed: a.seed,
        perturb: a.perturb,
    };
    let results = run_checks(suite, &opts);
    let mut failures = 0;
    for r in &results {
        println!(
            "[{}] {:<38} {:>8.1} ms  {}  {}",
            r.suite.name(),
            r.name,
            r.millis,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        );
        if !r.passed {
            failures += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failures);
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parse_orders(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split("..").collect();
    if parts.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "orders must look like LO..HI, got `{s}`"
        )));
    }
    let lo = parts[0]
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad order `{}`", parts[0])))?;
    let hi = parts[1]
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad order `{}`", parts[1])))?;
    if lo < 2 || hi < lo {
        return Err(Error::InvalidConfig(format!("bad order range {lo}..{hi}")));
    }
    Ok((lo, hi))
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    let (min_order, max_order) = parse_orders(&a.orders)?;
    let cfg = BenchConfig {
        nodes: a.nodes,
        edges: a.edges,
        min_order,
        max_order,
        hidden: a.hidden,
        repeats: a.repeats,
        seed: a.seed,
    };
    let variants: Vec<Variant> = if a.variant == "all" {
        vec![
            Variant::AllDeepSets,
            Variant::AllSetTransformer,
            Variant::EhnnNaiveLookup,
            Variant::EhnnNaiveHypernet,
            Variant::EhnnMlp,
            Variant::EhnnTransformer,
        ]
    } else {
        vec![Variant::parse(&a.variant)?]
    };
    let rows = run_bench(&variants, &cfg)?;
    let csv = rows_to_csv(&rows);
    print!("{csv}");
    // headline ratios when both sides were measured
    let find = |v: Variant| rows.iter().find(|r| r.variant == v);
    if let (Some(mlp), Some(ads)) = (find(Variant::EhnnMlp), find(Variant::AllDeepSets)) {
        println!(
            "# ehnn-mlp forward / alldeepsets forward = {:.2}x",
            mlp.forward_ms_mean / ads.forward_ms_mean
        );
    }
    if let (Some(naive), Some(mlp)) = (find(Variant::EhnnNaiveLookup), find(Variant::EhnnMlp)) {
        println!(
            "# ehnn-naive-lookup forward / ehnn-mlp forward = {:.2}x",
            naive.forward_ms_mean / mlp.forward_ms_mean
        );
    }
    if let Some(path) = a.out {
        std::fs::write(path, csv)?;
    }
    Ok(ExitCode::SUCCESS)
}
