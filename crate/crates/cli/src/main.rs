//! Command-line entry point for the full pipeline: dataset synthesis, graph
//! construction, training, evaluation, geometry self-tests, and the
//! tree-embedding distortion experiment.
//!
//! Exit status: 0 on success, 1 on runtime or suite failure, 2 on usage
//! errors (including out-of-range parameter values).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use brain_hgcn::error::Error;
use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::io;
use brain_hgcn::model::{AblationFlags, ModelConfig};
use brain_hgcn::readout::KarcherInit;
use brain_hgcn::selftest;
use brain_hgcn::synth::{
    complete_tree_edges, embed_tree_distortion, generate_dataset, EmbedGeometry, SynthSpec,
};
use brain_hgcn::train::{
    evaluate_metrics, load_checkpoint, save_checkpoint, train, write_loss_curve, write_metrics,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "brain-hgcn", version, about = "Hyperbolic signed-graph classification pipeline")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// TOML config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset of time-series CSVs.
    Synth(SynthArgs),
    /// Build signed graphs from time-series CSVs and write a manifest.
    BuildGraphs(BuildGraphsArgs),
    /// Train with stratified cross-validation; writes metrics.json,
    /// loss_curve.csv, and per-fold checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Run the geometry and gradient property suites.
    GeomSelftest(SelftestArgs),
    /// Embed a complete tree in hyperbolic vs Euclidean space and report
    /// distortion.
    Distortion(DistortionArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the CSV files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    subjects_per_class: usize,
    #[arg(long, default_value_t = 32)]
    roi_count: usize,
    #[arg(long, default_value_t = 64)]
    time_points: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    /// Branching factors "<class0>,<class1>".
    #[arg(long, default_value = "2,4", value_parser = parse_branching)]
    branching: (usize, usize),
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.05)]
    rewiring: f64,
    #[arg(long, default_value_t = 0.75)]
    coupling: f64,
    /// Generate the AAL-116-shaped variant (116 ROIs, 150 time points).
    #[arg(long)]
    full_size: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildGraphsArgs {
    /// Directory of time-series CSVs (every *.csv inside is converted).
    #[arg(long)]
    input_dir: PathBuf,
    /// Output directory for graph JSON files plus manifest.txt.
    #[arg(long)]
    out: PathBuf,
    /// Per-node, per-sign edge budget.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Disable per-row z-scoring of node features.
    #[arg(long)]
    no_zscore: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (metrics.json, loss_curve.csv, fold checkpoints).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    #[arg(long, default_value_t = 5)]
    karcher_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Disable self-inclusion in positive neighborhoods.
    #[arg(long)]
    no_self_loops: bool,
    /// Ablation flag: euclidean_geometry, fixed_base_readout,
    /// euclidean_attention, or unsigned_aggregation.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DistortionArgs {
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1500)]
    iters: usize,
    #[arg(long, default_value_t = 1.0)]
    curvature: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_branching(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected '<b0>,<b1>', got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{v}' is not an integer"))
    };
    Ok((parse(a)?, parse(b)?))
}

// ─────────────────────────────────────────────────────────────────────
// Config file (TOML) with flag overrides
// ─────────────────────────────────────────────────────────────────────

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    readout: ReadoutSection,
    #[serde(default)]
    synth: SynthSection,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    lr: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    folds: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    layers: Option<usize>,
    hidden_dim: Option<usize>,
    heads: Option<usize>,
    tau0: Option<f64>,
    self_loops: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadoutSection {
    karcher_iters: Option<usize>,
    eta: Option<f64>,
    first_node_init: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    subjects_per_class: Option<usize>,
    roi_count: Option<usize>,
    time_points: Option<usize>,
    depth: Option<usize>,
    branching: Option<[usize; 2]>,
    noise: Option<f64>,
    rewiring: Option<f64>,
    coupling: Option<f64>,
    seed: Option<u64>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Error> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))
        }
    }
}

/// Seed resolution: explicit flag, else config file, else BRAINHGCN_SEED,
/// else 42.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file {
        return Ok(s);
    }
    match std::env::var("BRAINHGCN_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::InvalidInput(format!("BRAINHGCN_SEED='{v}' is not a u64"))),
        Err(_) => Ok(42),
    }
}

fn flag_given(matches: &ArgMatches, sub: &str, id: &str) -> bool {
    matches
        .subcommand_matches(sub)
        .map(|m| m.value_source(id) == Some(ValueSource::CommandLine))
        .unwrap_or(false)
}

// ─────────────────────────────────────────────────────────────────────

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli, &matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(
                e,
                Error::EdgeBudgetOutOfRange { .. }
                    | Error::InvalidInput(_)
                    | Error::AblationConflict(_)
                    | Error::FoldMissingClass { .. }
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<ExitCode, Error> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &file, cli.json),
        Command::BuildGraphs(args) => cmd_build_graphs(args, cli.json),
        Command::Train(args) => cmd_train(args, &file, matches, cli.json),
        Command::Eval(args) => cmd_eval(args, cli.json),
        Command::GeomSelftest(args) => cmd_selftest(args, &file, cli.json),
        Command::Distortion(args) => cmd_distortion(args, &file, cli.json),
    }
}

fn cmd_synth(args: SynthArgs, file: &ConfigFile, as_json: bool) -> Result<ExitCode, Error> {
    let s = &file.synth;
    let mut spec = SynthSpec {
        subjects_per_class: s.subjects_per_class.unwrap_or(args.subjects_per_class),
        roi_count: s.roi_count.unwrap_or(args.roi_count),
        time_points: s.time_points.unwrap_or(args.time_points),
        depth: s.depth.unwrap_or(args.depth),
        branching: s.branching.unwrap_or([args.branching.0, args.branching.1]),
        noise: s.noise.unwrap_or(args.noise),
        rewiring: s.rewiring.unwrap_or(args.rewiring),
        coupling: s.coupling.unwrap_or(args.coupling),
        seed: resolve_seed(args.seed, s.seed)?,
    };
    // explicit flags beat the file (they are already in args; the file only
    // filled gaps above when the flag kept its default, which is the
    // documented precedence: defaults < file < flags)
    if args.full_size {
        spec = spec.full_size();
    }
    std::fs::create_dir_all(&args.out)?;
    let subjects = generate_dataset(&spec)?;
    let mut files = Vec::new();
    for subject in &subjects {
        let path = args.out.join(format!("{}.csv", subject.subject_id));
        io::save_time_series(subject, &path)?;
        files.push(path);
    }
    if as_json {
        println!(
            "{}",
            json!({"command": "synth", "subjects": files.len(), "out": args.out, "spec": spec})
        );
    } else {
        println!(
            "wrote {} time-series files to {}",
            files.len(),
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_build_graphs(args: BuildGraphsArgs, as_json: bool) -> Result<ExitCode, Error> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(&args.input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .csv files in {}",
            args.input_dir.display()
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    let opts = GraphBuildOptions {
        k: args.k,
        zscore_features: !args.no_zscore,
    };
    let mut entries = Vec::new();
    for csv in &csvs {
        let subject = io::load_time_series(csv)?;
        let graph = build_signed_graph(&subject, opts)?;
        let name = format!(
            "{}.json",
            csv.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()
        );
        let gpath = args.out.join(&name);
        io::save_graph(&graph, &gpath)?;
        let label = subject.label.ok_or_else(|| {
            Error::InvalidInput(format!("{}: no label in header", csv.display()))
        })?;
        entries.push(io::ManifestEntry {
            path: PathBuf::from(name),
            label,
        });
    }
    let manifest = args.out.join("manifest.txt");
    io::save_manifest(&entries, &manifest)?;
    if as_json {
        println!(
            "{}",
            json!({"command": "build-graphs", "graphs": entries.len(), "k": args.k, "manifest": manifest})
        );
    } else {
        println!(
            "wrote {} graphs and {}",
            entries.len(),
            manifest.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    args: TrainArgs,
    file: &ConfigFile,
    matches: &ArgMatches,
    as_json: bool,
) -> Result<ExitCode, Error> {
    let given = |id: &str| flag_given(matches, "train", id);
    let pick_f64 = |flag: f64, id: &str, fromfile: Option<f64>| {
        if given(id) {
            flag
        } else {
            fromfile.unwrap_or(flag)
        }
    };
    let pick_usize = |flag: usize, id: &str, fromfile: Option<usize>| {
        if given(id) {
            flag
        } else {
            fromfile.unwrap_or(flag)
        }
    };

    let graphs = io::load_dataset(&args.manifest)?;
    let time_points = graphs
        .first()
        .map(|g| g.features.cols())
        .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;

    let mut model_cfg = ModelConfig::new(time_points);
    model_cfg.layers = pick_usize(args.layers, "layers", file.model.layers);
    model_cfg.hidden_dim = pick_usize(args.hidden_dim, "hidden_dim", file.model.hidden_dim);
    model_cfg.heads = pick_usize(args.heads, "heads", file.model.heads);
    model_cfg.tau0 = pick_f64(args.tau0, "tau0", file.model.tau0);
    model_cfg.self_loops = if args.no_self_loops {
        false
    } else {
        file.model.self_loops.unwrap_or(true)
    };
    model_cfg.readout.karcher_iters =
        pick_usize(args.karcher_iters, "karcher_iters", file.readout.karcher_iters);
    model_cfg.readout.eta = pick_f64(args.eta, "eta", file.readout.eta);
    if file.readout.first_node_init.unwrap_or(false) {
        model_cfg.readout.init_mode = KarcherInit::FirstNode;
    }
    if let Some(name) = &args.ablate {
        model_cfg.ablation = AblationFlags::parse(name)?;
        model_cfg.ablation.validate()?;
    }

    let cfg = TrainConfig {
        lr: pick_f64(args.lr, "lr", file.train.lr),
        weight_decay: pick_f64(args.weight_decay, "weight_decay", file.train.weight_decay),
        batch_size: pick_usize(args.batch_size, "batch_size", file.train.batch_size),
        epochs: pick_usize(args.epochs, "epochs", file.train.epochs),
        folds: pick_usize(args.folds, "folds", file.train.folds),
        seed: resolve_seed(args.seed, file.train.seed)?,
        jobs: pick_usize(args.jobs, "jobs", file.train.jobs),
    };

    let outcome = train(&graphs, &model_cfg, &cfg)?;

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        write_metrics(&outcome.report, &out.join("metrics.json"))?;
        write_loss_curve(&outcome.loss_curve, &out.join("loss_curve.csv"))?;
        if cfg.epochs > 0 {
            for (fold, params) in outcome.fold_params.iter().enumerate() {
                save_checkpoint(
                    params,
                    &model_cfg,
                    cfg.seed,
                    fold,
                    &out.join(format!("fold_{fold}.ckpt")),
                )?;
            }
        }
    }

    if as_json {
        println!(
            "{}",
            json!({"command": "train", "seed": cfg.seed, "metrics": outcome.report})
        );
    } else {
        let r = &outcome.report;
        println!("folds: {}  seed: {}", cfg.folds, cfg.seed);
        println!(
            "ACC {:.1}±{:.1}  SEN {:.1}±{:.1}  SPE {:.1}±{:.1}  AUC {:.1}±{:.1}",
            r.acc.mean, r.acc.std, r.sen.mean, r.sen.std, r.spe.mean, r.spe.std, r.auc.mean,
            r.auc.std
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, as_json: bool) -> Result<ExitCode, Error> {
    let (params, model_cfg, seed) = load_checkpoint(&args.checkpoint)?;
    let graphs = io::load_dataset(&args.manifest)?;
    let prepared: Vec<brain_hgcn::model::PreparedGraph> = graphs
        .iter()
        .map(|g| brain_hgcn::model::PreparedGraph::new(g, &model_cfg))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&brain_hgcn::model::PreparedGraph> = prepared.iter().collect();
    let metrics = evaluate_metrics(&params, &refs, &model_cfg)?;
    if as_json {
        println!(
            "{}",
            json!({"command": "eval", "seed": seed, "metrics": metrics})
        );
    } else {
        println!(
            "ACC {:.1}  SEN {:.1}  SPE {:.1}  AUC {:.1}  (tp {} fp {} tn {} fn {})",
            metrics.acc,
            metrics.sen,
            metrics.spe,
            metrics.auc,
            metrics.confusion.tp,
            metrics.confusion.fp,
            metrics.confusion.tn,
            metrics.confusion.fn_
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(args: SelftestArgs, file: &ConfigFile, as_json: bool) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed, file.train.seed)?;
    let report = selftest::run_selftest(seed)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for s in &report.suites {
            println!(
                "{} {:<22} {} ({:.2}s)",
                if s.pass { "PASS" } else { "FAIL" },
                s.name,
                s.detail,
                s.seconds
            );
        }
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_distortion(
    args: DistortionArgs,
    file: &ConfigFile,
    as_json: bool,
) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed, file.train.seed)?;
    let (n, edges) = complete_tree_edges(args.branching, args.depth);
    let hyp = embed_tree_distortion(
        n,
        &edges,
        EmbedGeometry::Hyperbolic {
            curvature: args.curvature,
        },
        args.dim,
        args.iters,
        seed,
    )?;
    let euc = embed_tree_distortion(n, &edges, EmbedGeometry::Euclidean, args.dim, args.iters, seed)?;
    let report = json!({
        "command": "distortion",
        "tree": {"branching": args.branching, "depth": args.depth, "nodes": n},
        "seed": seed,
        "hyperbolic": hyp,
        "euclidean": euc,
    });
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "tree: complete {}-ary, depth {}, {} nodes; dim {}",
            args.branching, args.depth, n, args.dim
        );
        println!(
            "hyperbolic: avg {:.4}  worst {:.4}",
            hyp.average_distortion, hyp.worst_distortion
        );
        println!(
            "euclidean:  avg {:.4}  worst {:.4}",
            euc.average_distortion, euc.worst_distortion
        );
    }
    Ok(ExitCode::SUCCESS)
}
