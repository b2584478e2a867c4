use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::IteratorRandom;

use vpgnn::eval::{bpwc, run_benchmark, ModeSpec, Setting};
use vpgnn::graph::{load_graph, read_label_file, GraphPaths, OrderGraph};
use vpgnn::model_io::{load_model, save_tuned, TunedArtifact};
use vpgnn::pipeline::{
    ablation_table, build_benchmark, curve_csv, run_pipeline, sweep_eta, write_benchmark, write_pretrain, RunConfig,
    Stage, StageError, StageExt, REPORT_FILE,
};
use vpgnn::pretrain::pretrain;
use vpgnn::prompt::{tune, LabeledSet, TuneMode};
use vpgnn::rng::RngStream;
use vpgnn::Error;

pub const TUNED_FILE: &str = "tuned.bin";
pub const TUNE_CURVE: &str = "tune_curve.csv";

#[derive(Parser)]
#[command(name = "vpgnn", version, about = "Voucher-abuse detection with graph pre-training and prompt tuning")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world and write its graph files and label CSVs.
    Gen,
    /// Pre-train the encoder on a graph directory.
    Pretrain {
        /// Directory holding edges.txt and features.csv.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Fine-tune a pre-trained model on labeled nodes.
    Finetune(FinetuneArgs),
    /// Benchmark tuning modes over repeated splits of a fully labeled graph.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Comma-separated modes; defaults to eval.modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<TuneMode>>,
        /// e.g. 10-shot, 20-shot, semi, semi:100
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        splits: Option<usize>,
    },
    /// Precision-weighted coverage relative to a base model, in percent.
    Bpwc {
        #[arg(long)]
        prec: f64,
        #[arg(long)]
        tp: u64,
        #[arg(long)]
        prec_base: f64,
        #[arg(long)]
        tp_base: u64,
    },
    /// Generate, pre-train, and evaluate every configured mode.
    Pipeline,
    /// Evaluate tune.mode at several neighbor counts on shared splits.
    SweepEta {
        /// Comma-separated η values; defaults to eval.etas.
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// node_id,label CSV of training labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Optional node_id,label CSV used for epoch selection.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    mode: Option<TuneMode>,
    #[arg(long)]
    eta: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// When the label file holds only anomalies, draw this many unlabeled
    /// nodes per anomaly as normal examples.
    #[arg(long, default_value_t = 19)]
    neg_ratio: usize,
}

type CliResult<T> = Result<T, StageError>;

fn config_err(msg: impl Into<String>) -> StageError {
    StageError {
        stage: Stage::Config,
        source: Error::Config(msg.into()),
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).stage(Stage::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = Some(o.clone());
    }
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, key: Option<&PathBuf>, name: &str) -> CliResult<PathBuf> {
    let p = flag
        .or(key)
        .cloned()
        .ok_or_else(|| config_err(format!("--{name} (or paths.{name}) is required")))?;
    if !p.exists() {
        return Err(config_err(format!("{name} path {} does not exist", p.display())));
    }
    Ok(p)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn read_graph(dir: &Path, stage: Stage) -> CliResult<OrderGraph> {
    Ok(load_graph(&GraphPaths::in_dir(dir)).stage(stage)?.0)
}

fn labeled_from_file(path: &Path, g: &OrderGraph, neg_ratio: usize, seed: u64) -> vpgnn::Result<LabeledSet> {
    let map = read_label_file(path)?;
    let mut items: Vec<(usize, u8)> = map.iter().map(|(&n, &l)| (n, l)).collect();
    if !items.is_empty() && items.iter().all(|&(_, l)| l == 1) && neg_ratio > 0 {
        let mut rng = RngStream::derive(seed, 0x4E6);
        let pool = (0..g.n_nodes()).filter(|n| !map.contains_key(n));
        let mut negs = pool.choose_multiple(&mut rng, neg_ratio * items.len());
        negs.sort_unstable();
        items.extend(negs.into_iter().map(|n| (n, 0)));
    }
    LabeledSet::new(items, g.n_nodes())
}

fn cmd_gen(cfg: &RunConfig) -> CliResult<()> {
    let dir = out_dir(cfg);
    let b = build_benchmark(&cfg.world_a()).stage(Stage::Gen)?;
    let pseudo = write_benchmark(&b, &cfg.rules, &dir).stage(Stage::Gen)?;
    println!(
        "wrote {} orders ({} abusive, {} pseudo-labeled), {} edges to {}",
        b.graph.n_nodes(),
        b.world.n_abusive(),
        pseudo.len(),
        b.graph.n_edges(),
        dir.display()
    );
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, graph: Option<&PathBuf>) -> CliResult<()> {
    let gdir = required(graph, cfg.paths.graph.as_ref(), "graph")?;
    let g = read_graph(&gdir, Stage::Pretrain)?;
    let out = pretrain(&g, &cfg.pretrain_config()).stage(Stage::Pretrain)?;
    let dir = out_dir(cfg);
    write_pretrain(&out, &dir).stage(Stage::Pretrain)?;
    println!(
        "loss {:.4} -> {:.4} over {} epochs; model written to {}",
        out.curve[0],
        out.model.meta.final_loss,
        out.model.meta.epochs,
        dir.display()
    );
    Ok(())
}

fn cmd_finetune(cfg: &RunConfig, a: &FinetuneArgs) -> CliResult<()> {
    let mut tcfg = cfg.tune_config();
    if let Some(m) = a.mode {
        tcfg.mode = m;
    }
    if let Some(v) = a.eta {
        tcfg.eta = v;
    }
    if let Some(v) = a.lambda {
        tcfg.lambda = v;
    }
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.lr {
        tcfg.lr = v;
    }
    tcfg.validate().stage(Stage::Config)?;
    let model_path = required(a.model.as_ref(), cfg.paths.model.as_ref(), "model")?;
    let gdir = required(a.graph.as_ref(), cfg.paths.graph.as_ref(), "graph")?;
    let labels = required(a.labels.as_ref(), cfg.paths.labels.as_ref(), "labels")?;
    let model = load_model(&model_path).stage(Stage::Finetune)?;
    let g = read_graph(&gdir, Stage::Finetune)?;
    let train = labeled_from_file(&labels, &g, a.neg_ratio, tcfg.seed).stage(Stage::Finetune)?;
    let valid = match &a.valid {
        Some(p) => Some(labeled_from_file(p, &g, 0, tcfg.seed).stage(Stage::Finetune)?),
        None => None,
    };
    let out = tune(&model, &g, &train, &tcfg, valid.as_ref()).stage(Stage::Finetune)?;
    let dir = out_dir(cfg);
    let artifact = TunedArtifact {
        mode: out.mode,
        meta: model.meta.clone(),
        classifier: out.classifier,
    };
    save_tuned(&artifact, &dir.join(TUNED_FILE)).stage(Stage::Finetune)?;
    fs::write(dir.join(TUNE_CURVE), curve_csv(&out.curve))
        .map_err(Error::from)
        .stage(Stage::Finetune)?;
    println!(
        "{} on {} labels: loss {:.4} -> {:.4}, kept epoch {}; written to {}",
        out.mode,
        train.len(),
        out.curve[0],
        out.curve.last().copied().unwrap_or(f64::NAN),
        out.selected_epoch,
        dir.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    model: Option<&PathBuf>,
    graph: Option<&PathBuf>,
    modes: Option<&Vec<TuneMode>>,
    setting: Option<Setting>,
    splits: Option<usize>,
) -> CliResult<()> {
    let model_path = required(model, cfg.paths.model.as_ref(), "model")?;
    let gdir = required(graph, cfg.paths.graph.as_ref(), "graph")?;
    let modes = modes.unwrap_or(&cfg.eval.modes);
    if modes.is_empty() {
        return Err(config_err("no modes to evaluate"));
    }
    let model = load_model(&model_path).stage(Stage::Eval)?;
    let g = read_graph(&gdir, Stage::Eval)?;
    let base = cfg.tune_config();
    let specs: Vec<ModeSpec> = modes.iter().map(|&m| ModeSpec::from_mode(m, &base)).collect();
    let report = run_benchmark(
        &g,
        &model,
        &specs,
        setting.unwrap_or(cfg.eval.setting),
        splits.unwrap_or(cfg.eval.splits),
        cfg.eval_seed(),
    )
    .stage(Stage::Eval)?;
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir).map_err(Error::from).stage(Stage::Report)?;
    let json = report.to_json().stage(Stage::Report)?;
    fs::write(dir.join(REPORT_FILE), json).map_err(Error::from).stage(Stage::Report)?;
    print!("{}", ablation_table(&report));
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Cmd::Bpwc {
        prec,
        tp,
        prec_base,
        tp_base,
    } = cli.cmd
    {
        let pct = bpwc(prec, tp, prec_base, tp_base).stage(Stage::Config)?;
        println!("{pct:.1}%");
        return Ok(());
    }
    let cfg = load_config(cli)?;
    cfg.validate().stage(Stage::Config)?;
    match &cli.cmd {
        Cmd::Gen => cmd_gen(&cfg),
        Cmd::Pretrain { graph } => cmd_pretrain(&cfg, graph.as_ref()),
        Cmd::Finetune(a) => cmd_finetune(&cfg, a),
        Cmd::Eval {
            model,
            graph,
            modes,
            setting,
            splits,
        } => cmd_eval(&cfg, model.as_ref(), graph.as_ref(), modes.as_ref(), *setting, *splits),
        Cmd::Pipeline => {
            let dir = out_dir(&cfg);
            let out = run_pipeline(&cfg, Some(&dir))?;
            print!("{}", out.table);
            Ok(())
        }
        Cmd::SweepEta { etas } => {
            let etas = etas.as_ref().unwrap_or(&cfg.eval.etas);
            let dir = out_dir(&cfg);
            let sweep = sweep_eta(&cfg, etas, Some(&dir))?;
            print!("{}", sweep.csv());
            Ok(())
        }
        Cmd::Bpwc { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
