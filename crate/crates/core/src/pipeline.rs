//! End-to-end runs driven by a flat `key = value` configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! gen.n_legit_users = 1900
//! gen.abuser_devices = 2,4
//! pretrain.epochs = 50
//! tune.eta = 5
//! eval.setting = 10-shot
//! eval.modes = vpgnn,no-prompt,random-init,no-constraint
//! ```
//!
//! The master seed determines every stage seed. World A (pre-training) uses
//! the master seed directly, world B (downstream) a derived one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{run_benchmark, BenchmarkReport, ModeSpec, Setting};
use crate::graph::{ensure_dir, write_edge_file, write_feature_file, write_label_file, GraphPaths, LabelMap, OrderGraph};
use crate::model_io::save_model;
use crate::pretrain::{pretrain, PretrainConfig, PretrainOutcome, PretrainedModel};
use crate::prompt::{TuneConfig, TuneMode};
use crate::rng::mix_seed;
use crate::synth::{
    apply_pseudo_label_rules, build_features, generate_world, project_order_graph, EntityWorld, GenConfig, RuleSet,
};

pub const PSEUDO_LABELS: &str = "pseudo_labels.csv";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const PRETRAIN_CURVE: &str = "pretrain_curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.txt";
pub const SWEEP_FILE: &str = "eta_sweep.csv";

/// Every accepted configuration key.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "paths.graph",
    "paths.labels",
    "paths.model",
    "paths.out",
    "gen.n_legit_users",
    "gen.n_abusers",
    "gen.abuser_devices",
    "gen.accounts_per_device",
    "gen.legit_devices",
    "gen.address_pool_size",
    "gen.hub_addresses",
    "gen.hub_share",
    "gen.mules_per_abuser",
    "gen.clickpath_vocab",
    "gen.clickpath_len",
    "gen.embed_dim",
    "gen.raw_feature_dim",
    "gen.feature_noise_scale",
    "gen.feature_shift",
    "gen.rule_min_accounts",
    "gen.rule_single_voucher",
    "pretrain.epochs",
    "pretrain.lr",
    "pretrain.hidden",
    "tune.mode",
    "tune.eta",
    "tune.lambda",
    "tune.epochs",
    "tune.lr",
    "eval.setting",
    "eval.splits",
    "eval.modes",
    "eval.etas",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSettings {
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Not echoed into reports, so reruns into another directory compare equal.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub setting: Setting,
    pub splits: usize,
    pub modes: Vec<TuneMode>,
    pub etas: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            setting: Setting::Shots(10),
            splits: 10,
            modes: vec![TuneMode::Vpgnn, TuneMode::NoPrompt, TuneMode::RandomInit, TuneMode::NoConstraint],
            etas: vec![0, 1, 3, 5, 10],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathSettings,
    pub gen: GenConfig,
    pub rules: RuleSet,
    pub pretrain: PretrainConfig,
    pub tune: TuneConfig,
    pub eval: EvalSettings,
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match v.split_once(',') {
        Some((a, b)) => Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?)),
        None => Err(Error::Config(format!("{key}: expected \"min,max\", got {v:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

impl RunConfig {
    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let g = &mut self.gen;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "paths.graph" => self.paths.graph = Some(v.into()),
            "paths.labels" => self.paths.labels = Some(v.into()),
            "paths.model" => self.paths.model = Some(v.into()),
            "paths.out" => self.paths.out = Some(v.into()),
            "gen.n_legit_users" => g.n_legit_users = parse_num(key, v)?,
            "gen.n_abusers" => g.n_abusers = parse_num(key, v)?,
            "gen.abuser_devices" => g.abuser_devices = parse_pair(key, v)?,
            "gen.accounts_per_device" => g.accounts_per_device = parse_pair(key, v)?,
            "gen.legit_devices" => g.legit_devices = parse_pair(key, v)?,
            "gen.address_pool_size" => g.address_pool_size = parse_num(key, v)?,
            "gen.hub_addresses" => g.hub_addresses = parse_num(key, v)?,
            "gen.hub_share" => g.hub_share = parse_num(key, v)?,
            "gen.mules_per_abuser" => g.mules_per_abuser = parse_num(key, v)?,
            "gen.clickpath_vocab" => {
                g.clickpath_vocab = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "gen.clickpath_len" => g.clickpath_len = parse_pair(key, v)?,
            "gen.embed_dim" => g.embed_dim = parse_num(key, v)?,
            "gen.raw_feature_dim" => g.raw_feature_dim = parse_num(key, v)?,
            "gen.feature_noise_scale" => g.feature_noise_scale = parse_num(key, v)?,
            "gen.feature_shift" => g.feature_shift = parse_num(key, v)?,
            "gen.rule_min_accounts" => self.rules.min_accounts_per_device = parse_num(key, v)?,
            "gen.rule_single_voucher" => self.rules.require_single_voucher_order = parse_num(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse_num(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse_num(key, v)?,
            "pretrain.hidden" => self.pretrain.hidden = parse_num(key, v)?,
            "tune.mode" => self.tune.mode = v.parse()?,
            "tune.eta" => self.tune.eta = parse_num(key, v)?,
            "tune.lambda" => self.tune.lambda = parse_num(key, v)?,
            "tune.epochs" => self.tune.epochs = parse_num(key, v)?,
            "tune.lr" => self.tune.lr = parse_num(key, v)?,
            "eval.setting" => self.eval.setting = v.parse()?,
            "eval.splits" => self.eval.splits = parse_num(key, v)?,
            "eval.modes" => self.eval.modes = parse_list(key, v)?,
            "eval.etas" => self.eval.etas = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of the current
    /// settings. Blank lines and `#` comments are skipped; a key may appear
    /// only once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", no + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_config(e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.pretrain_config().validate()?;
        self.tune.validate()?;
        if self.rules.min_accounts_per_device < 2 {
            return Err(Error::Config("gen.rule_min_accounts must be >= 2".into()));
        }
        if self.eval.splits == 0 {
            return Err(Error::Config("eval.splits must be >= 1".into()));
        }
        Ok(())
    }

    /// Generator settings for the pre-training world.
    pub fn world_a(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.gen.clone()
        }
    }

    /// Generator settings for the downstream world.
    pub fn world_b(&self) -> GenConfig {
        GenConfig {
            seed: mix_seed(self.seed, 0xB),
            ..self.gen.clone()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            seed: self.seed,
            ..self.tune.clone()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        mix_seed(self.seed, 0xE)
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Gen,
    Pretrain,
    Finetune,
    Eval,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Gen => "gen",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Eval => "eval",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// 1 for configuration problems, 2 for anything else.
    pub fn exit_code(&self) -> i32 {
        if self.stage == Stage::Config || matches!(self.source, Error::Config(_)) {
            1
        } else {
            2
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// A generated world and its projected, featurized graph with ground-truth labels.
pub struct Benchmark {
    pub world: EntityWorld,
    pub graph: OrderGraph,
}

pub fn build_benchmark(cfg: &GenConfig) -> Result<Benchmark> {
    let world = generate_world(cfg)?;
    let g = project_order_graph(&world)?;
    let x = build_features(&world, &g, cfg)?;
    let graph = g.with_features(x)?;
    Ok(Benchmark { world, graph })
}

/// Writes the graph trio (ground-truth labels in the label file) plus the
/// pseudo-label and ground-truth CSVs into `dir`. Returns the pseudo-labels.
pub fn write_benchmark(b: &Benchmark, rules: &RuleSet, dir: &Path) -> Result<LabelMap> {
    ensure_dir(dir)?;
    let paths = GraphPaths::in_dir(dir);
    write_edge_file(&paths.edges, &b.graph)?;
    write_feature_file(&paths.features, b.graph.features())?;
    let truth: LabelMap = b.world.labels().into_iter().enumerate().collect();
    write_label_file(dir.join(GraphPaths::LABELS), &truth)?;
    write_label_file(dir.join(GROUND_TRUTH), &truth)?;
    let pseudo = apply_pseudo_label_rules(&b.world, &b.graph, rules)?;
    write_label_file(dir.join(PSEUDO_LABELS), &pseudo)?;
    Ok(pseudo)
}

/// `epoch,loss` rows.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        s += &format!("{e},{l}\n");
    }
    s
}

pub fn write_pretrain(out: &PretrainOutcome, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    save_model(&out.model, &dir.join(MODEL_FILE))?;
    fs::write(dir.join(PRETRAIN_CURVE), curve_csv(&out.curve))?;
    Ok(())
}

/// Mode-by-F1 table, scores ×100 with the CI half-width.
pub fn ablation_table(report: &BenchmarkReport) -> String {
    let mut s = format!("{:<14} {:>15}\n", "variant", report.setting);
    for m in &report.modes {
        s += &format!("{:<14} {:>7.2} ± {:<5.2}\n", m.name, 100.0 * m.mean, 100.0 * m.ci);
    }
    s
}

fn config_echo(cfg: &RunConfig, report: &BenchmarkReport) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "run": serde_json::to_value(cfg)?,
        "world_a_seed": cfg.world_a().seed,
        "world_b_seed": cfg.world_b().seed,
        "pretrain": serde_json::to_value(cfg.pretrain_config())?,
        "tune": serde_json::to_value(cfg.tune_config())?,
        "eval_seed": cfg.eval_seed(),
        "benchmark": report.config,
    }))
}

/// Artifacts of a full run.
pub struct PipelineOutcome {
    pub model: PretrainedModel,
    pub report: BenchmarkReport,
    pub json: String,
    pub table: String,
}

fn pretrain_world_a(cfg: &RunConfig, out: Option<&Path>) -> std::result::Result<PretrainedModel, StageError> {
    let a = build_benchmark(&cfg.world_a()).stage(Stage::Gen)?;
    if let Some(dir) = out {
        write_benchmark(&a, &cfg.rules, &dir.join("world_a")).stage(Stage::Gen)?;
    }
    let pre = pretrain(&a.graph, &cfg.pretrain_config()).stage(Stage::Pretrain)?;
    if let Some(dir) = out {
        write_pretrain(&pre, dir).stage(Stage::Pretrain)?;
    }
    Ok(pre.model)
}

fn downstream(cfg: &RunConfig, out: Option<&Path>) -> std::result::Result<Benchmark, StageError> {
    let b = build_benchmark(&cfg.world_b()).stage(Stage::Gen)?;
    if let Some(dir) = out {
        write_benchmark(&b, &cfg.rules, &dir.join("world_b")).stage(Stage::Gen)?;
    }
    Ok(b)
}

/// Generates worlds A and B, pre-trains on A and benchmarks every configured
/// mode on B. With `out`, every artifact is written there as it is produced.
pub fn run_pipeline(cfg: &RunConfig, out: Option<&Path>) -> std::result::Result<PipelineOutcome, StageError> {
    cfg.validate().stage(Stage::Config)?;
    if cfg.eval.modes.is_empty() {
        return Err(Error::Config("eval.modes is empty".into())).stage(Stage::Config);
    }
    let model = pretrain_world_a(cfg, out)?;
    let b = downstream(cfg, out)?;
    let base = cfg.tune_config();
    let specs: Vec<ModeSpec> = cfg.eval.modes.iter().map(|&m| ModeSpec::from_mode(m, &base)).collect();
    let mut report = run_benchmark(&b.graph, &model, &specs, cfg.eval.setting, cfg.eval.splits, cfg.eval_seed())
        .stage(Stage::Eval)?;
    report.config = config_echo(cfg, &report).stage(Stage::Report)?;
    let json = report.to_json().stage(Stage::Report)?;
    let table = ablation_table(&report);
    if let Some(dir) = out {
        fs::write(dir.join(REPORT_FILE), &json).map_err(Error::from).stage(Stage::Report)?;
        fs::write(dir.join(ABLATION_FILE), &table).map_err(Error::from).stage(Stage::Report)?;
    }
    Ok(PipelineOutcome {
        model,
        report,
        json,
        table,
    })
}

/// One benchmark row per η, all on the same paired splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSweep {
    pub etas: Vec<usize>,
    pub report: BenchmarkReport,
}

impl EtaSweep {
    pub fn csv(&self) -> String {
        let mut s = String::from("eta,mean,ci\n");
        for (eta, m) in self.etas.iter().zip(&self.report.modes) {
            s += &format!("{eta},{},{}\n", m.mean, m.ci);
        }
        s
    }
}

/// Sweeps η for `tune.mode` on world B, holding everything else fixed.
pub fn sweep_eta(cfg: &RunConfig, etas: &[usize], out: Option<&Path>) -> std::result::Result<EtaSweep, StageError> {
    cfg.validate().stage(Stage::Config)?;
    if etas.is_empty() {
        return Err(Error::Config("eta list is empty".into())).stage(Stage::Config);
    }
    let model = pretrain_world_a(cfg, out)?;
    let b = downstream(cfg, out)?;
    let base = cfg.tune_config();
    let specs: Vec<ModeSpec> = etas
        .iter()
        .map(|&eta| ModeSpec::new(format!("eta={eta}"), TuneConfig { eta, ..base.clone() }))
        .collect();
    let mut report = run_benchmark(&b.graph, &model, &specs, cfg.eval.setting, cfg.eval.splits, cfg.eval_seed())
        .stage(Stage::Eval)?;
    report.config = config_echo(cfg, &report).stage(Stage::Report)?;
    let sweep = EtaSweep {
        etas: etas.to_vec(),
        report,
    };
    if let Some(dir) = out {
        ensure_dir(dir).stage(Stage::Report)?;
        fs::write(dir.join(SWEEP_FILE), sweep.csv()).map_err(Error::from).stage(Stage::Report)?;
        let json = sweep.report.to_json().stage(Stage::Report)?;
        fs::write(dir.join(REPORT_FILE), json).map_err(Error::from).stage(Stage::Report)?;
    }
    Ok(sweep)
}
