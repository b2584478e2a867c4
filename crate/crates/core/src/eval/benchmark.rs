#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{f1, make_split, mean_ci, Setting, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::OrderGraph;
use crate::pretrain::PretrainedModel;
use crate::prompt::{tune, TuneConfig, TuneMode};
use crate::rng::mix_seed;

/// A labelled tuning configuration to benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub name: String,
    pub cfg: TuneConfig,
}

impl ModeSpec {
    pub fn new(name: impl Into<String>, cfg: TuneConfig) -> Self {
        Self { name: name.into(), cfg }
    }

    pub fn from_mode(mode: TuneMode, base: &TuneConfig) -> Self {
        Self::new(mode.name(), TuneConfig { mode, ..base.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub ci: f64,
    pub config: TuneConfig,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub setting: String,
    pub modes: Vec<EvalReport>,
    /// Seed of each split, shared by every mode.
    pub splits: Vec<u64>,
    pub config: serde_json::Value,
}

impl BenchmarkReport {
    pub fn mode(&self, name: &str) -> Option<&EvalReport> {
        self.modes.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table, one row per mode.
    pub fn table(&self) -> String {
        let width = self.modes.iter().map(|m| m.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("setting: {}  splits: {}\n", self.setting, self.splits.len());
        out += &format!("{:<width$}  {:>7}  {:>7}\n", "mode", "F1", "±95%");
        for m in &self.modes {
            out += &format!("{:<width$}  {:>7.4}  {:>7.4}\n", m.name, m.mean, m.ci);
        }
        out
    }
}

/// Runs `f`, returning its result and the elapsed seconds. There is no
/// monotonic clock on wasm32-unknown-unknown, so time is reported as 0 there.
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let t = std::time::Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    }
    #[cfg(target_arch = "wasm32")]
    {
        (f(), 0.0)
    }
}

/// Seed of split `k` under `master`.
pub fn split_seed(master: u64, k: usize) -> u64 {
    mix_seed(master, k as u64)
}

/// Every split the benchmark would draw, in order.
pub fn benchmark_splits(labels: &[u8], setting: Setting, n_splits: usize, master: u64) -> Result<Vec<SplitSpec>> {
    (0..n_splits)
        .map(|k| make_split(labels, setting, split_seed(master, k)))
        .collect()
}

/// Test F1 of one tuned configuration on one split.
pub fn evaluate_split(
    g: &OrderGraph,
    model: &PretrainedModel,
    labels: &[u8],
    split: &SplitSpec,
    cfg: &TuneConfig,
) -> Result<f64> {
    let train = split.train_set(labels)?;
    let valid = split.valid_set(labels)?;
    let cfg = TuneConfig {
        seed: mix_seed(split.seed, cfg.seed),
        ..cfg.clone()
    };
    let out = tune(model, g, &train, &cfg, Some(&valid))?;
    let pred = out.classifier.predict(g, &split.test)?;
    let truth: Vec<u8> = split.test.iter().map(|&i| labels[i]).collect();
    f1(&pred, &truth)
}

/// Runs every spec on the same `n_splits` paired splits of `g`, whose labels
/// must be complete.
pub fn run_benchmark(
    g: &OrderGraph,
    model: &PretrainedModel,
    specs: &[ModeSpec],
    setting: Setting,
    n_splits: usize,
    master_seed: u64,
) -> Result<BenchmarkReport> {
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be >= 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::Config("no modes to evaluate".into()));
    }
    for s in specs {
        s.cfg.validate()?;
    }
    model.check_graph(g)?;
    let labels = g
        .labels()
        .ok_or_else(|| Error::InsufficientLabels("benchmark graph has no labels".into()))?;
    let splits = benchmark_splits(labels, setting, n_splits, master_seed)?;

    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|m| (0..n_splits).map(move |k| (m, k)))
        .collect();
    let run = |&(m, k): &(usize, usize)| -> Result<(f64, f64)> {
        let (s, secs) = timed(|| evaluate_split(g, model, labels, &splits[k], &specs[m].cfg));
        Ok((s?, secs))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(f64, f64)> = jobs.par_iter().map(run).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, f64)> = jobs.iter().map(run).collect::<Result<_>>()?;

    let modes = specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let chunk = &results[m * n_splits..(m + 1) * n_splits];
            let scores: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let (mean, ci) = mean_ci(&scores)?;
            Ok(EvalReport {
                name: spec.name.clone(),
                scores,
                mean,
                ci,
                config: spec.cfg.clone(),
                wall_clock_secs: chunk.iter().map(|r| r.1).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BenchmarkReport {
        setting: setting.to_string(),
        modes,
        splits: splits.iter().map(|s| s.seed).collect(),
        config: serde_json::json!({
            "n_splits": n_splits,
            "master_seed": master_seed,
            "n_nodes": g.n_nodes(),
            "graph_fingerprint": g.fingerprint(),
            "pretrain": model.meta,
        }),
    })
}
