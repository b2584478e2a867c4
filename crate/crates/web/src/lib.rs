//! wasm-bindgen bindings behind `www/index.html`: simulate a world, pre-train
//! on it, and compare tuning modes on a second world.

use serde_json::json;
use wasm_bindgen::prelude::*;

use vpgnn::eval::{run_benchmark, ModeSpec};
use vpgnn::pipeline::{build_benchmark, Benchmark, RunConfig};
use vpgnn::pretrain::{pretrain, PretrainedModel};
use vpgnn::prompt::TuneMode;
use vpgnn::synth::apply_pseudo_label_rules;

/// Sizes that keep each operation to a few seconds in a browser tab.
pub const WEB_DEFAULTS: &str = "\
gen.n_legit_users = 600
gen.n_abusers = 4
gen.address_pool_size = 450
pretrain.epochs = 30
pretrain.hidden = 32
tune.epochs = 30
eval.splits = 3
eval.setting = 5-shot
";

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Demo {
    cfg: RunConfig,
    world_a: Benchmark,
    world_b: Benchmark,
    model: Option<PretrainedModel>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates both worlds from [`WEB_DEFAULTS`] overridden by `config`
    /// (`key = value` lines).
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Demo, String> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(WEB_DEFAULTS).map_err(err)?;
        cfg.apply_text(config).map_err(err)?;
        cfg.validate().map_err(err)?;
        let world_a = build_benchmark(&cfg.world_a()).map_err(err)?;
        let world_b = build_benchmark(&cfg.world_b()).map_err(err)?;
        Ok(Demo {
            cfg,
            world_a,
            world_b,
            model: None,
        })
    }

    /// The pre-training world as JSON: ground-truth labels, pseudo-labeled
    /// node ids, the edge list and summary counts.
    pub fn world_json(&self) -> Result<String, String> {
        let b = &self.world_a;
        let pseudo: Vec<usize> = apply_pseudo_label_rules(&b.world, &b.graph, &self.cfg.rules)
            .map_err(err)?
            .into_keys()
            .collect();
        let edges: Vec<[usize; 2]> = b.graph.edges().map(|(u, v)| [u, v]).collect();
        Ok(json!({
            "n_nodes": b.graph.n_nodes(),
            "n_edges": b.graph.n_edges(),
            "n_abusive": b.world.n_abusive(),
            "n_accounts": b.world.accounts.len(),
            "n_devices": b.world.n_devices,
            "labels": b.world.labels(),
            "pseudo": pseudo,
            "edges": edges,
        })
        .to_string())
    }

    /// Pre-trains on world A; returns the loss curve and final mean logits.
    pub fn pretrain(&mut self, epochs: usize) -> Result<String, String> {
        let cfg = vpgnn::PretrainConfig {
            epochs,
            ..self.cfg.pretrain_config()
        };
        let out = pretrain(&self.world_a.graph, &cfg).map_err(err)?;
        let res = json!({
            "curve": out.curve,
            "pos_logit": out.final_pos_logit,
            "neg_logit": out.final_neg_logit,
        });
        self.model = Some(out.model);
        Ok(res.to_string())
    }

    /// Benchmarks the comma-separated `modes` on world B over `splits`
    /// paired splits with `shots` training anomalies each. Returns the
    /// report JSON.
    pub fn compare(&self, modes: &str, shots: usize, splits: usize) -> Result<String, String> {
        let model = self.model.as_ref().ok_or("pre-train first")?;
        let base = self.cfg.tune_config();
        let specs = modes
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| Ok(ModeSpec::from_mode(m.parse::<TuneMode>().map_err(err)?, &base)))
            .collect::<Result<Vec<_>, String>>()?;
        let setting = format!("{shots}-shot").parse().map_err(err)?;
        let r = run_benchmark(&self.world_b.graph, model, &specs, setting, splits, self.cfg.eval_seed()).map_err(err)?;
        r.to_json().map_err(err)
    }
}
