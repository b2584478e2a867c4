use std::sync::Arc;

use super::baseline::predict_head;
use super::{
    init_context_tokens_from, init_random, predict_tokens, prompt_finetune, traditional_finetune, HeadInit,
    LabeledSet, PromptMatrix, TuneConfig, TuneMode,
};
use crate::error::Result;
use crate::graph::OrderGraph;
use crate::nn::{Dense, ModelParams, Propagator};
use crate::pretrain::PretrainedModel;
use crate::rng::RngStream;

/// A fine-tuned classifier of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum TunedClassifier {
    Prompt { params: ModelParams, z: PromptMatrix },
    Head { params: ModelParams, head: Dense },
}

impl TunedClassifier {
    pub fn params(&self) -> &ModelParams {
        match self {
            TunedClassifier::Prompt { params, .. } | TunedClassifier::Head { params, .. } => params,
        }
    }

    /// Labels for `nodes`, encoding `g` once.
    pub fn predict(&self, g: &OrderGraph, nodes: &[usize]) -> Result<Vec<u8>> {
        let h = Arc::new(Propagator::new(g)).forward(self.params(), g.features())?.0;
        match self {
            TunedClassifier::Prompt { z, .. } => predict_tokens(&h, z, nodes),
            TunedClassifier::Head { head, .. } => predict_head(&h, head, nodes),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub mode: TuneMode,
    pub classifier: TunedClassifier,
    /// Context tokens before tuning (prompt modes only).
    pub z_init: Option<PromptMatrix>,
    pub curve: Vec<f64>,
    pub selected_epoch: usize,
}

/// Fine-tunes `model` on `labeled` under `cfg.mode`.
pub fn tune(
    model: &PretrainedModel,
    g: &OrderGraph,
    labeled: &LabeledSet,
    cfg: &TuneConfig,
    valid: Option<&LabeledSet>,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    model.check_graph(g)?;
    if cfg.mode == TuneMode::NoPrompt {
        let out = traditional_finetune(model, g, labeled, cfg, valid, HeadInit::Random)?;
        return Ok(TuneOutcome {
            mode: cfg.mode,
            classifier: TunedClassifier::Head {
                params: out.params,
                head: out.head,
            },
            z_init: None,
            curve: out.curve,
            selected_epoch: out.selected_epoch,
        });
    }
    let mut rng = RngStream::derive(cfg.seed, 0x7A);
    let z0 = match cfg.mode {
        TuneMode::RandomInit => init_random(model.hidden(), &mut rng),
        _ => {
            let h = Arc::new(Propagator::new(g)).forward(&model.params, g.features())?.0;
            init_context_tokens_from(&h, &model.params.wr, g, labeled, cfg.eta, &mut rng)?
        }
    };
    let out = prompt_finetune(model, z0.clone(), g, labeled, cfg, valid)?;
    Ok(TuneOutcome {
        mode: cfg.mode,
        classifier: TunedClassifier::Prompt {
            params: out.params,
            z: out.z,
        },
        z_init: Some(z0),
        curve: out.curve,
        selected_epoch: out.selected_epoch,
    })
}
