//! Self-supervised pre-training: discriminate node–summary pairs of the real
//! graph from those of a feature-shuffled copy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::OrderGraph;
use crate::nn::{
    adam_step, bce_with_logits, dot, gnn_backward, readout_backward, readout_forward, AdamState, Dense,
    ModelParams, Propagator,
};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.01,
            hidden: 128,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("pretrain epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("pretrain lr must be > 0, got {}", self.lr)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradients for every trainable tensor of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub w1: Dense,
    pub w2: Dense,
    pub wr: Dense,
}

#[derive(Clone, Debug)]
pub struct DgiOutput {
    pub loss: f64,
    pub grads: ModelGrads,
    pub mean_pos_logit: f64,
    pub mean_neg_logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
    pub graph_fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedModel {
    pub params: ModelParams,
    pub meta: TrainMeta,
}

impl PretrainedModel {
    pub fn feature_width(&self) -> usize {
        self.params.feature_width()
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    /// Cross-graph use only requires matching feature width.
    pub fn check_graph(&self, g: &OrderGraph) -> Result<()> {
        if g.feature_width() != self.feature_width() {
            return Err(shape_err(
                "model/graph",
                format!(
                    "model expects {} feature columns, graph has {}",
                    self.feature_width(),
                    g.feature_width()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: PretrainedModel,
    /// Loss at the start of each epoch, followed by the loss after the last update.
    pub curve: Vec<f64>,
    pub final_pos_logit: f64,
    pub final_neg_logit: f64,
}

fn check_graph(g: &OrderGraph) -> Result<()> {
    if g.n_nodes() < 2 || g.n_edges() == 0 {
        return Err(Error::Degenerate(format!(
            "pre-training needs >= 2 nodes and >= 1 edge (got {} nodes, {} edges)",
            g.n_nodes(),
            g.n_edges()
        )));
    }
    Ok(())
}

/// DGI loss with a fresh corruption drawn from `rng`.
pub fn dgi_loss(params: &ModelParams, g: &OrderGraph, rng: &mut RngStream) -> Result<DgiOutput> {
    check_graph(g)?;
    let corrupted = g.corrupt(rng)?;
    let prop = Arc::new(Propagator::new(g));
    dgi_loss_with(params, &prop, g.features(), corrupted.features())
}

/// DGI loss for explicit real and corrupted feature matrices over one topology.
///
/// Averages binary cross-entropy over all `2n` pairs: `(h_i, s)` with target 1
/// and `(h̃_i, s)` with target 0, where `s` is the readout of the real rows.
pub fn dgi_loss_with(params: &ModelParams, prop: &Arc<Propagator>, real: &Dense, corrupted: &Dense) -> Result<DgiOutput> {
    let n = prop.n_nodes();
    if n < 2 {
        return Err(Error::Degenerate("pre-training needs >= 2 nodes".into()));
    }
    let (h, cache_pos) = prop.forward(params, real)?;
    let (hc, cache_neg) = prop.forward(params, corrupted)?;
    let ro = readout_forward(&params.wr, &h)?;
    let s = ro.summary();
    let d = params.hidden();
    let norm = 1.0 / (2 * n) as f64;

    let mut loss = 0.0;
    let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
    let mut dh = Dense::zeros(n, d);
    let mut dhc = Dense::zeros(n, d);
    let mut ds = vec![0.0; d];
    for i in 0..n {
        let (hi, hci) = (h.row(i), hc.row(i));
        let pos = dot(hi, s);
        let neg = dot(hci, s);
        pos_sum += pos;
        neg_sum += neg;
        let (lp, gp) = bce_with_logits(pos, 1)?;
        let (ln, gn) = bce_with_logits(neg, 0)?;
        loss += (lp + ln) * norm;
        let (gp, gn) = (gp * norm, gn * norm);
        for k in 0..d {
            ds[k] += gp * hi[k] + gn * hci[k];
        }
        for (o, &sv) in dh.row_mut(i).iter_mut().zip(s) {
            *o = gp * sv;
        }
        for (o, &sv) in dhc.row_mut(i).iter_mut().zip(s) {
            *o = gn * sv;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("DGI loss".into()));
    }
    let (dwr, drow) = readout_backward(&params.wr, &ro, &ds)?;
    for i in 0..n {
        for (o, r) in dh.row_mut(i).iter_mut().zip(&drow) {
            *o += r;
        }
    }
    let gpos = gnn_backward(&cache_pos, &dh)?;
    let gneg = gnn_backward(&cache_neg, &dhc)?;
    let mut w1 = gpos.w1;
    w1.add_assign(&gneg.w1);
    let mut w2 = gpos.w2;
    w2.add_assign(&gneg.w2);
    Ok(DgiOutput {
        loss,
        grads: ModelGrads { w1, w2, wr: dwr },
        mean_pos_logit: pos_sum / n as f64,
        mean_neg_logit: neg_sum / n as f64,
    })
}

/// Full-batch Adam on the DGI loss, one fresh corruption per epoch.
pub fn pretrain(g: &OrderGraph, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    check_graph(g)?;
    let mut init_rng = RngStream::derive(cfg.seed, 1);
    let mut corrupt_rng = RngStream::derive(cfg.seed, 2);
    let mut params = ModelParams::init(g.feature_width(), cfg.hidden, &mut init_rng);
    let mut st = [
        AdamState::for_param(&params.w1),
        AdamState::for_param(&params.w2),
        AdamState::for_param(&params.wr),
    ];
    let prop = Arc::new(Propagator::new(g));
    let mut curve = Vec::with_capacity(cfg.epochs + 1);

    let step = |params: &ModelParams, rng: &mut RngStream| -> Result<DgiOutput> {
        let corrupted = g.corrupt(rng)?;
        let out = dgi_loss_with(params, &prop, g.features(), corrupted.features())?;
        Ok(out)
    };

    for epoch in 0..cfg.epochs {
        let out = step(&params, &mut corrupt_rng).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at pre-training epoch {epoch}")),
            other => other,
        })?;
        curve.push(out.loss);
        adam_step(&mut st[0], &mut params.w1, &out.grads.w1, cfg.lr)?;
        adam_step(&mut st[1], &mut params.w2, &out.grads.w2, cfg.lr)?;
        adam_step(&mut st[2], &mut params.wr, &out.grads.wr, cfg.lr)?;
    }
    let last = step(&params, &mut corrupt_rng)?;
    curve.push(last.loss);
    params.validate()?;
    Ok(PretrainOutcome {
        model: PretrainedModel {
            params,
            meta: TrainMeta {
                epochs: cfg.epochs,
                final_loss: last.loss,
                seed: cfg.seed,
                graph_fingerprint: g.fingerprint(),
            },
        },
        curve,
        final_pos_logit: last.mean_pos_logit,
        final_neg_logit: last.mean_neg_logit,
    })
}
