use std::sync::Arc;

use super::{LabeledSet, Selector, TuneConfig, N_CLASSES};
use crate::error::{shape_err, Error, Result};
use crate::graph::OrderGraph;
use crate::nn::{adam_step, glorot_uniform, gnn_backward, softmax_xent, AdamState, Dense, ModelParams, Propagator};
use crate::pretrain::PretrainedModel;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    Random,
    Zero,
}

/// Pre-trained encoder with a new `d × 2` linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadClassifier {
    pub params: ModelParams,
    pub head: Dense,
    pub curve: Vec<f64>,
    pub selected_epoch: usize,
}

pub(crate) fn head_logits(h: &Dense, head: &Dense, i: usize) -> Vec<f64> {
    head.vec_mul(h.row(i))
}

pub(crate) fn predict_head(h: &Dense, head: &Dense, nodes: &[usize]) -> Result<Vec<u8>> {
    if head.shape() != (h.cols(), N_CLASSES) {
        return Err(shape_err("head predict", format!("head {:?} for tokens of width {}", head.shape(), h.cols())));
    }
    nodes
        .iter()
        .map(|&i| {
            if i >= h.rows() {
                return Err(Error::NodeOutOfRange { node: i, n_nodes: h.rows() });
            }
            let l = head_logits(h, head, i);
            Ok(u8::from(l[1] > l[0]))
        })
        .collect()
}

/// Mean softmax cross-entropy over labeled rows. Returns `(loss, dHead, dH)`.
pub(crate) fn head_loss(h: &Dense, head: &Dense, labeled: &LabeledSet) -> Result<(f64, Dense, Dense)> {
    let norm = 1.0 / labeled.len() as f64;
    let mut loss = 0.0;
    let mut dhead = Dense::zeros(head.rows(), head.cols());
    let mut dh = Dense::zeros(h.rows(), h.cols());
    for &(i, y) in labeled.items() {
        let (l, g) = softmax_xent(&head_logits(h, head, i), y as usize)?;
        loss += l * norm;
        for (k, &t) in h.row(i).iter().enumerate() {
            for (c, &gc) in g.iter().enumerate() {
                dhead.set(k, c, dhead.get(k, c) + norm * t * gc);
            }
        }
        let back = head.mul_vec(&g);
        for (o, b) in dh.row_mut(i).iter_mut().zip(back) {
            *o += norm * b;
        }
    }
    Ok((loss, dhead, dh))
}

/// Conventional fine-tuning: new head plus encoder, softmax cross-entropy,
/// same Adam schedule and epoch selection as prompt tuning.
pub fn traditional_finetune(
    model: &PretrainedModel,
    g: &OrderGraph,
    labeled: &LabeledSet,
    cfg: &TuneConfig,
    valid: Option<&LabeledSet>,
    init: HeadInit,
) -> Result<HeadClassifier> {
    cfg.validate()?;
    model.check_graph(g)?;
    let d = model.hidden();
    let mut head = match init {
        HeadInit::Random => glorot_uniform(d, N_CLASSES, &mut RngStream::derive(cfg.seed, 0x4EAD)),
        HeadInit::Zero => Dense::zeros(d, N_CLASSES),
    };
    let prop = Arc::new(Propagator::new(g));
    let mut params = model.params.clone();
    let mut st = [
        AdamState::for_param(&params.w1),
        AdamState::for_param(&params.w2),
        AdamState::for_param(&head),
    ];
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut selector = Selector::new(valid);
    for epoch in 0..=cfg.epochs {
        let (h, cache) = prop.forward(&params, g.features())?;
        selector.offer(epoch, |nodes| predict_head(&h, &head, nodes), || (params.clone(), head.clone()))?;
        let (loss, dhead, dh) = head_loss(&h, &head, labeled)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("head loss at tuning epoch {epoch}")));
        }
        curve.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        let grads = gnn_backward(&cache, &dh)?;
        adam_step(&mut st[0], &mut params.w1, &grads.w1, cfg.lr)?;
        adam_step(&mut st[1], &mut params.w2, &grads.w2, cfg.lr)?;
        adam_step(&mut st[2], &mut head, &dhead, cfg.lr)?;
    }
    let (selected_epoch, (params, head)) = selector.finish(cfg.epochs, (params, head));
    Ok(HeadClassifier {
        params,
        head,
        curve,
        selected_epoch,
    })
}
