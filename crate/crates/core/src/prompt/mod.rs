//! Prompt-based fine-tuning.
//!
//! A node is turned into token pairs `(t_i, z_c)`, one per class, where `t_i`
//! is the encoder output for node `i` and `z_c` a learnable context token.
//! Pairs are scored by the same inner-product head and binary cross-entropy
//! used in pre-training, so no new head or task loss is introduced.

mod baseline;
mod tuned;

pub use baseline::{traditional_finetune, HeadClassifier, HeadInit};
pub use tuned::{tune, TuneOutcome, TunedClassifier};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::eval::f1;
use crate::graph::OrderGraph;
use crate::nn::{
    adam_step, bce_with_logits, dot, glorot_uniform, gnn_backward, proj_head, readout, AdamState, Dense,
    ModelParams, Propagator,
};
use crate::pretrain::PretrainedModel;
use crate::rng::RngStream;

/// Number of context tokens: legitimate (0) and abusive (1).
pub const N_CLASSES: usize = 2;

/// Learnable context tokens, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptMatrix(Dense);

impl PromptMatrix {
    pub fn new(z: Dense) -> Result<Self> {
        if z.rows() != N_CLASSES || z.cols() == 0 {
            return Err(shape_err("PromptMatrix", format!("expected {N_CLASSES} x d, got {:?}", z.shape())));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("prompt matrix".into()));
        }
        Ok(Self(z))
    }

    pub fn hidden(&self) -> usize {
        self.0.cols()
    }

    pub fn token(&self, class: usize) -> &[f64] {
        self.0.row(class)
    }

    pub fn as_dense(&self) -> &Dense {
        &self.0
    }

    pub fn into_dense(self) -> Dense {
        self.0
    }

    pub fn penalty(&self) -> f64 {
        orthogonal_penalty(&self.0)
    }
}

/// A node token paired with a context token, shaped like a pre-training
/// node–summary pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenPair<'a> {
    pub node: &'a [f64],
    pub context: &'a [f64],
}

impl TokenPair<'_> {
    /// Matching logit under the inner-product head.
    pub fn score(&self) -> f64 {
        dot(self.node, self.context)
    }
}

pub fn make_prompt<'a>(node: &'a [f64], context: &'a [f64]) -> Result<TokenPair<'a>> {
    if node.len() != context.len() {
        return Err(shape_err(
            "make_prompt",
            format!("node token width {} vs context token width {}", node.len(), context.len()),
        ));
    }
    Ok(TokenPair { node, context })
}

/// Labeled training nodes; both classes present, no duplicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    items: Vec<(usize, u8)>,
}

impl LabeledSet {
    pub fn new(items: Vec<(usize, u8)>, n_nodes: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InsufficientLabels("labeled set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for &(node, class) in &items {
            if node >= n_nodes {
                return Err(Error::NodeOutOfRange { node, n_nodes });
            }
            if class > 1 {
                return Err(Error::InvalidArgument(format!("class {class} not in {{0,1}}")));
            }
            if !seen.insert(node) {
                return Err(Error::InvalidArgument(format!("node {node} labeled twice")));
            }
        }
        for class in 0..N_CLASSES as u8 {
            if !items.iter().any(|&(_, c)| c == class) {
                return Err(Error::InsufficientLabels(format!("no labeled node of class {class}")));
            }
        }
        Ok(Self { items })
    }

    /// From parallel node / truth-label slices.
    pub fn from_nodes(nodes: &[usize], labels: &[u8]) -> Result<Self> {
        let items = nodes
            .iter()
            .map(|&i| labels.get(i).map(|&l| (i, l)).ok_or(Error::NodeOutOfRange { node: i, n_nodes: labels.len() }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, labels.len())
    }

    pub fn items(&self) -> &[(usize, u8)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.items.iter().map(|&(i, _)| i).collect()
    }

    pub fn truth(&self) -> Vec<u8> {
        self.items.iter().map(|&(_, c)| c).collect()
    }

    pub fn of_class(&self, class: u8) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().filter(move |&&(_, c)| c == class).map(|&(i, _)| i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TuneMode {
    /// Readout-initialized tokens, encoder and tokens tuned, orthogonal constraint on.
    #[serde(rename = "vpgnn")]
    Vpgnn,
    /// Encoder and readout frozen; only the context tokens move.
    #[serde(rename = "prompt-only")]
    PromptOnly,
    /// New linear head with softmax cross-entropy.
    #[serde(rename = "no-prompt")]
    NoPrompt,
    #[serde(rename = "random-init")]
    RandomInit,
    #[serde(rename = "no-constraint")]
    NoConstraint,
}

impl TuneMode {
    pub const ALL: [TuneMode; 5] = [
        TuneMode::Vpgnn,
        TuneMode::PromptOnly,
        TuneMode::NoPrompt,
        TuneMode::RandomInit,
        TuneMode::NoConstraint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TuneMode::Vpgnn => "vpgnn",
            TuneMode::PromptOnly => "prompt-only",
            TuneMode::NoPrompt => "no-prompt",
            TuneMode::RandomInit => "random-init",
            TuneMode::NoConstraint => "no-constraint",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            TuneMode::Vpgnn => 0,
            TuneMode::PromptOnly => 1,
            TuneMode::NoPrompt => 2,
            TuneMode::RandomInit => 3,
            TuneMode::NoConstraint => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vpgnn" | "vpgnn-full" => Ok(TuneMode::Vpgnn),
            _ => Self::ALL
                .into_iter()
                .find(|m| m.name() == s)
                .ok_or_else(|| Error::Config(format!("unknown tuning mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub mode: TuneMode,
    pub eta: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            mode: TuneMode::Vpgnn,
            eta: 5,
            lambda: 0.01,
            epochs: 50,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("tune lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    /// Orthogonal-constraint weight actually applied for this mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TuneMode::NoConstraint => 0.0,
            _ => self.lambda,
        }
    }
}

fn encode(params: &ModelParams, g: &OrderGraph) -> Result<Dense> {
    let prop = Arc::new(Propagator::new(g));
    Ok(prop.forward(params, g.features())?.0)
}

/// Context tokens from the pre-trained readout applied to each class's
/// labeled nodes plus up to `eta` sampled neighbors of each.
pub fn init_context_tokens(
    model: &PretrainedModel,
    g: &OrderGraph,
    labeled: &LabeledSet,
    eta: usize,
    rng: &mut RngStream,
) -> Result<PromptMatrix> {
    model.check_graph(g)?;
    let h = encode(&model.params, g)?;
    init_context_tokens_from(&h, &model.params.wr, g, labeled, eta, rng)
}

/// As [`init_context_tokens`] over precomputed node representations `h`.
pub fn init_context_tokens_from(
    h: &Dense,
    wr: &Dense,
    g: &OrderGraph,
    labeled: &LabeledSet,
    eta: usize,
    rng: &mut RngStream,
) -> Result<PromptMatrix> {
    let mut z = Dense::zeros(N_CLASSES, h.cols());
    for class in 0..N_CLASSES as u8 {
        let mut members = BTreeSet::new();
        for i in labeled.of_class(class) {
            members.insert(i);
            members.extend(g.sample_neighbors(i, eta, rng)?);
        }
        if members.is_empty() {
            return Err(Error::InsufficientLabels(format!("no labeled node of class {class}")));
        }
        let idx: Vec<usize> = members.into_iter().collect();
        let token = readout(wr, &h.select_rows(&idx))?;
        z.row_mut(class as usize).copy_from_slice(&token);
    }
    PromptMatrix::new(z)
}

/// Seeded uniform initialization on the encoder's weight scheme.
pub fn init_random(hidden: usize, rng: &mut RngStream) -> PromptMatrix {
    PromptMatrix(glorot_uniform(N_CLASSES, hidden.max(1), rng))
}

/// `‖Z Zᵀ − I‖²_F`.
pub fn orthogonal_penalty(z: &Dense) -> f64 {
    orthogonal_penalty_grad(z).0
}

/// Penalty and its gradient `4 (Z Zᵀ − I) Z`.
pub fn orthogonal_penalty_grad(z: &Dense) -> (f64, Dense) {
    let mut gram = z.matmul_t(z);
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) - 1.0);
    }
    let penalty = gram.frobenius_sq();
    let grad = gram.matmul(z).scaled(4.0);
    (penalty, grad)
}

/// Label 1 iff `t_i · z_1 > t_i · z_0`; ties go to 0.
pub fn predict_tokens(h: &Dense, z: &PromptMatrix, nodes: &[usize]) -> Result<Vec<u8>> {
    if h.cols() != z.hidden() {
        return Err(shape_err("predict", format!("node tokens width {} vs prompt width {}", h.cols(), z.hidden())));
    }
    nodes
        .iter()
        .map(|&i| {
            if i >= h.rows() {
                return Err(Error::NodeOutOfRange { node: i, n_nodes: h.rows() });
            }
            let t = h.row(i);
            let abusive = proj_head(t, z.token(1))?;
            let legit = proj_head(t, z.token(0))?;
            Ok(u8::from(abusive > legit))
        })
        .collect()
}

pub fn predict(params: &ModelParams, z: &PromptMatrix, g: &OrderGraph, nodes: &[usize]) -> Result<Vec<u8>> {
    if params.hidden() != z.hidden() {
        return Err(shape_err("predict", format!("encoder width {} vs prompt width {}", params.hidden(), z.hidden())));
    }
    if params.feature_width() != g.feature_width() {
        return Err(shape_err("predict", "feature width differs from the encoder input width"));
    }
    predict_tokens(&encode(params, g)?, z, nodes)
}

/// Prompt loss over token rows `h`: mean BCE over every (labeled node, class)
/// pair plus `lambda` times the orthogonal penalty.
/// Returns `(loss, dZ, dH)`; `dH` is nonzero only on labeled rows.
pub fn prompt_loss(h: &Dense, z: &PromptMatrix, labeled: &LabeledSet, lambda: f64) -> Result<(f64, Dense, Dense)> {
    let d = z.hidden();
    if h.cols() != d {
        return Err(shape_err("prompt_loss", format!("token width {} vs prompt width {d}", h.cols())));
    }
    let norm = 1.0 / (N_CLASSES * labeled.len()) as f64;
    let mut loss = 0.0;
    let mut dz = Dense::zeros(N_CLASSES, d);
    let mut dh = Dense::zeros(h.rows(), d);
    for &(i, y) in labeled.items() {
        if i >= h.rows() {
            return Err(Error::NodeOutOfRange { node: i, n_nodes: h.rows() });
        }
        for c in 0..N_CLASSES {
            let pair = make_prompt(h.row(i), z.token(c))?;
            let (l, g) = bce_with_logits(pair.score(), u8::from(y as usize == c))?;
            loss += l * norm;
            let g = g * norm;
            for k in 0..d {
                let (t, zc) = (h.get(i, k), z.token(c)[k]);
                dz.set(c, k, dz.get(c, k) + g * t);
                dh.set(i, k, dh.get(i, k) + g * zc);
            }
        }
    }
    if lambda > 0.0 {
        let (pen, gpen) = orthogonal_penalty_grad(z.as_dense());
        loss += lambda * pen;
        dz.add_assign(&gpen.scaled(lambda));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("prompt loss".into()));
    }
    Ok((loss, dz, dh))
}

/// Gradients of the prompt objective with respect to the encoder and tokens.
#[derive(Clone, Debug)]
pub struct PromptGrads {
    pub w1: Dense,
    pub w2: Dense,
    pub z: Dense,
}

/// Full prompt objective through the encoder.
pub fn prompt_objective(
    params: &ModelParams,
    prop: &Arc<Propagator>,
    x: &Dense,
    z: &PromptMatrix,
    labeled: &LabeledSet,
    lambda: f64,
) -> Result<(f64, PromptGrads)> {
    let (h, cache) = prop.forward(params, x)?;
    let (loss, dz, dh) = prompt_loss(&h, z, labeled, lambda)?;
    let g = gnn_backward(&cache, &dh)?;
    Ok((loss, PromptGrads { w1: g.w1, w2: g.w2, z: dz }))
}

/// Result of [`prompt_finetune`].
#[derive(Clone, Debug)]
pub struct PromptTuneOutcome {
    pub params: ModelParams,
    pub z: PromptMatrix,
    /// Training loss at the start of each epoch, then after the last update.
    pub curve: Vec<f64>,
    /// Number of updates applied to the returned state.
    pub selected_epoch: usize,
}

/// Validation F1 of the state after `epoch` updates; first best wins.
pub(crate) struct Selector<'a, S> {
    valid: Option<&'a LabeledSet>,
    best: Option<(f64, usize, S)>,
}

impl<'a, S> Selector<'a, S> {
    pub(crate) fn new(valid: Option<&'a LabeledSet>) -> Self {
        Self { valid, best: None }
    }

    pub(crate) fn offer(&mut self, epoch: usize, predict: impl FnOnce(&[usize]) -> Result<Vec<u8>>, state: impl FnOnce() -> S) -> Result<()> {
        let Some(valid) = self.valid else {
            return Ok(());
        };
        let score = f1(&predict(&valid.nodes())?, &valid.truth())?;
        if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            self.best = Some((score, epoch, state()));
        }
        Ok(())
    }

    /// The selected state, or `last` when no validation set was given.
    pub(crate) fn finish(self, last_epoch: usize, last: S) -> (usize, S) {
        match self.best {
            Some((_, e, s)) => (e, s),
            None => (last_epoch, last),
        }
    }
}

/// Tunes context tokens (and the encoder unless `cfg.mode` is prompt-only)
/// with Adam on [`prompt_loss`]. The readout stays frozen.
///
/// With a validation set, the state with the best validation F1 among
/// epochs `0..=cfg.epochs` is returned.
pub fn prompt_finetune(
    model: &PretrainedModel,
    z: PromptMatrix,
    g: &OrderGraph,
    labeled: &LabeledSet,
    cfg: &TuneConfig,
    valid: Option<&LabeledSet>,
) -> Result<PromptTuneOutcome> {
    cfg.validate()?;
    model.check_graph(g)?;
    if z.hidden() != model.hidden() {
        return Err(shape_err("prompt_finetune", "prompt width differs from encoder width"));
    }
    if cfg.mode == TuneMode::NoPrompt {
        return Err(Error::Config("no-prompt mode has no context tokens; use traditional_finetune".into()));
    }
    let lambda = cfg.effective_lambda();
    let freeze = cfg.mode == TuneMode::PromptOnly;
    let prop = Arc::new(Propagator::new(g));
    let mut params = model.params.clone();
    let mut z = z.into_dense();
    let mut st_w1 = AdamState::for_param(&params.w1);
    let mut st_w2 = AdamState::for_param(&params.w2);
    let mut st_z = AdamState::for_param(&z);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut selector = Selector::new(valid);
    let frozen_h = if freeze { Some(prop.forward(&params, g.features())?.0) } else { None };

    for epoch in 0..=cfg.epochs {
        let zm = PromptMatrix::new(z.clone())?;
        let (h, cache) = match &frozen_h {
            Some(h) => (h.clone(), None),
            None => {
                let (h, c) = prop.forward(&params, g.features())?;
                (h, Some(c))
            }
        };
        selector.offer(epoch, |nodes| predict_tokens(&h, &zm, nodes), || (params.clone(), zm.clone()))?;
        let (loss, dz, dh) = prompt_loss(&h, &zm, labeled, lambda).map_err(|e| match e {
            Error::NonFinite(w) => Error::NonFinite(format!("{w} at tuning epoch {epoch}")),
            other => other,
        })?;
        curve.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        if let Some(cache) = cache {
            let grads = gnn_backward(&cache, &dh)?;
            adam_step(&mut st_w1, &mut params.w1, &grads.w1, cfg.lr)?;
            adam_step(&mut st_w2, &mut params.w2, &grads.w2, cfg.lr)?;
        }
        adam_step(&mut st_z, &mut z, &dz, cfg.lr)?;
    }
    let last = (params, PromptMatrix::new(z)?);
    let (selected_epoch, (params, z)) = selector.finish(cfg.epochs, last);
    Ok(PromptTuneOutcome {
        params,
        z,
        curve,
        selected_epoch,
    })
}
