//! Vertex confidence: multi-view averaging of patch predictions and the
//! ConfNet refinement that scores how likely a vertex is a genuine member.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{restrict, AffinityGraph, FeatureMatrix, GraphPatch};
use crate::model::{patch_features, Architecture, GraphModel};
use crate::nn::{sigmoid, sigmoid_bce, AdamState, DenseMatrix};
use crate::proofs;

/// Per-vertex propagation state.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexState {
    prob: Vec<f64>,
    visits: u32,
    confidence: f64,
    frozen: bool,
    label: Option<usize>,
    pred_sum: Vec<f64>,
    pred_sq_sum: Vec<f64>,
}

impl VertexState {
    /// Uniform prior, zero confidence.
    pub fn unlabeled(classes: usize) -> Self {
        Self {
            prob: vec![1.0 / classes as f64; classes],
            visits: 0,
            confidence: 0.0,
            frozen: false,
            label: None,
            pred_sum: vec![0.0; classes],
            pred_sq_sum: vec![0.0; classes],
        }
    }

    /// One-hot at `label`, confidence 1, frozen.
    pub fn labeled(classes: usize, label: usize) -> Self {
        let mut prob = vec![0.0; classes];
        prob[label] = 1.0;
        Self {
            prob,
            visits: 0,
            confidence: 1.0,
            frozen: true,
            label: Some(label),
            pred_sum: vec![0.0; classes],
            pred_sq_sum: vec![0.0; classes],
        }
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn visits(&self) -> u32 {
        self.visits
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// Member of the high-confidence set.
    pub fn is_confident(&self) -> bool {
        self.frozen || self.label.is_some()
    }

    /// Unlabeled and not frozen: the vertices whose predictions still move.
    pub fn is_open(&self) -> bool {
        !self.is_confident()
    }

    pub fn set_confidence(&mut self, c: f64) -> Result<()> {
        if self.is_confident() {
            return Err(Error::InvalidInput(
                "confidence of labeled or frozen vertices is fixed".into(),
            ));
        }
        self.confidence = c;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Adds one view's prediction; `prob` becomes the mean over all views.
    pub fn accumulate_view(&mut self, prediction: &[f64]) -> Result<()> {
        if self.is_confident() {
            return Err(Error::InvalidInput(
                "predictions of labeled or frozen vertices are fixed".into(),
            ));
        }
        if prediction.len() != self.prob.len() {
            return Err(Error::Dimension(format!(
                "prediction has {} classes, state has {}",
                prediction.len(),
                self.prob.len()
            )));
        }
        self.visits += 1;
        let n = f64::from(self.visits);
        for k in 0..prediction.len() {
            self.pred_sum[k] += prediction[k];
            self.pred_sq_sum[k] += prediction[k] * prediction[k];
            self.prob[k] = self.pred_sum[k] / n;
        }
        if cfg!(debug_assertions) {
            self.check_bounds();
        }
        Ok(())
    }

    /// Moments of the accumulated views.
    pub fn view_stats(&self) -> Option<proofs::ViewStats> {
        (self.visits > 0).then(|| {
            let n = f64::from(self.visits);
            proofs::ViewStats {
                mean: self.prob.clone(),
                mean_sq: self.pred_sq_sum.iter().map(|s| s / n).collect(),
            }
        })
    }

    fn check_bounds(&self) {
        let Some(stats) = self.view_stats() else { return };
        if self.visits >= 2 {
            let b = proofs::variance_bound(&stats);
            debug_assert!(b.passed, "variance bound violated: {b:?}");
        }
        if self.prob.len() >= 2 {
            let e = proofs::entropy_bound(&stats.mean);
            debug_assert!(e.passed, "entropy bound violated: {e:?}");
        }
    }

    /// Resets an unvisited vertex to the uniform prior with confidence `eps`.
    pub(crate) fn mark_unreached(&mut self, eps: f64) {
        if self.is_open() && self.visits == 0 {
            let m = self.prob.len() as f64;
            self.prob.iter_mut().for_each(|p| *p = 1.0 / m);
            self.confidence = eps;
        }
    }
}

/// Max averaged probability after two or more views, `eps` after one.
pub fn multi_view_confidence(state: &VertexState, eps: f64) -> Result<f64> {
    match state.visits() {
        0 => Err(Error::InvalidInput(
            "multi-view confidence needs at least one view".into(),
        )),
        1 => Ok(eps),
        _ => Ok(state.prob().iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    }
}

/// Average of the multi-view and ConfNet confidences.
pub fn combined_confidence(multi_view: f64, confnet_score: f64) -> f64 {
    0.5 * (multi_view + confnet_score)
}

/// Where vertex confidence comes from during propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    /// Uniform random score in `[0, 1]`.
    Random,
    MultiView,
    /// ConfNet score alone once trained, multi-view before.
    ConfNet,
    /// Mean of multi-view and ConfNet once trained, multi-view before.
    Combined,
}

impl ConfidenceSource {
    pub fn uses_confnet(self) -> bool {
        matches!(self, ConfidenceSource::ConfNet | ConfidenceSource::Combined)
    }
}

impl fmt::Display for ConfidenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceSource::Random => "random",
            ConfidenceSource::MultiView => "multiview",
            ConfidenceSource::ConfNet => "confnet",
            ConfidenceSource::Combined => "combined",
        })
    }
}

impl FromStr for ConfidenceSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(ConfidenceSource::Random),
            "multiview" => Ok(ConfidenceSource::MultiView),
            "confnet" => Ok(ConfidenceSource::ConfNet),
            "combined" => Ok(ConfidenceSource::Combined),
            other => Err(format!(
                "unknown confidence source {other:?} (expected random, multiview, confnet or combined)"
            )),
        }
    }
}

/// Confidence of an open vertex under `source`.
pub fn estimate_confidence<R: Rng + ?Sized>(
    state: &VertexState,
    source: ConfidenceSource,
    eps: f64,
    confnet_score: Option<f64>,
    rng: &mut R,
) -> Result<f64> {
    match (source, confnet_score) {
        (ConfidenceSource::Random, _) => Ok(rng.gen::<f64>()),
        (ConfidenceSource::Combined, Some(s)) => {
            Ok(combined_confidence(multi_view_confidence(state, eps)?, s))
        }
        (ConfidenceSource::ConfNet, Some(s)) => Ok(s),
        _ => multi_view_confidence(state, eps),
    }
}

/// Top-η and bottom-η vertices by confidence among the ConfNet candidates.
///
/// Candidates are unlabeled vertices with at least two views, so that every
/// candidate carries a real multi-view estimate. Ties go to the lower index.
pub fn select_confnet_training_set(
    states: &[VertexState],
    eta: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(Error::InvalidInput(format!("eta must be in (0, 0.5], got {eta}")));
    }
    let mut pool: Vec<(usize, f64)> = states
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_labeled() && s.visits() >= 2)
        .map(|(i, s)| (i, s.confidence()))
        .collect();
    let u = pool.len();
    let take = (eta * u as f64).ceil() as usize;
    if take == 0 || 2 * take > u {
        return Err(Error::InvalidInput(format!(
            "cannot draw {take} positives and {take} negatives from {u} candidates"
        )));
    }
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let positives: Vec<usize> = pool[..take].iter().map(|&(i, _)| i).collect();
    // the remaining pool keeps negatives disjoint from positives under ties
    let mut rest = pool.split_off(take);
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let negatives = rest[..take].iter().map(|&(i, _)| i).collect();
    Ok((positives, negatives))
}

/// Binary genuine-vs-outlier scorer over raw vertex features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfNet {
    model: GraphModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfNetReport {
    pub losses: Vec<f64>,
}

impl ConfNet {
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        depth: usize,
        hidden: usize,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            model: GraphModel::new(arch, depth, hidden, in_dim, 1, rng)?,
        })
    }

    pub fn from_model(model: GraphModel) -> Result<Self> {
        if model.out_dim() != 1 {
            return Err(Error::Dimension("ConfNet emits one logit per vertex".into()));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &GraphModel {
        &self.model
    }

    /// Sigmoid scores for every vertex with the whole graph as one patch.
    pub fn score_all(&self, graph: &AffinityGraph, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..graph.num_vertices()).collect();
        let patch = restrict(graph, &all, 0)?;
        let logits = self.model.logits(&patch, &patch_features(features, &patch))?;
        Ok(logits.data().iter().map(|&z| sigmoid(z)).collect())
    }
}

/// Trains ConfNet with BCE: positives target 1, negatives target 0.
///
/// With `patches = None` the whole graph is one patch; otherwise the loss is
/// summed over the given patches, each contributing the targets it contains.
pub fn train_confnet(
    net: &mut ConfNet,
    graph: &AffinityGraph,
    features: &FeatureMatrix,
    patches: Option<&[GraphPatch]>,
    positives: &[usize],
    negatives: &[usize],
    epochs: usize,
    lr: f64,
) -> Result<ConfNetReport> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput(
            "ConfNet needs at least one positive and one negative".into(),
        ));
    }
    let n = graph.num_vertices();
    let mut target = vec![None; n];
    for &v in positives {
        target[v] = Some(1.0);
    }
    for &v in negatives {
        if target[v].is_some() {
            return Err(Error::InvalidInput(format!("vertex {v} is both positive and negative")));
        }
        target[v] = Some(0.0);
    }
    let owned;
    let patches: &[GraphPatch] = match patches {
        Some(p) => p,
        None => {
            let all: Vec<usize> = (0..n).collect();
            owned = [restrict(graph, &all, 0)?];
            &owned
        }
    };
    let prepared: Vec<(&GraphPatch, DenseMatrix, Vec<(usize, f64)>)> = patches
        .iter()
        .filter_map(|p| {
            let t: Vec<(usize, f64)> = p
                .vertex_ids()
                .iter()
                .enumerate()
                .filter_map(|(li, &v)| target[v].map(|y| (li, y)))
                .collect();
            (!t.is_empty()).then_some((p, t))
        })
        .map(|(p, t)| Ok((p, net.model.prepare(p, &patch_features(features, p))?, t)))
        .collect::<Result<_>>()?;
    if prepared.is_empty() {
        return Err(Error::InvalidInput("no patch contains a ConfNet target".into()));
    }

    let mut adam = AdamState::new(net.model.layers(), lr);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let model = &net.model;
        let parts: Vec<(f64, Vec<DenseMatrix>)> = prepared
            .par_iter()
            .map(|(patch, input, targets)| {
                let (logits, cache) = model.forward_prepared(patch, input.clone())?;
                let (loss, g) = sigmoid_bce(logits.data(), targets)?;
                let g = DenseMatrix::from_vec(logits.rows(), 1, g)?;
                Ok((loss, model.backward(patch, &cache, &g)?))
            })
            .collect::<Result<_>>()?;
        let (loss, grads) = sum_parts(parts)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("ConfNet loss diverged at epoch {epoch}")));
        }
        losses.push(loss);
        adam.step(net.model.layers_mut(), &grads)?;
    }
    Ok(ConfNetReport { losses })
}

/// Sums per-patch losses and gradients in patch order.
pub(crate) fn sum_parts(parts: Vec<(f64, Vec<DenseMatrix>)>) -> Result<(f64, Vec<DenseMatrix>)> {
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter
        .next()
        .ok_or_else(|| Error::InvalidInput("nothing to train on".into()))?;
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
    }
    Ok((loss, grads))
}
