//! Confidence-based propagation scheduler.
//!
//! Each iteration picks a start vertex uniformly from the high-confidence set
//! (labeled plus frozen vertices, minus excluded starts), grows a patch
//! around it, predicts the patch with the local predictor, folds the
//! predictions into the open vertices, re-estimates their confidence and
//! freezes every vertex that reaches `c_tau`. ConfNet is trained once the
//! configured fraction of the iteration budget has elapsed.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::confidence::{
    combined_confidence, estimate_confidence, multi_view_confidence, select_confnet_training_set, train_confnet,
    ConfNet, ConfidenceSource, VertexState,
};
use crate::error::{Error, Result};
use crate::graph::{AffinityGraph, FeatureMatrix, GraphPatch};
use crate::model::{Architecture, GraphModel};
use crate::nn::DenseMatrix;
use crate::patch::{exclude_hops, expected_gain, extract_patch, ExtractorConfig, PatchOutcome};
use crate::predictor::{predict_patch, sample_patches_from_seeds};
use crate::proofs::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfNetConfig {
    pub arch: Architecture,
    pub depth: usize,
    pub hidden: usize,
    /// Fraction of candidates taken as positives and as negatives.
    pub eta: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of `max_iterations` after which ConfNet is trained.
    pub trigger: f64,
    /// Number of sampled training patches; 0 trains on the whole graph.
    pub patches: usize,
}

impl Default for ConfNetConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Sgc,
            depth: 1,
            hidden: 256,
            eta: 0.05,
            epochs: 100,
            lr: 0.01,
            trigger: 0.5,
            patches: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub c_tau: f64,
    pub epsilon: f64,
    pub extractor: ExtractorConfig,
    pub max_iterations: usize,
    /// Stop after this many iterations without a new freeze once every
    /// vertex has been in at least one patch; 0 disables the rule.
    pub patience: usize,
    /// Maximum number of disjoint patches processed per iteration.
    pub parallel_patches: usize,
    pub confidence: ConfidenceSource,
    pub confnet: ConfNetConfig,
    pub seed: u64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            c_tau: 0.9,
            epsilon: 0.01,
            extractor: ExtractorConfig {
                gain_threshold: 500.0,
                max_size: 3000,
                exclusion_hops: 1,
            },
            max_iterations: 100,
            patience: 10,
            parallel_patches: 1,
            confidence: ConfidenceSource::Combined,
            confnet: ConfNetConfig::default(),
            seed: 0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("c_tau", self.c_tau)?;
        unit("epsilon", self.epsilon)?;
        unit("confnet trigger", self.confnet.trigger)?;
        if self.parallel_patches == 0 {
            return Err(Error::InvalidInput("parallel patch count must be >= 1".into()));
        }
        Ok(())
    }
}

/// One processed patch.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub start_vertex: usize,
    pub patch_size: usize,
    pub gain: f64,
    pub frozen_total: usize,
    pub mean_confidence: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {:.6} {} {:.6}",
            self.iteration,
            self.start_vertex,
            self.patch_size,
            self.gain,
            self.frozen_total,
            self.mean_confidence
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No start vertex left in the high-confidence set.
    Exhausted,
    MaxIterations,
    /// Every vertex visited and no new freeze for `patience` iterations.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct PropagationState {
    states: Vec<VertexState>,
    excluded: Vec<bool>,
    memberships: Vec<u32>,
    confident: usize,
    iteration: usize,
    rng: ChaCha8Rng,
    confnet_scores: Option<Vec<f64>>,
}

impl PropagationState {
    /// Labeled vertices start one-hot and frozen, the rest uniform.
    pub fn new(labels: &[Option<usize>], classes: usize, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidInput("need at least one class".into()));
        }
        let states: Vec<VertexState> = labels
            .iter()
            .map(|l| match *l {
                Some(y) if y >= classes => Err(Error::InvalidInput(format!(
                    "label {y} outside {classes} classes"
                ))),
                Some(y) => Ok(VertexState::labeled(classes, y)),
                None => Ok(VertexState::unlabeled(classes)),
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_states(states, seed))
    }

    pub fn from_states(states: Vec<VertexState>, seed: u64) -> Self {
        let n = states.len();
        let confident = states.iter().filter(|s| s.is_confident()).count();
        Self {
            states,
            excluded: vec![false; n],
            memberships: vec![0; n],
            confident,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            confnet_scores: None,
        }
    }

    pub fn states(&self) -> &[VertexState] {
        &self.states
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Size of the high-confidence set.
    pub fn confident_count(&self) -> usize {
        self.confident
    }

    pub fn is_excluded(&self, v: usize) -> bool {
        self.excluded[v]
    }

    pub fn exclude(&mut self, v: usize) {
        self.excluded[v] = true;
    }

    /// Number of patches each vertex belonged to.
    pub fn memberships(&self) -> &[u32] {
        &self.memberships
    }

    pub fn confnet_scores(&self) -> Option<&[f64]> {
        self.confnet_scores.as_deref()
    }

    /// Multi-view confidence of every vertex, regardless of the active source:
    /// 1 for labeled vertices, `eps` for vertices with fewer than two views.
    pub fn multi_view_snapshot(&self, eps: f64) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| {
                if s.is_labeled() {
                    1.0
                } else if s.visits() == 0 {
                    eps
                } else {
                    multi_view_confidence(s, eps).unwrap_or(eps)
                }
            })
            .collect()
    }

    /// Confidence used for outlier thresholding, re-estimated from the final
    /// state with `source`: the mean of multi-view and ConfNet for
    /// `Combined`, the stored value for `Random`. Labeled vertices get 1 and
    /// unvisited ones `eps`. Vertex states are left untouched.
    pub fn final_confidence(&self, source: ConfidenceSource, eps: f64) -> Vec<f64> {
        let mv = self.multi_view_snapshot(eps);
        self.states
            .iter()
            .enumerate()
            .map(|(v, s)| {
                if s.is_labeled() {
                    return 1.0;
                }
                if s.visits() == 0 {
                    return eps;
                }
                match (source, &self.confnet_scores) {
                    (ConfidenceSource::Random, _) => s.confidence(),
                    (ConfidenceSource::Combined, Some(sc)) => combined_confidence(mv[v], sc[v]),
                    (ConfidenceSource::ConfNet, Some(sc)) => sc[v],
                    _ => mv[v],
                }
            })
            .collect()
    }

    /// Uniform draw from the high-confidence set minus excluded starts.
    pub fn pick_start(&mut self) -> Option<usize> {
        let candidates: Vec<usize> = (0..self.states.len())
            .filter(|&v| self.states[v].is_confident() && !self.excluded[v])
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[self.rng.gen_range(0..candidates.len())])
        }
    }

    fn set_confidence(&mut self, v: usize, c: f64, c_tau: f64) -> Result<bool> {
        self.states[v].set_confidence(c)?;
        if c >= c_tau {
            self.states[v].freeze();
            self.confident += 1;
            return Ok(true);
        }
        Ok(false)
    }

    fn reestimate(&mut self, v: usize, config: &PropagationConfig) -> Result<bool> {
        let score = self.confnet_scores.as_ref().map(|s| s[v]);
        let c = estimate_confidence(
            &self.states[v],
            config.confidence,
            config.epsilon,
            score,
            &mut self.rng,
        )?;
        self.set_confidence(v, c, config.c_tau)
    }

    fn mean_confidence(&self) -> f64 {
        self.states.iter().map(VertexState::confidence).sum::<f64>() / self.states.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub state: PropagationState,
    pub log: Vec<IterationRecord>,
    pub termination: Termination,
    /// See [`PropagationState::final_confidence`].
    pub final_confidence: Vec<f64>,
    /// Iteration at which ConfNet was trained, if it was.
    pub confnet_trained_at: Option<usize>,
}

impl PropagationOutcome {
    pub fn mean_visits(&self) -> f64 {
        let m = self.state.memberships();
        m.iter().map(|&x| f64::from(x)).sum::<f64>() / m.len() as f64
    }

    pub fn visited_fraction(&self) -> f64 {
        let m = self.state.memberships();
        m.iter().filter(|&&x| x > 0).count() as f64 / m.len() as f64
    }
}

/// Up to `parallel_patches` disjoint viable patches, sorted by start vertex.
fn select_patches(
    graph: &AffinityGraph,
    ps: &mut PropagationState,
    config: &PropagationConfig,
) -> Result<Vec<GraphPatch>> {
    let mut batch: Vec<GraphPatch> = Vec::new();
    let mut taken = vec![false; graph.num_vertices()];
    let mut deferred = Vec::new();
    while batch.len() < config.parallel_patches {
        let Some(start) = ps.pick_start() else { break };
        match extract_patch(graph, &ps.states, start, &config.extractor)? {
            PatchOutcome::NoViablePatch => ps.excluded[start] = true,
            PatchOutcome::Viable(p) => {
                if p.vertex_ids().iter().any(|&v| taken[v]) {
                    // overlapping starts wait for a later iteration
                    ps.excluded[start] = true;
                    deferred.push(start);
                    continue;
                }
                for &v in p.vertex_ids() {
                    taken[v] = true;
                }
                for v in exclude_hops(graph, start, config.extractor.exclusion_hops) {
                    ps.excluded[v] = true;
                }
                batch.push(p);
            }
        }
    }
    for v in deferred {
        ps.excluded[v] = false;
    }
    batch.sort_by_key(GraphPatch::start_vertex);
    Ok(batch)
}

fn train_confnet_stage(
    graph: &AffinityGraph,
    features: &FeatureMatrix,
    ps: &mut PropagationState,
    config: &PropagationConfig,
) -> Result<bool> {
    let (positives, negatives) = match select_confnet_training_set(&ps.states, config.confnet.eta) {
        Ok(sets) => sets,
        // not enough multi-view candidates yet
        Err(Error::InvalidInput(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let cc = &config.confnet;
    let mut net = ConfNet::new(cc.arch, cc.depth, cc.hidden, features.dim(), &mut ps.rng)?;
    let patches = if cc.patches > 0 {
        let seeds: Vec<usize> = (0..ps.states.len())
            .filter(|&v| ps.states[v].is_confident())
            .collect();
        Some(sample_patches_from_seeds(
            graph,
            &ps.states,
            seeds,
            cc.patches,
            &config.extractor,
            &mut ps.rng,
        )?)
    } else {
        None
    };
    train_confnet(
        &mut net,
        graph,
        features,
        patches.as_deref(),
        &positives,
        &negatives,
        cc.epochs,
        cc.lr,
    )?;
    ps.confnet_scores = Some(net.score_all(graph, features)?);
    for v in 0..ps.states.len() {
        if ps.states[v].is_open() && ps.states[v].visits() > 0 {
            ps.reestimate(v, config)?;
        }
    }
    Ok(true)
}

/// Runs propagation to termination from the given labels.
pub fn propagate(
    graph: &AffinityGraph,
    features: &FeatureMatrix,
    predictor: &GraphModel,
    labels: &[Option<usize>],
    config: &PropagationConfig,
) -> Result<PropagationOutcome> {
    config.validate()?;
    let n = graph.num_vertices();
    if features.rows() != n || labels.len() != n {
        return Err(Error::Dimension(format!(
            "graph has {n} vertices, features {} rows, labels {}",
            features.rows(),
            labels.len()
        )));
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::InvalidInput("propagation needs at least one labeled vertex".into()));
    }
    let mut ps = PropagationState::new(labels, predictor.out_dim(), config.seed)?;
    let wants_confnet = config.confidence.uses_confnet();
    let trigger = (config.confnet.trigger * config.max_iterations as f64).ceil() as usize;
    let mut confnet_trained_at = None;
    let mut log = Vec::new();
    let mut stall = 0usize;
    let mut termination = Termination::MaxIterations;

    while ps.iteration < config.max_iterations {
        if wants_confnet
            && confnet_trained_at.is_none()
            && ps.iteration >= trigger
            && train_confnet_stage(graph, features, &mut ps, config)?
        {
            confnet_trained_at = Some(ps.iteration);
        }
        let batch = select_patches(graph, &mut ps, config)?;
        if batch.is_empty() {
            termination = Termination::Exhausted;
            break;
        }
        let gains: Vec<f64> = batch.iter().map(|p| expected_gain(p, &ps.states)).collect();
        let predictions: Vec<DenseMatrix> = batch
            .par_iter()
            .map(|p| predict_patch(predictor, p, features))
            .collect::<Result<_>>()?;

        let mut newly_frozen = 0;
        let mut touched = Vec::new();
        for (patch, probs) in batch.iter().zip(&predictions) {
            for (li, &v) in patch.vertex_ids().iter().enumerate() {
                ps.memberships[v] += 1;
                if ps.states[v].is_open() {
                    ps.states[v].accumulate_view(probs.row(li))?;
                    touched.push(v);
                }
            }
        }
        for v in touched {
            if ps.reestimate(v, config)? {
                newly_frozen += 1;
            }
        }
        let mean_confidence = ps.mean_confidence();
        for (patch, gain) in batch.iter().zip(gains) {
            log.push(IterationRecord {
                iteration: ps.iteration,
                start_vertex: patch.start_vertex(),
                patch_size: patch.len(),
                gain,
                frozen_total: ps.confident,
                mean_confidence,
            });
        }
        ps.iteration += 1;

        let all_visited = ps.memberships.iter().all(|&m| m > 0);
        stall = if newly_frozen == 0 && all_visited { stall + 1 } else { 0 };
        if config.patience > 0 && stall >= config.patience {
            termination = Termination::Stalled;
            break;
        }
    }

    if wants_confnet
        && confnet_trained_at.is_none()
        && train_confnet_stage(graph, features, &mut ps, config)?
    {
        confnet_trained_at = Some(ps.iteration);
    }
    for s in &mut ps.states {
        s.mark_unreached(config.epsilon);
    }
    let final_confidence = ps.final_confidence(config.confidence, config.epsilon);
    Ok(PropagationOutcome {
        final_confidence,
        state: ps,
        log,
        termination,
        confnet_trained_at,
    })
}

/// A validation vertex with its revealed ground truth (`None` = outlier).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSample {
    pub confidence: f64,
    pub predicted: usize,
    pub truth: Option<usize>,
}

fn validation_accuracy(samples: &[ValidationSample], threshold: f64) -> usize {
    samples
        .iter()
        .filter(|s| match s.truth {
            None => s.confidence < threshold,
            Some(y) => s.confidence >= threshold && s.predicted == y,
        })
        .count()
}

/// Candidate thresholds: below the smallest confidence, midpoints between
/// consecutive distinct confidences, and above the largest.
pub fn threshold_candidates(confidences: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = confidences.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let Some(&lo) = distinct.first() else { return Vec::new() };
    let hi = distinct[distinct.len() - 1];
    let mut out = vec![if lo > 0.0 { lo / 2.0 } else { lo }];
    out.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(if hi < 1.0 { 0.5 * (hi + 1.0) } else { hi + 0.5 });
    out
}

/// Threshold with the best validation accuracy; ties go to the smallest.
/// Accepts validation sets with only one kind of sample.
pub fn sweep_threshold(samples: &[ValidationSample]) -> Result<f64> {
    let confidences: Vec<f64> = samples.iter().map(|s| s.confidence).collect();
    let candidates = threshold_candidates(&confidences);
    let mut best: Option<(usize, f64)> = None;
    for t in candidates {
        let acc = validation_accuracy(samples, t);
        if best.map_or(true, |(b, _)| acc > b) {
            best = Some((acc, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::InvalidInput("empty validation set".into()))
}

/// Outlier threshold from a validation set holding both outliers and
/// in-class samples.
pub fn determine_outlier_threshold(samples: &[ValidationSample]) -> Result<f64> {
    let outliers = samples.iter().filter(|s| s.truth.is_none()).count();
    if outliers == 0 || outliers == samples.len() {
        return Err(Error::InvalidInput(format!(
            "validation set needs outliers and in-class samples ({outliers} of {})",
            samples.len()
        )));
    }
    sweep_threshold(samples)
}

/// Final per-vertex labels: −1 below the threshold, arg-max otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierDecision {
    pub threshold: f64,
    pub labels: Vec<i64>,
    pub confidence: Vec<f64>,
}

impl OutlierDecision {
    /// Labels file body: `vertex_id y_hat confidence` per line.
    pub fn to_labels_text(&self) -> String {
        let mut s = String::new();
        for (v, (y, c)) in self.labels.iter().zip(&self.confidence).enumerate() {
            s.push_str(&format!("{v} {y} {c:.9}\n"));
        }
        s
    }
}

/// Applies the outlier rule to probability rows and confidences. Labeled
/// vertices keep their label regardless of the threshold.
pub fn decide(
    probs: &[Vec<f64>],
    confidence: &[f64],
    labels: &[Option<usize>],
    threshold: f64,
) -> OutlierDecision {
    let out = probs
        .iter()
        .zip(confidence)
        .zip(labels)
        .map(|((p, &c), l)| match l {
            Some(y) => *y as i64,
            None if c < threshold => -1,
            None => argmax(p) as i64,
        })
        .collect();
    OutlierDecision {
        threshold,
        labels: out,
        confidence: confidence.to_vec(),
    }
}

/// Labels from the final state and the given per-vertex final confidence.
pub fn finalize_labels(
    state: &PropagationState,
    confidence: &[f64],
    threshold: f64,
) -> OutlierDecision {
    let probs: Vec<Vec<f64>> = state.states().iter().map(|s| s.prob().to_vec()).collect();
    let labels: Vec<Option<usize>> = state.states().iter().map(VertexState::label).collect();
    decide(&probs, confidence, &labels, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(c: f64, truth: Option<usize>) -> ValidationSample {
        ValidationSample {
            confidence: c,
            predicted: 0,
            truth,
        }
    }

    #[test]
    fn separable_validation_picks_midpoint() {
        let mut v: Vec<_> = (0..5).map(|_| sample(0.1, None)).collect();
        v.extend((0..5).map(|_| sample(0.9, Some(0))));
        assert_eq!(determine_outlier_threshold(&v).unwrap(), 0.5);
    }

    #[test]
    fn equal_confidences_follow_majority() {
        let mut v: Vec<_> = (0..3).map(|_| sample(0.4, None)).collect();
        v.extend((0..5).map(|_| sample(0.4, Some(0))));
        let t = determine_outlier_threshold(&v).unwrap();
        assert!(t < 0.4);
        let mut w: Vec<_> = (0..5).map(|_| sample(0.4, None)).collect();
        w.extend((0..3).map(|_| sample(0.4, Some(0))));
        assert!(determine_outlier_threshold(&w).unwrap() > 0.4);
    }

    #[test]
    fn degenerate_validation_rejected() {
        let v = vec![sample(0.3, Some(0)), sample(0.5, Some(0))];
        assert!(determine_outlier_threshold(&v).is_err());
        assert!(sweep_threshold(&v).unwrap() < 0.3);
        assert!(determine_outlier_threshold(&[]).is_err());
    }

    #[test]
    fn finalize_rules() {
        let mut states = vec![VertexState::labeled(2, 1)];
        let mut s = VertexState::unlabeled(2);
        s.accumulate_view(&[0.2, 0.8]).unwrap();
        s.accumulate_view(&[0.2, 0.8]).unwrap();
        s.set_confidence(0.8).unwrap();
        states.push(s.clone());
        s.set_confidence(0.1).unwrap();
        states.push(s);
        let ps = PropagationState::from_states(states, 0);
        let conf: Vec<f64> = ps.states().iter().map(VertexState::confidence).collect();
        let d = finalize_labels(&ps, &conf, 0.5);
        assert_eq!(d.labels, vec![1, 1, -1]);
        let d = finalize_labels(&ps, &conf, 2.0);
        assert_eq!(d.labels, vec![1, -1, -1]);
        let d = finalize_labels(&ps, &conf, 0.0);
        assert_eq!(d.labels, vec![1, 1, 1]);
        assert_eq!(finalize_labels(&ps, &[0.0; 3], 0.5).labels, vec![1, -1, -1]);
    }

    #[test]
    fn pick_start_cases() {
        let labels = [Some(0), None, None];
        let mut ps = PropagationState::new(&labels, 2, 5).unwrap();
        assert_eq!(ps.pick_start(), Some(0));
        ps.exclude(0);
        assert_eq!(ps.pick_start(), None);

        let labels: Vec<Option<usize>> = (0..50).map(|i| (i % 3 == 0).then_some(0)).collect();
        let mut a = PropagationState::new(&labels, 2, 11).unwrap();
        let mut b = PropagationState::new(&labels, 2, 11).unwrap();
        let sa: Vec<_> = (0..20).map(|_| a.pick_start()).collect();
        let sb: Vec<_> = (0..20).map(|_| b.pick_start()).collect();
        assert_eq!(sa, sb);
        assert!(sa.iter().all(|v| v.unwrap() % 3 == 0));
    }
}
