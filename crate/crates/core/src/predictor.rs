//! Local label predictor: trained on labeled patches, applied patch by patch.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::confidence::{sum_parts, VertexState};
use crate::error::{Error, Result};
use crate::graph::{restrict, AffinityGraph, FeatureMatrix, GraphPatch};
use crate::model::{patch_features, GraphModel};
use crate::nn::{softmax_rows, softmax_xent, AdamState, DenseMatrix};
use crate::patch::{extract_patch, ExtractorConfig, PatchOutcome};
use crate::proofs::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Fraction of labeled patch members whose arg-max matches their label.
    pub train_accuracy: f64,
}

/// Training patches seeded from labeled vertices.
///
/// Seeds cycle through a shuffled copy of the labeled set, so `count` up to
/// the number of labeled vertices yields distinct seeds. A seed whose
/// neighborhood never reaches the gain threshold falls back to the
/// breadth-first ball of at most `max_size` vertices around it.
pub fn sample_training_patches<R: Rng + ?Sized>(
    graph: &AffinityGraph,
    states: &[VertexState],
    count: usize,
    extractor: &ExtractorConfig,
    rng: &mut R,
) -> Result<Vec<GraphPatch>> {
    let seeds: Vec<usize> = (0..states.len()).filter(|&v| states[v].is_labeled()).collect();
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no labeled vertices to seed training patches".into()));
    }
    sample_patches_from_seeds(graph, states, seeds, count, extractor, rng)
}

/// Patches grown from `seeds` (all in the high-confidence set), cycling
/// through them in shuffled order.
pub fn sample_patches_from_seeds<R: Rng + ?Sized>(
    graph: &AffinityGraph,
    states: &[VertexState],
    mut seeds: Vec<usize>,
    count: usize,
    extractor: &ExtractorConfig,
    rng: &mut R,
) -> Result<Vec<GraphPatch>> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no seeds to grow patches from".into()));
    }
    seeds.shuffle(rng);
    (0..count)
        .map(|i| {
            let seed = seeds[i % seeds.len()];
            match extract_patch(graph, states, seed, extractor)? {
                PatchOutcome::Viable(p) => Ok(p),
                PatchOutcome::NoViablePatch => {
                    restrict(graph, &bfs_ball(graph, seed, extractor.max_size), seed)
                }
            }
        })
        .collect()
}

fn bfs_ball(graph: &AffinityGraph, start: usize, max_size: usize) -> Vec<usize> {
    let mut seen = vec![false; graph.num_vertices()];
    seen[start] = true;
    let mut order = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if order.len() >= max_size {
                return order;
            }
            if !seen[v] {
                seen[v] = true;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    order
}

struct Prepared<'a> {
    patch: &'a GraphPatch,
    input: DenseMatrix,
    targets: Vec<(usize, usize)>,
}

fn prepare<'a>(
    model: &GraphModel,
    patches: &'a [GraphPatch],
    features: &FeatureMatrix,
    labels: &[Option<usize>],
) -> Result<Vec<Prepared<'a>>> {
    patches
        .par_iter()
        .filter_map(|patch| {
            let targets: Vec<(usize, usize)> = patch
                .vertex_ids()
                .iter()
                .enumerate()
                .filter_map(|(li, &v)| labels[v].map(|y| (li, y)))
                .collect();
            if targets.is_empty() {
                return None;
            }
            Some(
                model
                    .prepare(patch, &patch_features(features, patch))
                    .map(|input| Prepared { patch, input, targets }),
            )
        })
        .collect()
}

fn epoch_step(model: &mut GraphModel, adam: &mut AdamState, prepared: &[Prepared<'_>]) -> Result<f64> {
    let frozen_model = &*model;
    let parts: Vec<(f64, Vec<DenseMatrix>)> = prepared
        .par_iter()
        .map(|p| {
            let (logits, cache) = frozen_model.forward_prepared(p.patch, p.input.clone())?;
            let (loss, g) = softmax_xent(&logits, &p.targets)?;
            Ok((loss, frozen_model.backward(p.patch, &cache, &g)?))
        })
        .collect::<Result<_>>()?;
    let (loss, grads) = sum_parts(parts)?;
    if !loss.is_finite() {
        return Err(Error::Numerical("predictor loss is not finite".into()));
    }
    adam.step(model.layers_mut(), &grads)?;
    Ok(loss)
}

fn accuracy(model: &GraphModel, prepared: &[Prepared<'_>]) -> Result<f64> {
    let counts: Vec<(usize, usize)> = prepared
        .par_iter()
        .map(|p| {
            let (logits, _) = model.forward_prepared(p.patch, p.input.clone())?;
            let hit = p
                .targets
                .iter()
                .filter(|&&(r, y)| argmax(logits.row(r)) == y)
                .count();
            Ok((hit, p.targets.len()))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts
        .into_iter()
        .fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

fn check_labels(model: &GraphModel, labels: &[Option<usize>], features: &FeatureMatrix) -> Result<()> {
    if labels.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} vertices",
            labels.len(),
            features.rows()
        )));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&y| y >= model.out_dim()) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside {} classes",
            model.out_dim()
        )));
    }
    Ok(())
}

/// Full-batch Adam on the summed masked cross-entropy of a fixed patch set.
pub fn train_predictor(
    model: &mut GraphModel,
    patches: &[GraphPatch],
    features: &FeatureMatrix,
    labels: &[Option<usize>],
    epochs: usize,
    lr: f64,
) -> Result<TrainReport> {
    check_labels(model, labels, features)?;
    let prepared = prepare(model, patches, features, labels)?;
    if prepared.is_empty() && epochs > 0 {
        return Err(Error::InvalidInput("no training patch contains a labeled vertex".into()));
    }
    let mut adam = AdamState::new(model.layers(), lr);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let loss = epoch_step(model, &mut adam, &prepared)
            .map_err(|e| annotate_epoch(e, epoch))?;
        losses.push(loss);
    }
    Ok(TrainReport {
        losses,
        train_accuracy: accuracy(model, &prepared)?,
    })
}

/// Like [`train_predictor`] but draws a fresh patch set before every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_predictor_resampled<R: Rng + ?Sized>(
    model: &mut GraphModel,
    graph: &AffinityGraph,
    states: &[VertexState],
    features: &FeatureMatrix,
    count: usize,
    extractor: &ExtractorConfig,
    epochs: usize,
    lr: f64,
    rng: &mut R,
) -> Result<TrainReport> {
    let labels: Vec<Option<usize>> = states.iter().map(VertexState::label).collect();
    check_labels(model, &labels, features)?;
    let mut adam = AdamState::new(model.layers(), lr);
    let mut losses = Vec::with_capacity(epochs);
    let mut patches = Vec::new();
    for epoch in 0..epochs {
        patches = sample_training_patches(graph, states, count, extractor, rng)?;
        let prepared = prepare(model, &patches, features, &labels)?;
        let loss = epoch_step(model, &mut adam, &prepared)
            .map_err(|e| annotate_epoch(e, epoch))?;
        losses.push(loss);
    }
    let prepared = prepare(model, &patches, features, &labels)?;
    Ok(TrainReport {
        losses,
        train_accuracy: accuracy(model, &prepared)?,
    })
}

fn annotate_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{msg} at epoch {epoch}")),
        other => other,
    }
}

/// Softmax class probabilities for every patch vertex, in patch order.
pub fn predict_patch(
    model: &GraphModel,
    patch: &GraphPatch,
    features: &FeatureMatrix,
) -> Result<DenseMatrix> {
    if patch.is_empty() {
        return Err(Error::InvalidInput("cannot predict on an empty patch".into()));
    }
    if features.dim() != model.in_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            model.in_dim(),
            features.dim()
        )));
    }
    let logits = model.logits(patch, &patch_features(features, patch))?;
    Ok(softmax_rows(&logits))
}
