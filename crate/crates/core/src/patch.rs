//! Breadth-first patch growth bounded by expected confidence gain.

use std::collections::VecDeque;

use crate::confidence::VertexState;
use crate::error::{Error, Result};
use crate::graph::{restrict, AffinityGraph, GraphPatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    /// Minimum expected gain of a viable patch.
    pub gain_threshold: f64,
    /// Maximum number of vertices in a patch.
    pub max_size: usize,
    /// Hop radius excluded from future starts around a used start.
    pub exclusion_hops: usize,
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_size == 0 {
            return Err(Error::InvalidInput("maximum patch size must be >= 1".into()));
        }
        if !(self.gain_threshold >= 0.0) || !self.gain_threshold.is_finite() {
            return Err(Error::InvalidInput(format!(
                "gain threshold must be a non-negative number, got {}",
                self.gain_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatchOutcome {
    Viable(GraphPatch),
    NoViablePatch,
}

/// Contribution `1 - c` of an open vertex, zero for labeled or frozen ones.
fn gain_of(state: &VertexState) -> f64 {
    if state.is_open() {
        1.0 - state.confidence()
    } else {
        0.0
    }
}

/// Sum of `1 - c_j` over the open vertices of the patch.
pub fn expected_gain(patch: &GraphPatch, states: &[VertexState]) -> f64 {
    vertices_gain(patch.vertex_ids(), states)
}

pub fn vertices_gain(vertices: &[usize], states: &[VertexState]) -> f64 {
    vertices.iter().map(|&v| gain_of(&states[v])).sum()
}

/// Grows a patch from `start` in breadth-first order, visiting neighbors in
/// ascending index, and stops as soon as the accumulated gain reaches the
/// threshold. Fails when the patch would exceed `max_size` first, or when the
/// reachable component runs out.
pub fn extract_patch(
    graph: &AffinityGraph,
    states: &[VertexState],
    start: usize,
    config: &ExtractorConfig,
) -> Result<PatchOutcome> {
    config.validate()?;
    if start >= graph.num_vertices() || states.len() != graph.num_vertices() {
        return Err(Error::InvalidInput(format!(
            "start {start} / {} states for {} vertices",
            states.len(),
            graph.num_vertices()
        )));
    }
    if !states[start].is_confident() {
        return Err(Error::InvalidInput(format!(
            "start vertex {start} is not in the high-confidence set"
        )));
    }
    let mut seen = vec![false; graph.num_vertices()];
    seen[start] = true;
    let mut order = vec![start];
    let mut gain = gain_of(&states[start]);
    let viable = |order: &[usize]| -> Result<PatchOutcome> {
        Ok(PatchOutcome::Viable(restrict(graph, order, start)?))
    };
    if gain >= config.gain_threshold {
        return viable(&order);
    }
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if order.len() + 1 > config.max_size {
                return Ok(PatchOutcome::NoViablePatch);
            }
            order.push(v);
            gain += gain_of(&states[v]);
            if gain >= config.gain_threshold {
                return viable(&order);
            }
            queue.push_back(v);
        }
    }
    Ok(PatchOutcome::NoViablePatch)
}

/// All vertices within `hops` edges of `start`, sorted ascending.
pub fn exclude_hops(graph: &AffinityGraph, start: usize, hops: usize) -> Vec<usize> {
    let mut depth = vec![usize::MAX; graph.num_vertices()];
    depth[start] = 0;
    let mut out = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if depth[u] == hops {
            continue;
        }
        for &(v, _) in graph.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                out.push(v);
                queue.push_back(v);
            }
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> AffinityGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        AffinityGraph::from_edges(n, &edges).unwrap()
    }

    fn states_with_label(n: usize, labeled: &[usize]) -> Vec<VertexState> {
        (0..n)
            .map(|i| {
                if labeled.contains(&i) {
                    VertexState::labeled(2, 0)
                } else {
                    VertexState::unlabeled(2)
                }
            })
            .collect()
    }

    fn cfg(gain: f64, size: usize) -> ExtractorConfig {
        ExtractorConfig {
            gain_threshold: gain,
            max_size: size,
            exclusion_hops: 1,
        }
    }

    #[test]
    fn chain_collects_until_gain() {
        let g = chain(5);
        let states = states_with_label(5, &[0]);
        match extract_patch(&g, &states, 0, &cfg(3.0, 10)).unwrap() {
            PatchOutcome::Viable(p) => assert_eq!(p.vertex_ids(), &[0, 1, 2, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_threshold_returns_start() {
        let g = chain(5);
        let states = states_with_label(5, &[2]);
        match extract_patch(&g, &states, 2, &cfg(0.0, 10)).unwrap() {
            PatchOutcome::Viable(p) => assert_eq!(p.vertex_ids(), &[2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_graph_has_no_viable_patch() {
        let g = chain(5);
        let states = states_with_label(5, &[0, 1, 2, 3, 4]);
        assert_eq!(
            extract_patch(&g, &states, 0, &cfg(1.0, 5)).unwrap(),
            PatchOutcome::NoViablePatch
        );
    }

    #[test]
    fn size_cap_blocks_patch() {
        let g = chain(5);
        let states = states_with_label(5, &[0]);
        assert_eq!(
            extract_patch(&g, &states, 0, &cfg(3.0, 3)).unwrap(),
            PatchOutcome::NoViablePatch
        );
        assert!(matches!(
            extract_patch(&g, &states, 0, &cfg(3.0, 4)).unwrap(),
            PatchOutcome::Viable(_)
        ));
    }

    #[test]
    fn start_must_be_confident() {
        let g = chain(3);
        let states = states_with_label(3, &[0]);
        assert!(extract_patch(&g, &states, 1, &cfg(1.0, 3)).is_err());
    }

    #[test]
    fn gain_counts_open_vertices() {
        let g = chain(6);
        let mut states = states_with_label(6, &[0]);
        states[1].freeze();
        states[2].accumulate_view(&[0.5, 0.5]).unwrap();
        states[2].set_confidence(0.25).unwrap();
        let p = restrict(&g, &[0, 1, 2, 3], 0).unwrap();
        assert_eq!(expected_gain(&p, &states), 0.75 + 1.0);
        let all_frozen = states_with_label(6, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(expected_gain(&p, &all_frozen), 0.0);
        let open = states_with_label(6, &[]);
        let q = restrict(&g, &[1, 2, 3, 4, 5], 1).unwrap();
        assert_eq!(expected_gain(&q, &open), 5.0);
    }

    #[test]
    fn hop_exclusion() {
        let star_edges: Vec<_> = (1..6).map(|i| (0, i, 1.0)).collect();
        let star = AffinityGraph::from_edges(6, &star_edges).unwrap();
        assert_eq!(exclude_hops(&star, 0, 0), vec![0]);
        assert_eq!(exclude_hops(&star, 0, 1), (0..6).collect::<Vec<_>>());
        assert_eq!(exclude_hops(&star, 3, 1), vec![0, 3]);
        assert_eq!(exclude_hops(&chain(6), 2, 2), vec![0, 1, 2, 3, 4]);
    }
}
