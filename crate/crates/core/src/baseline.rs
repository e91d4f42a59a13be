//! Clamped label propagation over the affinity graph.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub max_sweeps: usize,
    /// Stop once the largest entry change of a sweep falls below this.
    pub tolerance: f64,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub probs: Vec<Vec<f64>>,
    pub confidence: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Synchronous sweeps `p <- D^-1 A p` with labeled rows reset to one-hot.
/// Negative edge weights are treated as zero. Unlabeled rows start uniform;
/// a row with no positive edge keeps its uniform prior.
pub fn run_lp(
    graph: &AffinityGraph,
    labels: &[Option<usize>],
    classes: usize,
    config: &LpConfig,
) -> Result<LpResult> {
    let n = graph.num_vertices();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} vertices",
            labels.len()
        )));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {}",
            config.tolerance
        )));
    }
    if classes == 0 || labels.iter().all(Option::is_none) {
        return Err(Error::InvalidInput("label propagation needs a labeled vertex".into()));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside {classes} classes")));
    }
    let one_hot = |y: usize| {
        let mut r = vec![0.0; classes];
        r[y] = 1.0;
        r
    };
    let mut p: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| l.map_or_else(|| vec![1.0 / classes as f64; classes], one_hot))
        .collect();

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < config.max_sweeps {
        let next: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if let Some(y) = labels[i] {
                    return one_hot(y);
                }
                let mut acc = vec![0.0; classes];
                let mut total = 0.0;
                for &(j, w) in graph.neighbors(i) {
                    if w > 0.0 {
                        total += w;
                        for (a, &q) in acc.iter_mut().zip(&p[j]) {
                            *a += w * q;
                        }
                    }
                }
                if total > 0.0 {
                    acc.iter_mut().for_each(|a| *a /= total);
                    acc
                } else {
                    p[i].clone()
                }
            })
            .collect();
        let change = next
            .iter()
            .zip(&p)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        p = next;
        sweeps += 1;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let confidence = p.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    Ok(LpResult {
        probs: p,
        confidence,
        sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_sources_split_evenly() {
        let g = AffinityGraph::from_edges(3, &[(0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        let r = run_lp(&g, &[Some(0), Some(1), None], 2, &LpConfig::default()).unwrap();
        assert_eq!(r.probs[2], vec![0.5, 0.5]);
        assert_eq!(r.probs[0], vec![1.0, 0.0]);
        assert_eq!(r.probs[1], vec![0.0, 1.0]);
        assert!(r.converged);
    }

    #[test]
    fn single_source_takes_over() {
        let g = AffinityGraph::from_edges(2, &[(0, 1, 0.7)]).unwrap();
        let r = run_lp(&g, &[Some(0), None], 2, &LpConfig::default()).unwrap();
        assert_eq!(r.probs[1], vec![1.0, 0.0]);
        assert_eq!(r.confidence[1], 1.0);
    }

    #[test]
    fn isolated_vertex_keeps_prior() {
        let g = AffinityGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let r = run_lp(&g, &[Some(1), None, None], 3, &LpConfig::default()).unwrap();
        assert_eq!(r.probs[2], vec![1.0 / 3.0; 3]);
        assert_eq!(r.probs[1], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let g = AffinityGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let cfg = LpConfig::default();
        assert!(run_lp(&g, &[None, None], 2, &cfg).is_err());
        assert!(run_lp(&g, &[Some(2), None], 2, &cfg).is_err());
        assert!(run_lp(&g, &[Some(0)], 2, &cfg).is_err());
        let bad = LpConfig {
            tolerance: 0.0,
            ..cfg
        };
        assert!(run_lp(&g, &[Some(0), None], 2, &bad).is_err());
    }
}
