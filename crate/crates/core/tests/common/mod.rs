//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reliprop::confidence::VertexState;
use reliprop::graph::{restrict, AffinityGraph, FeatureMatrix, GraphPatch};
use reliprop::model::{Architecture, GraphModel};
use reliprop::nn::{sigmoid_bce, softmax_xent, DenseMatrix};
use reliprop::patch::{extract_patch, ExtractorConfig, PatchOutcome};
use reliprop::scheduler::ValidationSample;

pub fn random_features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

pub fn gaussian_features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

/// KNN edges by sorting every full similarity row; keys are `(min, max)`.
pub fn knn_oracle(features: &FeatureMatrix, k: usize) -> BTreeMap<(usize, usize), f64> {
    let n = features.rows();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut edges = BTreeMap::new();
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, cos(features.row(i), features.row(j))))
            .collect();
        row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, w) in &row[..k] {
            edges.insert((i.min(j), i.max(j)), w);
        }
    }
    edges
}

pub fn graph_edges(graph: &AffinityGraph) -> BTreeMap<(usize, usize), f64> {
    graph.edges().map(|(i, j, w)| ((i, j), w)).collect()
}

/// Exact agreement of edge sets, weights within `tol`.
pub fn knn_matches(graph: &AffinityGraph, oracle: &BTreeMap<(usize, usize), f64>, tol: f64) -> bool {
    let got = graph_edges(graph);
    got.len() == oracle.len()
        && got
            .iter()
            .zip(oracle)
            .all(|((ka, wa), (kb, wb))| ka == kb && (wa - wb).abs() <= tol)
}

/// Solves `a x = b` for several right-hand sides by Gauss-Jordan elimination.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..b[r].len() {
                b[r][c] -= f * b[col][c];
            }
        }
    }
    Some((0..n).map(|r| b[r].iter().map(|x| x / a[r][r]).collect()).collect())
}

/// Harmonic fixed point of clamped label propagation from a dense solve:
/// `(D_uu - W_uu) P_u = W_ul Y_l`. Negative weights count as zero.
pub fn lp_fixed_point(
    graph: &AffinityGraph,
    labels: &[Option<usize>],
    classes: usize,
) -> Option<Vec<Vec<f64>>> {
    let n = graph.num_vertices();
    let w = |i: usize, j: usize| graph.weight(i, j).max(0.0);
    let unl: Vec<usize> = (0..n).filter(|&i| labels[i].is_none()).collect();
    let mut a = vec![vec![0.0; unl.len()]; unl.len()];
    let mut b = vec![vec![0.0; classes]; unl.len()];
    for (r, &i) in unl.iter().enumerate() {
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| w(i, j)).sum();
        a[r][r] = deg;
        for (c, &j) in unl.iter().enumerate() {
            if j != i {
                a[r][c] -= w(i, j);
            }
        }
        for j in 0..n {
            if let Some(y) = labels[j] {
                b[r][y] += w(i, j);
            }
        }
    }
    let x = solve(a, b)?;
    let mut out: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| {
            let mut row = vec![0.0; classes];
            if let Some(y) = l {
                row[*y] = 1.0;
            }
            row
        })
        .collect();
    for (r, &i) in unl.iter().enumerate() {
        out[i] = x[r].clone();
    }
    Some(out)
}

/// Unlabeled state with confidence `c` after one view.
pub fn state_with_confidence(classes: usize, c: f64) -> VertexState {
    let mut s = VertexState::unlabeled(classes);
    s.accumulate_view(&vec![1.0 / classes as f64; classes]).unwrap();
    s.set_confidence(c).unwrap();
    s
}

pub fn frozen_state(classes: usize) -> VertexState {
    let mut s = VertexState::unlabeled(classes);
    let mut p = vec![0.0; classes];
    p[0] = 1.0;
    s.accumulate_view(&p).unwrap();
    s.set_confidence(1.0).unwrap();
    s.freeze();
    s
}

pub struct BfsCase {
    pub name: &'static str,
    pub graph: AffinityGraph,
    pub states: Vec<VertexState>,
    pub start: usize,
    pub config: ExtractorConfig,
    /// Hand-simulated patch in insertion order; `None` = no viable patch.
    pub expected: Option<Vec<usize>>,
}

fn cfg(gain: f64, size: usize) -> ExtractorConfig {
    ExtractorConfig {
        gain_threshold: gain,
        max_size: size,
        exclusion_hops: 1,
    }
}

fn open(n: usize) -> Vec<VertexState> {
    (0..n).map(|_| VertexState::unlabeled(2)).collect()
}

/// Five crafted graphs with their breadth-first patches worked out by hand.
pub fn bfs_cases() -> Vec<BfsCase> {
    let edges = |e: &[(usize, usize)]| e.iter().map(|&(i, j)| (i, j, 1.0)).collect::<Vec<_>>();
    let mut cases = Vec::new();

    // 0-1-2-3-4, labeled 0, each open vertex adds 1
    let mut s = open(5);
    s[0] = VertexState::labeled(2, 0);
    cases.push(BfsCase {
        name: "path",
        graph: AffinityGraph::from_edges(5, &edges(&[(0, 1), (1, 2), (2, 3), (3, 4)])).unwrap(),
        states: s,
        start: 0,
        config: cfg(2.5, 10),
        expected: Some(vec![0, 1, 2, 3]),
    });

    // 0 has neighbors 3 and 1; ascending order visits 1 first, then 3, then 1's child 2
    let mut s = open(5);
    s[0] = VertexState::labeled(2, 1);
    cases.push(BfsCase {
        name: "ascending neighbors",
        graph: AffinityGraph::from_edges(5, &edges(&[(0, 3), (0, 1), (1, 2), (3, 4)])).unwrap(),
        states: s,
        start: 0,
        config: cfg(3.0, 10),
        expected: Some(vec![0, 1, 3, 2]),
    });

    // start 2 is frozen, 1 is labeled (gain 0), 3 has confidence 0.5, 0 and 4 add 1
    let mut s = open(5);
    s[1] = VertexState::labeled(2, 0);
    s[2] = frozen_state(2);
    s[3] = state_with_confidence(2, 0.5);
    cases.push(BfsCase {
        name: "mixed confidence",
        graph: AffinityGraph::from_edges(5, &edges(&[(0, 1), (1, 2), (2, 3), (3, 4)])).unwrap(),
        states: s,
        start: 2,
        config: cfg(1.5, 10),
        expected: Some(vec![2, 1, 3, 0]),
    });

    // gain 10 needs more than the size cap of 4 allows
    let mut s = open(6);
    s[0] = VertexState::labeled(2, 0);
    cases.push(BfsCase {
        name: "size cap",
        graph: AffinityGraph::from_edges(
            6,
            &edges(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]),
        )
        .unwrap(),
        states: s,
        start: 0,
        config: cfg(10.0, 4),
        expected: None,
    });

    // component {0, 1, 2} holds gain 2 < 2.5; {3, 4} is unreachable
    let mut s = open(5);
    s[0] = VertexState::labeled(2, 0);
    cases.push(BfsCase {
        name: "exhausted component",
        graph: AffinityGraph::from_edges(5, &edges(&[(0, 1), (0, 2), (3, 4)])).unwrap(),
        states: s,
        start: 0,
        config: cfg(2.5, 10),
        expected: None,
    });
    cases
}

pub fn run_bfs_case(case: &BfsCase) -> bool {
    match extract_patch(&case.graph, &case.states, case.start, &case.config).unwrap() {
        PatchOutcome::Viable(p) => case.expected.as_deref() == Some(p.vertex_ids()),
        PatchOutcome::NoViablePatch => case.expected.is_none(),
    }
}

/// Connected random patch of `n` vertices with positive weights.
pub fn random_patch<R: Rng>(n: usize, rng: &mut R) -> GraphPatch {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v, rng.gen_range(0.1..1.0)));
    }
    for _ in 0..n {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j {
            edges.push((i, j, rng.gen_range(0.1..1.0)));
        }
    }
    let g = AffinityGraph::from_edges(n, &edges).unwrap();
    let ids: Vec<usize> = (0..n).collect();
    restrict(&g, &ids, 0).unwrap()
}

pub enum Loss {
    Xent(Vec<(usize, usize)>),
    Bce(Vec<(usize, f64)>),
}

impl Loss {
    fn eval(&self, logits: &DenseMatrix) -> (f64, DenseMatrix) {
        match self {
            Loss::Xent(t) => softmax_xent(logits, t).unwrap(),
            Loss::Bce(t) => {
                let (l, g) = sigmoid_bce(logits.data(), t).unwrap();
                (l, DenseMatrix::from_vec(logits.rows(), 1, g).unwrap())
            }
        }
    }
}

/// Largest relative error between analytic and central-difference gradients.
/// Entries where both are below `1e-7` in magnitude count as exact.
pub fn gradient_error(model: &GraphModel, patch: &GraphPatch, f0: &DenseMatrix, loss: &Loss) -> f64 {
    let prepared = model.prepare(patch, f0).unwrap();
    let (logits, cache) = model.forward_prepared(patch, prepared).unwrap();
    let (_, g) = loss.eval(&logits);
    let analytic = model.backward(patch, &cache, &g).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (l, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.data().len() {
            let at = |delta: f64| {
                let mut m = model.clone();
                m.layers_mut()[l].weight.data_mut()[idx] += delta;
                loss.eval(&m.logits(patch, f0).unwrap()).0
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let a = grad.data()[idx];
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

pub enum GradCase {
    Sgc,
    Gcn,
    ConfNet,
}

/// Worst relative gradient error over `patches` random 8-vertex patches.
pub fn gradient_suite(case: GradCase, patches: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, classes, n) = (5, 3, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..patches {
        let patch = random_patch(n, &mut rng);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let f0 = DenseMatrix::from_rows(&rows).unwrap();
        let (model, loss) = match case {
            GradCase::Sgc => (
                GraphModel::new(Architecture::Sgc, 2, 0, dim, classes, &mut rng).unwrap(),
                Loss::Xent((0..n).step_by(2).map(|v| (v, rng.gen_range(0..classes))).collect()),
            ),
            GradCase::Gcn => (
                GraphModel::new(Architecture::Gcn, 2, 6, dim, classes, &mut rng).unwrap(),
                Loss::Xent((0..n).step_by(2).map(|v| (v, rng.gen_range(0..classes))).collect()),
            ),
            GradCase::ConfNet => (
                GraphModel::new(Architecture::Sgc, 1, 0, dim, 1, &mut rng).unwrap(),
                Loss::Bce((0..n).map(|v| (v, f64::from(u8::from(v % 3 == 0)))).collect()),
            ),
        };
        worst = worst.max(gradient_error(&model, &patch, &f0, &loss));
    }
    worst
}

/// Accuracy-maximizing threshold by exhaustive search over a fine candidate
/// set built independently of the library: every confidence, every midpoint
/// and both ends.
pub fn threshold_oracle(samples: &[ValidationSample]) -> (usize, f64) {
    let acc = |t: f64| {
        samples
            .iter()
            .filter(|s| match s.truth {
                None => s.confidence < t,
                Some(y) => s.confidence >= t && s.predicted == y,
            })
            .count()
    };
    let mut cs: Vec<f64> = samples.iter().map(|s| s.confidence).collect();
    cs.sort_by(f64::total_cmp);
    let mut cands = vec![cs[0] - 1.0, cs[cs.len() - 1] + 1.0];
    for w in cs.windows(2) {
        cands.push(0.5 * (w[0] + w[1]));
    }
    cands.extend(cs.iter().copied());
    cands.into_iter().map(|t| (acc(t), t)).fold((0, f64::NAN), |best, cur| {
        if cur.0 > best.0 {
            cur
        } else {
            best
        }
    })
}

pub fn validation_accuracy(samples: &[ValidationSample], t: f64) -> usize {
    samples
        .iter()
        .filter(|s| match s.truth {
            None => s.confidence < t,
            Some(y) => s.confidence >= t && s.predicted == y,
        })
        .count()
}
