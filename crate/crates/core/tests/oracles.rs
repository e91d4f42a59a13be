mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reliprop::baseline::{run_lp, LpConfig};
use reliprop::bench::{evaluate, generate, Split, SynthSpec};
use reliprop::graph::{build_knn_graph, restrict, FeatureMatrix};
use reliprop::nn::{normalized_aggregate, DenseMatrix};
use reliprop::scheduler::{decide, determine_outlier_threshold, ValidationSample};

use common::*;

#[test]
fn knn_matches_brute_force() {
    for (seed, k) in [(1, 5), (2, 10), (3, 1)] {
        let f = random_features(200, 8, seed);
        let g = build_knn_graph(&f, k).unwrap();
        assert!(knn_matches(&g, &knn_oracle(&f, k), 1e-12), "seed {seed} k {k}");
    }
}

#[test]
fn restricted_aggregate_matches_dense_formula() {
    let f = random_features(60, 4, 9);
    let g = build_knn_graph(&f, 6).unwrap();
    let ids: Vec<usize> = (0..60).step_by(3).collect();
    let patch = restrict(&g, &ids, ids[0]).unwrap();
    let n = ids.len();
    let x = DenseMatrix::from_rows(&ids.iter().map(|&v| f.row(v).to_vec()).collect::<Vec<_>>()).unwrap();
    let got = normalized_aggregate(&patch, &x).unwrap();
    for a in 0..n {
        // (A + I) row a, restricted to the patch, divided by its row sum
        let w: Vec<f64> = (0..n)
            .map(|b| if a == b { 1.0 } else { g.weight(ids[a], ids[b]) })
            .collect();
        let d: f64 = w.iter().sum();
        for c in 0..4 {
            let want: f64 = (0..n).map(|b| w[b] * x.get(b, c)).sum::<f64>() / d;
            assert!((got.get(a, c) - want).abs() < 1e-12);
        }
    }
}

fn positive_features(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..5).map(|_| rng.gen_range(0.05..1.0)).collect())
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

#[test]
fn lp_reaches_dense_fixed_point() {
    let f = positive_features(30, 4);
    let g = build_knn_graph(&f, 6).unwrap();
    let mut labels = vec![None; 30];
    for (v, y) in [(0, 0), (7, 1), (13, 2), (21, 0), (25, 1), (29, 2)] {
        labels[v] = Some(y);
    }
    let oracle = lp_fixed_point(&g, &labels, 3).expect("graph is connected");
    let cfg = LpConfig {
        max_sweeps: 100_000,
        tolerance: 1e-14,
    };
    let r = run_lp(&g, &labels, 3, &cfg).unwrap();
    assert!(r.converged);
    for (a, b) in r.probs.iter().zip(&oracle) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn bfs_matches_hand_simulation() {
    for case in bfs_cases() {
        assert!(run_bfs_case(&case), "{}", case.name);
    }
}

#[test]
fn gradients_match_finite_differences() {
    assert!(gradient_suite(GradCase::Sgc, 10, 1) < 1e-4);
    assert!(gradient_suite(GradCase::Gcn, 10, 2) < 1e-4);
    assert!(gradient_suite(GradCase::ConfNet, 10, 3) < 1e-4);
}

#[test]
fn threshold_sweep_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let n = rng.gen_range(2..30);
        let levels = rng.gen_range(2..8);
        let mut samples: Vec<ValidationSample> = (0..n)
            .map(|_| ValidationSample {
                confidence: f64::from(rng.gen_range(0..levels)) / f64::from(levels),
                predicted: rng.gen_range(0..3),
                truth: rng.gen_bool(0.5).then(|| rng.gen_range(0..3)),
            })
            .collect();
        samples[0].truth = None;
        samples[1].truth = Some(0);
        let t = determine_outlier_threshold(&samples).unwrap();
        let (best, _) = threshold_oracle(&samples);
        assert_eq!(validation_accuracy(&samples, t), best);
        // no smaller threshold separating a different set of samples does as well
        for s in &samples {
            if s.confidence < t {
                assert!(validation_accuracy(&samples, s.confidence) < best);
            }
        }
    }
}

#[test]
fn decide_matches_elementwise_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = 40;
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        let conf: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<Option<usize>> = (0..n).map(|_| rng.gen_bool(0.2).then(|| rng.gen_range(0..4))).collect();
        let t = rng.gen_range(0.0..1.0);
        let d = decide(&probs, &conf, &labels, t);
        for v in 0..n {
            let want = match labels[v] {
                Some(y) => y as i64,
                None if conf[v] < t => -1,
                None => {
                    let mut best = 0;
                    for k in 1..4 {
                        if probs[v][k] > probs[v][best] {
                            best = k;
                        }
                    }
                    best as i64
                }
            };
            assert_eq!(d.labels[v], want);
        }
    }
}

#[test]
fn evaluate_matches_hand_count() {
    let spec = SynthSpec {
        classes: 3,
        per_class: 20,
        dim: 4,
        labeled_ratio: 0.1,
        rho: 0.3,
        outlier_classes: 2,
        seed: 8,
        ..SynthSpec::default()
    };
    let ds = generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<i64> = (0..ds.len()).map(|_| rng.gen_range(-1..3)).collect();
    let conf: Vec<f64> = (0..ds.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let decision = reliprop::scheduler::OutlierDecision {
        threshold: 0.5,
        labels: labels.clone(),
        confidence: conf,
    };
    let r = evaluate(&decision, &ds).unwrap();
    let u = ds.indices(Split::Unlabeled);
    let truth = |v: usize| ds.truth[v].map_or(-1, |y| y as i64);
    let correct = u.iter().filter(|&&v| labels[v] == truth(v)).count();
    let inclass: Vec<usize> = u.iter().copied().filter(|&v| truth(v) >= 0).collect();
    let in_correct = inclass.iter().filter(|&&v| labels[v] == truth(v)).count();
    let flagged: Vec<usize> = u.iter().copied().filter(|&v| labels[v] == -1).collect();
    let hit = flagged.iter().filter(|&&v| truth(v) == -1).count();
    let outliers = u.len() - inclass.len();
    assert_eq!(r.acc, correct as f64 / u.len() as f64);
    assert_eq!(r.acc_inclass, in_correct as f64 / inclass.len() as f64);
    assert_eq!(r.outlier_prec, hit as f64 / flagged.len() as f64);
    assert_eq!(r.outlier_rec, hit as f64 / outliers as f64);
}
