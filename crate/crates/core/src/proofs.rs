//! Executable checks of the multi-view confidence bounds.
//!
//! For `n` view predictions with mean `p̄` and `c = max_k p̄_k`:
//! - `σ_k² <= c <= sqrt(1 - σ_k²)` where `σ_k²` is the across-view variance
//!   of the arg-max coordinate;
//! - the base-`m` entropy of `p̄` is at most `f(c)` with
//!   `f(c) = -c log_m c - (1 - c) log_m((1 - c) / (m - 1))`;
//! - `f` is non-increasing on `[1/m, 1]`.

/// Absolute slack on every inequality.
pub const SLACK: f64 = 1e-9;

/// `n` probability vectors of length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: Vec<Vec<f64>>,
}

impl ViewSet {
    /// Validates that every view is a probability vector of the same length.
    pub fn new(views: Vec<Vec<f64>>) -> Option<Self> {
        let m = views.first()?.len();
        let ok = m >= 1
            && views.iter().all(|v| {
                v.len() == m
                    && v.iter().all(|&p| (0.0..=1.0).contains(&p))
                    && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12
            });
        ok.then_some(Self { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.views[0].len()
    }

    pub fn views(&self) -> &[Vec<f64>] {
        &self.views
    }

    /// First and second moments per coordinate.
    pub fn stats(&self) -> ViewStats {
        let m = self.classes();
        let n = self.len() as f64;
        let mut mean = vec![0.0; m];
        let mut mean_sq = vec![0.0; m];
        for v in &self.views {
            for k in 0..m {
                mean[k] += v[k];
                mean_sq[k] += v[k] * v[k];
            }
        }
        for k in 0..m {
            mean[k] /= n;
            mean_sq[k] /= n;
        }
        ViewStats { mean, mean_sq }
    }
}

/// Per-coordinate mean and mean of squares across views.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStats {
    pub mean: Vec<f64>,
    pub mean_sq: Vec<f64>,
}

impl ViewStats {
    /// Arg-max of the mean, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.mean)
    }

    pub fn confidence(&self) -> f64 {
        self.mean[self.argmax()]
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.mean_sq[k] - self.mean[k] * self.mean[k]
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBound {
    pub lower: f64,
    pub confidence: f64,
    pub upper: f64,
    pub passed: bool,
}

pub fn variance_bound(stats: &ViewStats) -> VarianceBound {
    let k = stats.argmax();
    let var = stats.variance(k);
    let c = stats.mean[k];
    let upper = (1.0 - var).max(0.0).sqrt();
    VarianceBound {
        lower: var,
        confidence: c,
        upper,
        passed: var <= c + SLACK && c <= upper + SLACK,
    }
}

/// Variance bound on a view set; `None` when fewer than two views are given.
pub fn check_variance_bound(views: &ViewSet) -> Option<VarianceBound> {
    (views.len() >= 2).then(|| variance_bound(&views.stats()))
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Base-`m` entropy of a probability vector with `0 log 0 = 0`.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    let m = p.len() as f64;
    -p.iter().map(|&x| xlogx(x)).sum::<f64>() / m.ln()
}

/// `f(c) = -c log_m c - (1 - c) log_m((1 - c) / (m - 1))`
pub fn entropy_envelope(c: f64, m: usize) -> f64 {
    let mf = m as f64;
    let rest = 1.0 - c;
    let tail = if rest <= 0.0 {
        0.0
    } else {
        rest * (rest / (mf - 1.0)).ln()
    };
    -(xlogx(c) + tail) / mf.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBound {
    pub entropy: f64,
    pub envelope: f64,
    pub passed: bool,
}

pub fn entropy_bound(mean: &[f64]) -> EntropyBound {
    let m = mean.len();
    let c = mean[argmax(mean)];
    let entropy = normalized_entropy(mean);
    let envelope = entropy_envelope(c, m);
    EntropyBound {
        entropy,
        envelope,
        passed: entropy <= envelope + SLACK,
    }
}

/// Entropy bound of the mean prediction; `None` when `m < 2`.
pub fn check_entropy_bound(views: &ViewSet) -> Option<EntropyBound> {
    (views.classes() >= 2).then(|| entropy_bound(&views.stats().mean))
}

/// Evaluates `f` on a uniform grid of `[1/m, 1]` and checks it never increases.
pub fn check_monotone_f(m: usize, points: usize) -> bool {
    if m < 2 || points < 2 {
        return false;
    }
    let lo = 1.0 / m as f64;
    let mut prev = entropy_envelope(lo, m);
    for i in 1..points {
        let c = lo + (1.0 - lo) * i as f64 / (points - 1) as f64;
        let v = entropy_envelope(c, m);
        if v > prev + SLACK {
            return false;
        }
        prev = v;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_one_hot_views() {
        let vs = ViewSet::new(vec![vec![0.0, 1.0, 0.0]; 3]).unwrap();
        let b = check_variance_bound(&vs).unwrap();
        assert_eq!((b.lower, b.confidence, b.upper), (0.0, 1.0, 1.0));
        assert!(b.passed);
        let e = check_entropy_bound(&vs).unwrap();
        assert_eq!(e.entropy, 0.0);
        assert_eq!(e.envelope, 0.0);
    }

    #[test]
    fn opposing_views() {
        let vs = ViewSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = check_variance_bound(&vs).unwrap();
        assert_eq!(b.lower, 0.25);
        assert_eq!(b.confidence, 0.5);
        assert!((b.upper - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(b.passed);
    }

    #[test]
    fn uniform_mean_meets_envelope() {
        for m in 2..=10 {
            let vs = ViewSet::new(vec![vec![1.0 / m as f64; m]]).unwrap();
            let e = check_entropy_bound(&vs).unwrap();
            assert!((e.entropy - 1.0).abs() < 1e-12);
            assert!((e.envelope - 1.0).abs() < 1e-12);
            assert!((entropy_envelope(1.0 / m as f64, m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_endpoints_and_monotonicity() {
        assert!((entropy_envelope(0.5, 2) - 1.0).abs() < 1e-15);
        assert_eq!(entropy_envelope(1.0, 2), 0.0);
        for m in 2..=10 {
            assert!(check_monotone_f(m, 10_000));
        }
        assert!(!check_monotone_f(1, 100));
    }

    #[test]
    fn single_view_has_no_variance_check() {
        let vs = ViewSet::new(vec![vec![0.3, 0.7]]).unwrap();
        assert!(check_variance_bound(&vs).is_none());
        assert!(ViewSet::new(vec![vec![0.3, 0.6]]).is_none());
        assert!(ViewSet::new(vec![]).is_none());
    }
}
