//! Synthetic noisy-transductive datasets, evaluation metrics and the
//! repeated-run suite.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::pipeline::{run_method, Method, PipelineConfig};
use crate::scheduler::OutlierDecision;

/// Parameters of one synthetic mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation around each unit-norm center.
    pub spread: f64,
    /// Number of unseen clusters the outliers are drawn from.
    pub outlier_classes: usize,
    /// Outlier fraction of the unlabeled set.
    pub rho: f64,
    pub labeled_ratio: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 200,
            dim: 16,
            spread: 0.25,
            outlier_classes: 10,
            rho: 0.5,
            labeled_ratio: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 {
            return bad("classes, per_class and dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio < 1.0) {
            return bad(format!("labeled ratio must lie in (0, 1), got {}", self.labeled_ratio));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return bad(format!("spread must be a finite non-negative number, got {}", self.spread));
        }
        if self.rho > 0.0 && self.outlier_classes == 0 {
            return bad("rho > 0 needs at least one outlier class".into());
        }
        if self.labeled_per_class() >= self.per_class {
            return bad(format!(
                "{} labeled per class leaves no unlabeled samples out of {}",
                self.labeled_per_class(),
                self.per_class
            ));
        }
        Ok(())
    }

    pub fn labeled_per_class(&self) -> usize {
        ((self.labeled_ratio * self.per_class as f64).round() as usize).max(1)
    }

    /// Outliers that make up a fraction `rho` of a set with `inclass` genuine samples.
    fn outliers_for(&self, inclass: usize) -> usize {
        (self.rho / (1.0 - self.rho) * inclass as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Validation,
    Unlabeled,
}

impl Split {
    fn code(self) -> char {
        match self {
            Split::Labeled => 'L',
            Split::Validation => 'V',
            Split::Unlabeled => 'U',
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "L" => Ok(Split::Labeled),
            "V" => Ok(Split::Validation),
            "U" => Ok(Split::Unlabeled),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    /// Ground truth; `None` marks an out-of-class outlier.
    pub truth: Vec<Option<usize>>,
    pub splits: Vec<Split>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.splits[v] == split).collect()
    }

    /// Labels visible to the learner: only the labeled split.
    pub fn seed_labels(&self) -> Vec<Option<usize>> {
        self.truth
            .iter()
            .zip(&self.splits)
            .map(|(&t, &s)| if s == Split::Labeled { t } else { None })
            .collect()
    }

    /// Writes `features.txt`, `labels.txt` and `splits.txt` into `dir`.
    pub fn write_bundle(&self, dir: &std::path::Path) -> Result<[std::path::PathBuf; 3]> {
        std::fs::create_dir_all(dir)?;
        let paths = bundle_paths(dir);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&paths[0])?);
        self.features.write_text(&mut f)?;
        f.flush()?;
        let mut labels = String::new();
        let mut splits = String::new();
        for v in 0..self.len() {
            let y = self.truth[v].map_or(-1, |y| y as i64);
            labels.push_str(&format!("{v} {y}\n"));
            splits.push_str(&format!("{v} {}\n", self.splits[v].code()));
        }
        std::fs::write(&paths[1], labels)?;
        std::fs::write(&paths[2], splits)?;
        Ok(paths)
    }

    pub fn read_bundle(dir: &std::path::Path) -> Result<Self> {
        let paths = bundle_paths(dir);
        let open = |p: &std::path::Path| {
            std::fs::File::open(p)
                .map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))
        };
        let features = FeatureMatrix::read_text(BufReader::new(open(&paths[0])?))?;
        let n = features.rows();
        let labels = read_indexed(open(&paths[1])?, n, "labels", |s| {
            s.parse::<i64>().map_err(|e| e.to_string())
        })?;
        let splits = read_indexed(open(&paths[2])?, n, "splits", |s| s.parse::<Split>())?;
        let truth: Vec<Option<usize>> = labels
            .iter()
            .map(|&y| (y >= 0).then_some(y as usize))
            .collect();
        if labels.iter().any(|&y| y < -1) {
            return Err(Error::Data("labels must be -1 or a class index".into()));
        }
        let classes = truth.iter().flatten().max().map_or(0, |&m| m + 1);
        if truth
            .iter()
            .zip(&splits)
            .any(|(t, s)| *s == Split::Labeled && t.is_none())
        {
            return Err(Error::Data("labeled split contains an outlier".into()));
        }
        Ok(Self {
            features,
            truth,
            splits,
            classes,
        })
    }
}

pub fn bundle_paths(dir: &std::path::Path) -> [std::path::PathBuf; 3] {
    [
        dir.join("features.txt"),
        dir.join("labels.txt"),
        dir.join("splits.txt"),
    ]
}

fn read_indexed<T, R: Read>(
    r: R,
    n: usize,
    what: &str,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::Data(format!("{what} line {}: {m}", lineno + 1));
        let mut toks = line.split_whitespace();
        let (Some(id), Some(val), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(err(format!("expected two fields, got {line:?}")));
        };
        let id: usize = id.parse().map_err(|e| err(format!("bad vertex id: {e}")))?;
        if id >= n {
            return Err(err(format!("vertex {id} out of range for {n} vertices")));
        }
        if out[id].is_some() {
            return Err(err(format!("vertex {id} listed twice")));
        }
        out[id] = Some(parse(val).map_err(err)?);
    }
    out.into_iter()
        .enumerate()
        .map(|(v, x)| x.ok_or_else(|| Error::Data(format!("{what}: vertex {v} missing"))))
        .collect()
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw_around<R: Rng>(center: &[f64], spread: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = center
            .iter()
            .map(|&c| c + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws a dataset: `per_class` genuine samples per class split into labeled
/// and unlabeled parts, outliers from unseen clusters so that they form a
/// `rho` fraction of the unlabeled part, and a validation set of the labeled
/// set's size with the same outlier fraction. Vertex order is shuffled.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.classes).map(|_| random_unit(spec.dim, &mut rng)).collect();
    let outlier_centers: Vec<Vec<f64>> = (0..spec.outlier_classes)
        .map(|_| random_unit(spec.dim, &mut rng))
        .collect();

    let per_labeled = spec.labeled_per_class();
    let labeled_total = per_labeled * spec.classes;
    let unlabeled_inclass = (spec.per_class - per_labeled) * spec.classes;
    let u_outliers = spec.outliers_for(unlabeled_inclass);
    let v_outliers = (spec.rho * labeled_total as f64).round() as usize;
    let v_inclass = labeled_total - v_outliers;

    let mut rows: Vec<(Vec<f64>, Option<usize>, Split)> = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..spec.per_class {
            let split = if i < per_labeled { Split::Labeled } else { Split::Unlabeled };
            rows.push((draw_around(center, spec.spread, &mut rng), Some(c), split));
        }
    }
    for i in 0..v_inclass {
        let c = i % spec.classes;
        rows.push((draw_around(&centers[c], spec.spread, &mut rng), Some(c), Split::Validation));
    }
    for i in 0..(u_outliers + v_outliers) {
        let center = &outlier_centers[i % spec.outlier_classes];
        let split = if i < u_outliers { Split::Unlabeled } else { Split::Validation };
        rows.push((draw_around(center, spec.spread, &mut rng), None, split));
    }
    rows.shuffle(&mut rng);

    let dim = spec.dim;
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut truth = Vec::with_capacity(rows.len());
    let mut splits = Vec::with_capacity(rows.len());
    for (x, t, s) in rows {
        data.extend(x);
        truth.push(t);
        splits.push(s);
    }
    Ok(Dataset {
        features: FeatureMatrix::new(truth.len(), dim, data)?,
        truth,
        splits,
        classes: spec.classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Top-1 accuracy over the unlabeled split, outliers counting as class −1.
    pub acc: f64,
    /// Accuracy over genuine unlabeled samples only.
    pub acc_inclass: f64,
    pub outlier_prec: f64,
    pub outlier_rec: f64,
    /// Mean in-class confidence minus mean outlier confidence; NaN if either
    /// group is empty.
    pub conf_gap: f64,
    pub runtime_s: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Confidence gap over the unlabeled split.
pub fn confidence_gap(dataset: &Dataset, confidence: &[f64]) -> f64 {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for v in dataset.indices(Split::Unlabeled) {
        if dataset.truth[v].is_some() {
            si += confidence[v];
            ni += 1;
        } else {
            so += confidence[v];
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        f64::NAN
    } else {
        si / ni as f64 - so / no as f64
    }
}

pub fn evaluate(decision: &OutlierDecision, dataset: &Dataset) -> Result<MetricsReport> {
    if decision.labels.len() != dataset.len() || decision.confidence.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "decision covers {} vertices, dataset has {}",
            decision.labels.len(),
            dataset.len()
        )));
    }
    let (mut correct, mut total) = (0, 0);
    let (mut in_correct, mut in_total) = (0, 0);
    let (mut flagged, mut flagged_true, mut outliers) = (0, 0, 0);
    for v in dataset.indices(Split::Unlabeled) {
        let truth = dataset.truth[v].map_or(-1, |y| y as i64);
        let pred = decision.labels[v];
        total += 1;
        correct += usize::from(pred == truth);
        if truth >= 0 {
            in_total += 1;
            in_correct += usize::from(pred == truth);
        } else {
            outliers += 1;
        }
        if pred == -1 {
            flagged += 1;
            flagged_true += usize::from(truth == -1);
        }
    }
    Ok(MetricsReport {
        acc: ratio(correct, total),
        acc_inclass: ratio(in_correct, in_total),
        outlier_prec: ratio(flagged_true, flagged),
        outlier_rec: ratio(flagged_true, outliers),
        conf_gap: confidence_gap(dataset, &decision.confidence),
        runtime_s: None,
    })
}

pub const CSV_HEADER: &str = "spec,method,seed,acc,acc_inclass,outlier_prec,outlier_rec,conf_gap,runtime_s";

fn cell(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.6}")
    }
}

impl MetricsReport {
    fn values(&self) -> [f64; 6] {
        [
            self.acc,
            self.acc_inclass,
            self.outlier_prec,
            self.outlier_rec,
            self.conf_gap,
            self.runtime_s.unwrap_or(f64::NAN),
        ]
    }

    /// One CSV row in [`CSV_HEADER`] order.
    pub fn csv_row(&self, spec: &str, method: &str, seed: u64) -> String {
        let cells: Vec<String> = self.values().iter().map(|&x| cell(x)).collect();
        format!("{spec},{method},{seed},{}", cells.join(","))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "acc={} acc_inclass={} outlier_prec={} outlier_rec={} conf_gap={}",
            cell(self.acc),
            cell(self.acc_inclass),
            cell(self.outlier_prec),
            cell(self.outlier_rec),
            cell(self.conf_gap)
        )?;
        if let Some(t) = self.runtime_s {
            write!(f, " runtime_s={t:.3}")?;
        }
        Ok(())
    }
}

/// A named dataset specification in a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub name: String,
    pub synth: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SuiteCell {
    pub spec: String,
    pub method: Method,
    pub seed: u64,
    pub result: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub cells: Vec<SuiteCell>,
}

impl SuiteResult {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_ok()).count()
    }

    /// Successful reports of one (spec, method) pair, in seed order.
    pub fn reports(&self, spec: &str, method: Method) -> Vec<MetricsReport> {
        self.cells
            .iter()
            .filter(|c| c.spec == spec && c.method == method)
            .filter_map(|c| c.result.as_ref().ok().copied())
            .collect()
    }

    /// Per-seed rows followed by one `agg` row of `mean±std` cells for each
    /// (spec, method) pair. Failed cells print `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut groups: Vec<(String, Method)> = Vec::new();
        for c in &self.cells {
            if !groups.iter().any(|(s, m)| *s == c.spec && *m == c.method) {
                groups.push((c.spec.clone(), c.method));
            }
        }
        for (spec, method) in groups {
            let cells: Vec<&SuiteCell> = self
                .cells
                .iter()
                .filter(|c| c.spec == spec && c.method == method)
                .collect();
            for c in &cells {
                match &c.result {
                    Ok(r) => out.push_str(&r.csv_row(&spec, &method.to_string(), c.seed)),
                    Err(_) => out.push_str(&format!("{spec},{method},{},NA,NA,NA,NA,NA,NA", c.seed)),
                }
                out.push('\n');
            }
            let reports = self.reports(&spec, method);
            let aggs: Vec<String> = (0..6)
                .map(|k| {
                    let xs: Vec<f64> = reports
                        .iter()
                        .map(|r| r.values()[k])
                        .filter(|x| !x.is_nan())
                        .collect();
                    match mean_std(&xs) {
                        Some((m, s)) => format!("{m:.6}±{s:.6}"),
                        None => "NA".into(),
                    }
                })
                .collect();
            out.push_str(&format!("{spec},{method},agg,{}\n", aggs.join(",")));
        }
        out
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Runs every method on every spec for each seed. Each (spec, seed) pair
/// generates one dataset shared by all methods; failures become `Err`
/// cells instead of aborting the suite.
pub fn run_suite(
    specs: &[SuiteSpec],
    methods: &[Method],
    seeds: &[u64],
    config: &PipelineConfig,
    record_runtime: bool,
) -> Result<SuiteResult> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("suite needs at least one method".into()));
    }
    let jobs: Vec<(usize, u64)> = specs
        .iter()
        .enumerate()
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let per_job: Vec<Vec<SuiteCell>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let spec = &specs[i];
            let synth = SynthSpec {
                seed,
                ..spec.synth.clone()
            };
            let dataset = generate(&synth);
            methods
                .iter()
                .map(|&method| {
                    let result = match &dataset {
                        Err(e) => Err(e.to_string()),
                        Ok(ds) => run_cell(ds, method, config, seed, record_runtime),
                    };
                    SuiteCell {
                        spec: spec.name.clone(),
                        method,
                        seed,
                        result,
                    }
                })
                .collect()
        })
        .collect();
    // group rows by spec, then method, then seed
    let mut cells: Vec<SuiteCell> = per_job.into_iter().flatten().collect();
    let spec_rank = |name: &str| specs.iter().position(|s| s.name == name).unwrap_or(0);
    let method_rank = |m: Method| methods.iter().position(|&x| x == m).unwrap_or(0);
    let seed_rank = |s: u64| seeds.iter().position(|&x| x == s).unwrap_or(0);
    cells.sort_by_key(|c| (spec_rank(&c.spec), method_rank(c.method), seed_rank(c.seed)));
    Ok(SuiteResult { cells })
}

fn run_cell(
    dataset: &Dataset,
    method: Method,
    config: &PipelineConfig,
    seed: u64,
    record_runtime: bool,
) -> std::result::Result<MetricsReport, String> {
    let clock = Instant::now();
    let out = run_method(dataset, method, config, seed).map_err(|e| e.to_string())?;
    let mut report = evaluate(&out.decision, dataset).map_err(|e| e.to_string())?;
    if record_runtime {
        report.runtime_s = Some(clock.elapsed().as_secs_f64());
    }
    Ok(report)
}
