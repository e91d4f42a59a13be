//! End-to-end methods on a dataset: graph construction, training,
//! propagation or label propagation, and outlier thresholding.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{run_lp, LpConfig};
use crate::bench::{confidence_gap, Dataset, Split};
use crate::confidence::{ConfidenceSource, VertexState};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, AffinityGraph};
use crate::model::{Architecture, GraphModel};
use crate::patch::ExtractorConfig;
use crate::predictor::{sample_training_patches, train_predictor, train_predictor_resampled};
use crate::proofs::argmax;
use crate::scheduler::{
    decide, determine_outlier_threshold, propagate, sweep_threshold, IterationRecord,
    OutlierDecision, PropagationConfig, PropagationOutcome, PropagationState, Termination,
    ValidationSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lp,
    Reliprop(ConfidenceSource),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Lp => f.write_str("lp"),
            Method::Reliprop(ConfidenceSource::Combined) => f.write_str("reliprop"),
            Method::Reliprop(ConfidenceSource::MultiView) => f.write_str("reliprop-multiview"),
            Method::Reliprop(ConfidenceSource::Random) => f.write_str("reliprop-random"),
            Method::Reliprop(ConfidenceSource::ConfNet) => f.write_str("reliprop-confnet"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lp" => Ok(Method::Lp),
            "reliprop" => Ok(Method::Reliprop(ConfidenceSource::Combined)),
            "reliprop-multiview" => Ok(Method::Reliprop(ConfidenceSource::MultiView)),
            "reliprop-random" => Ok(Method::Reliprop(ConfidenceSource::Random)),
            "reliprop-confnet" => Ok(Method::Reliprop(ConfidenceSource::ConfNet)),
            other => Err(format!(
                "unknown method {other:?} (expected lp, reliprop, reliprop-multiview, \
                 reliprop-random or reliprop-confnet)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub arch: Architecture,
    pub depth: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub train_patches: usize,
    /// Draw a fresh patch set before every epoch.
    pub resample: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Sgc,
            depth: 2,
            hidden: 256,
            epochs: 200,
            lr: 0.01,
            train_patches: 32,
            resample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub predictor: PredictorConfig,
    /// The extractor sizes here are overridden when the fields below are set
    /// to `None`.
    pub propagation: PropagationConfig,
    /// `None` scales 500 by N / 10000 for smaller graphs, floor 5.
    pub gain_threshold: Option<f64>,
    /// `None` scales 3000 by N / 10000 for smaller graphs, floor 50.
    pub max_patch_size: Option<usize>,
    pub lp: LpConfig,
    /// Gain applied to features before they enter the networks; the graph is
    /// built from the unscaled features.
    pub feature_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 30,
            predictor: PredictorConfig::default(),
            propagation: PropagationConfig::default(),
            gain_threshold: None,
            max_patch_size: None,
            lp: LpConfig::default(),
            feature_scale: 3.0,
        }
    }
}

impl PipelineConfig {
    /// Extractor settings for a graph of `n` vertices.
    pub fn extractor_for(&self, n: usize) -> ExtractorConfig {
        let scale = (n as f64 / 10_000.0).min(1.0);
        ExtractorConfig {
            gain_threshold: self
                .gain_threshold
                .unwrap_or_else(|| (500.0 * scale).round().max(5.0)),
            max_size: self
                .max_patch_size
                .unwrap_or_else(|| ((3000.0 * scale).round() as usize).max(50)),
            exclusion_hops: self.propagation.extractor.exclusion_hops,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub decision: OutlierDecision,
    pub graph: AffinityGraph,
    /// Propagation details; `None` for label propagation.
    pub propagation: Option<PropagationOutcome>,
    epsilon: f64,
}

impl RunOutput {
    pub fn log(&self) -> &[IterationRecord] {
        self.propagation.as_ref().map_or(&[], |p| &p.log)
    }

    pub fn termination(&self) -> Option<Termination> {
        self.propagation.as_ref().map(|p| p.termination)
    }

    /// Patch membership counts per vertex; empty for label propagation.
    pub fn visits(&self) -> Vec<u32> {
        self.propagation
            .as_ref()
            .map_or_else(Vec::new, |p| p.state.memberships().to_vec())
    }

    /// Confidence gap of the multi-view estimate of the final state.
    pub fn multi_view_gap(&self, dataset: &Dataset) -> Option<f64> {
        let p = self.propagation.as_ref()?;
        Some(confidence_gap(dataset, &p.state.multi_view_snapshot(self.epsilon)))
    }

    /// Confidence dump body: `vertex_id visits confidence is_outlier_pred`.
    pub fn confidence_dump(&self) -> String {
        let visits = self.visits();
        let mut s = String::new();
        for (v, (&c, &y)) in self
            .decision
            .confidence
            .iter()
            .zip(&self.decision.labels)
            .enumerate()
        {
            let n = visits.get(v).copied().unwrap_or(0);
            s.push_str(&format!("{v} {n} {c:.9} {}\n", u8::from(y == -1)));
        }
        s
    }
}

/// Outlier threshold from the validation split. A validation set without
/// both kinds of samples falls back to the plain sweep. The threshold never
/// sits at or below `floor`, the confidence of vertices without evidence.
pub fn validation_threshold(
    dataset: &Dataset,
    confidence: &[f64],
    predicted: &[usize],
    floor: f64,
) -> Result<f64> {
    let samples: Vec<ValidationSample> = dataset
        .indices(Split::Validation)
        .into_iter()
        .map(|v| ValidationSample {
            confidence: confidence[v],
            predicted: predicted[v],
            truth: dataset.truth[v],
        })
        .collect();
    let t = match determine_outlier_threshold(&samples) {
        Ok(t) => t,
        Err(_) if !samples.is_empty() => sweep_threshold(&samples)?,
        Err(e) => return Err(e),
    };
    Ok(if t <= floor { floor + 1e-12 } else { t })
}

/// Runs `method` on `dataset` with every random choice derived from `seed`.
pub fn run_method(
    dataset: &Dataset,
    method: Method,
    config: &PipelineConfig,
    seed: u64,
) -> Result<RunOutput> {
    if dataset.classes == 0 {
        return Err(Error::Data("dataset has no classes".into()));
    }
    let graph = build_knn_graph(&dataset.features, config.k)?;
    let labels = dataset.seed_labels();
    match method {
        Method::Lp => {
            let lp = run_lp(&graph, &labels, dataset.classes, &config.lp)?;
            let predicted: Vec<usize> = lp.probs.iter().map(|p| argmax(p)).collect();
            let t = validation_threshold(dataset, &lp.confidence, &predicted, 0.0)?;
            let decision = decide(&lp.probs, &lp.confidence, &labels, t);
            Ok(RunOutput {
                decision,
                graph,
                propagation: None,
                epsilon: 0.0,
            })
        }
        Method::Reliprop(source) => {
            let features = dataset.features.scaled(config.feature_scale)?;
            let mut prop = config.propagation.clone();
            prop.extractor = config.extractor_for(graph.num_vertices());
            prop.confidence = source;
            prop.seed = seed ^ 0x5eed_0f_9a7e;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pc = &config.predictor;
            let mut model = GraphModel::new(
                pc.arch,
                pc.depth,
                pc.hidden,
                features.dim(),
                dataset.classes,
                &mut rng,
            )?;
            let states: Vec<VertexState> = PropagationState::new(&labels, dataset.classes, 0)?
                .states()
                .to_vec();
            if pc.resample {
                train_predictor_resampled(
                    &mut model,
                    &graph,
                    &states,
                    &features,
                    pc.train_patches,
                    &prop.extractor,
                    pc.epochs,
                    pc.lr,
                    &mut rng,
                )?;
            } else {
                let patches = sample_training_patches(
                    &graph,
                    &states,
                    pc.train_patches,
                    &prop.extractor,
                    &mut rng,
                )?;
                train_predictor(&mut model, &patches, &features, &labels, pc.epochs, pc.lr)?;
            }
            let outcome = propagate(&graph, &features, &model, &labels, &prop)?;
            let probs: Vec<Vec<f64>> =
                outcome.state.states().iter().map(|s| s.prob().to_vec()).collect();
            let conf = outcome.final_confidence.clone();
            let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let t = validation_threshold(dataset, &conf, &predicted, prop.epsilon)?;
            let decision = decide(&probs, &conf, &labels, t);
            Ok(RunOutput {
                decision,
                graph,
                propagation: Some(outcome),
                epsilon: prop.epsilon,
            })
        }
    }
}
