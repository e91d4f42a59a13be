//! Flat `key = value` run configuration.

use std::path::PathBuf;
use std::str::FromStr;

use crate::bench::{SuiteSpec, SynthSpec};
use crate::confidence::ConfidenceSource;
use crate::error::{Error, Result};
use crate::pipeline::{Method, PipelineConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Dataset bundle read by `run`; defaults to `out_dir`.
    pub data_dir: Option<PathBuf>,
    pub method: Method,
    pub methods: Vec<Method>,
    pub rhos: Vec<f64>,
    pub repeats: usize,
    pub record_runtime: bool,
    pub synth: SynthSpec,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            out_dir: PathBuf::from("out"),
            data_dir: None,
            method: Method::Reliprop(ConfidenceSource::Combined),
            methods: vec![Method::Lp, Method::Reliprop(ConfidenceSource::Combined)],
            rhos: vec![0.0, 0.1, 0.3, 0.5],
            repeats: 5,
            record_runtime: false,
            synth: SynthSpec::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {v:?}: {e}"))
}

fn in_range(v: f64, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> std::result::Result<f64, String> {
    let ok_lo = if lo_open { v > lo } else { v >= lo };
    let ok_hi = if hi_open { v < hi } else { v <= hi };
    if ok_lo && ok_hi && v.is_finite() {
        Ok(v)
    } else {
        let l = if lo_open { '(' } else { '[' };
        let h = if hi_open { ')' } else { ']' };
        Err(format!("{v} outside {l}{lo}, {hi}{h}"))
    }
}

fn positive_count(v: &str) -> std::result::Result<usize, String> {
    match parse::<usize>(v)? {
        0 => Err("must be >= 1".into()),
        n => Ok(n),
    }
}

fn real(v: &str, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> std::result::Result<f64, String> {
    in_range(parse::<f64>(v)?, lo, hi, lo_open, hi_open)
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse::<T>)
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn auto<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "auto".into(), ToString::to_string)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line, msg };
            let Some((key, value)) = body.split_once('=') else {
                return Err(err(format!("expected `key = value`, got {body:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(err(format!("key {key:?} already set on line {first}")));
            }
            seen.push((key.to_string(), line));
            cfg.set(key, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        if cfg.methods.is_empty() {
            let line = seen.iter().find(|(k, _)| k == "methods").map_or(0, |x| x.1);
            return Err(Error::Config {
                line,
                msg: "methods: list is empty".into(),
            });
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: 0,
            msg: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let p = &mut self.pipeline;
        let prop = &mut p.propagation;
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = parse(v)?,
            "workers" => self.workers = parse(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "method" => self.method = parse(v)?,
            "methods" => self.methods = list(v)?,
            "rhos" => {
                self.rhos = list::<f64>(v)?
                    .into_iter()
                    .map(|r| in_range(r, 0.0, 1.0, false, true))
                    .collect::<std::result::Result<_, _>>()?;
                if self.rhos.is_empty() {
                    return Err("list is empty".into());
                }
            }
            "repeats" => self.repeats = positive_count(v)?,
            "record_runtime" => self.record_runtime = parse(v)?,
            "classes" => s.classes = positive_count(v)?,
            "per_class" => s.per_class = positive_count(v)?,
            "dim" => s.dim = positive_count(v)?,
            "spread" => s.spread = real(v, 0.0, f64::MAX, false, false)?,
            "outlier_classes" => s.outlier_classes = parse(v)?,
            "rho" => s.rho = real(v, 0.0, 1.0, false, true)?,
            "labeled_ratio" => s.labeled_ratio = real(v, 0.0, 1.0, true, true)?,
            "k" => p.k = positive_count(v)?,
            "c_tau" => prop.c_tau = real(v, 0.0, 1.0, false, false)?,
            "epsilon" => prop.epsilon = real(v, 0.0, 1.0, true, true)?,
            "gain_threshold" => {
                p.gain_threshold = match v {
                    "auto" => None,
                    _ => Some(real(v, 0.0, f64::MAX, false, false)?),
                }
            }
            "max_patch_size" => {
                p.max_patch_size = match v {
                    "auto" => None,
                    _ => Some(positive_count(v)?),
                }
            }
            "m_hops" => prop.extractor.exclusion_hops = parse(v)?,
            "max_iterations" => prop.max_iterations = parse(v)?,
            "patience" => prop.patience = parse(v)?,
            "parallel_patches" => prop.parallel_patches = positive_count(v)?,
            "arch" => p.predictor.arch = parse(v)?,
            "depth" => p.predictor.depth = positive_count(v)?,
            "hidden" => p.predictor.hidden = positive_count(v)?,
            "lr" => p.predictor.lr = real(v, 0.0, f64::MAX, true, false)?,
            "epochs" => p.predictor.epochs = parse(v)?,
            "train_patches" => p.predictor.train_patches = positive_count(v)?,
            "resample" => p.predictor.resample = parse(v)?,
            "confnet_arch" => prop.confnet.arch = parse(v)?,
            "confnet_depth" => prop.confnet.depth = positive_count(v)?,
            "confnet_hidden" => prop.confnet.hidden = positive_count(v)?,
            "eta" => prop.confnet.eta = real(v, 0.0, 0.5, true, false)?,
            "confnet_epochs" => prop.confnet.epochs = parse(v)?,
            "confnet_lr" => prop.confnet.lr = real(v, 0.0, f64::MAX, true, false)?,
            "confnet_trigger" => prop.confnet.trigger = real(v, 0.0, 1.0, false, false)?,
            "confnet_patches" => prop.confnet.patches = parse(v)?,
            "feature_scale" => p.feature_scale = real(v, 0.0, f64::MAX, true, false)?,
            "lp_max_sweeps" => p.lp.max_sweeps = parse(v)?,
            "lp_tolerance" => p.lp.tolerance = real(v, 0.0, f64::MAX, true, false)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.pipeline;
        let prop = &p.propagation;
        let s = &self.synth;
        let cn = &prop.confnet;
        vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("data_dir", self.data_dir().display().to_string()),
            ("method", self.method.to_string()),
            ("methods", join(&self.methods)),
            ("rhos", join(&self.rhos)),
            ("repeats", self.repeats.to_string()),
            ("record_runtime", self.record_runtime.to_string()),
            ("classes", s.classes.to_string()),
            ("per_class", s.per_class.to_string()),
            ("dim", s.dim.to_string()),
            ("spread", s.spread.to_string()),
            ("outlier_classes", s.outlier_classes.to_string()),
            ("rho", s.rho.to_string()),
            ("labeled_ratio", s.labeled_ratio.to_string()),
            ("k", p.k.to_string()),
            ("c_tau", prop.c_tau.to_string()),
            ("epsilon", prop.epsilon.to_string()),
            ("gain_threshold", auto(&p.gain_threshold)),
            ("max_patch_size", auto(&p.max_patch_size)),
            ("m_hops", prop.extractor.exclusion_hops.to_string()),
            ("max_iterations", prop.max_iterations.to_string()),
            ("patience", prop.patience.to_string()),
            ("parallel_patches", prop.parallel_patches.to_string()),
            ("arch", p.predictor.arch.to_string()),
            ("depth", p.predictor.depth.to_string()),
            ("hidden", p.predictor.hidden.to_string()),
            ("lr", p.predictor.lr.to_string()),
            ("epochs", p.predictor.epochs.to_string()),
            ("train_patches", p.predictor.train_patches.to_string()),
            ("resample", p.predictor.resample.to_string()),
            ("confnet_arch", cn.arch.to_string()),
            ("confnet_depth", cn.depth.to_string()),
            ("confnet_hidden", cn.hidden.to_string()),
            ("eta", cn.eta.to_string()),
            ("confnet_epochs", cn.epochs.to_string()),
            ("confnet_lr", cn.lr.to_string()),
            ("confnet_trigger", cn.trigger.to_string()),
            ("confnet_patches", cn.patches.to_string()),
            ("feature_scale", p.feature_scale.to_string()),
            ("lp_max_sweeps", p.lp.max_sweeps.to_string()),
            ("lp_tolerance", p.lp.tolerance.to_string()),
        ]
    }

    /// Effective configuration in the same format it is read from.
    pub fn echo(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.clone())
    }

    /// Synthetic spec with the run seed applied.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// One suite entry per noise ratio, named `rho<value>`.
    pub fn suite_specs(&self) -> Vec<SuiteSpec> {
        self.rhos
            .iter()
            .map(|&rho| SuiteSpec {
                name: format!("rho{rho}"),
                synth: SynthSpec {
                    rho,
                    ..self.synth.clone()
                },
            })
            .collect()
    }

    /// `repeats` consecutive seeds starting at `seed`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl std::fmt::Display for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.echo())
    }
}
