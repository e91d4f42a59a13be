//! Patch-local graph networks shared by the label predictor and ConfNet.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, GraphPatch};
use crate::nn::{self, checkpoint, DenseMatrix, ForwardCache, LayerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// `depth` smoothing steps followed by one linear map.
    Sgc,
    /// `depth` graph-convolution blocks with ReLU between them.
    Gcn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Sgc => "sgc",
            Architecture::Gcn => "gcn",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgc" => Ok(Architecture::Sgc),
            "gcn" => Ok(Architecture::Gcn),
            other => Err(format!("unknown architecture {other:?} (expected sgc or gcn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    arch: Architecture,
    depth: usize,
    hidden: usize,
    layers: Vec<LayerParams>,
}

impl GraphModel {
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        depth: usize,
        hidden: usize,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 || in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "model needs depth, input and output sizes >= 1 (got {depth}, {in_dim}, {out_dim})"
            )));
        }
        let dims: Vec<usize> = match arch {
            Architecture::Sgc => vec![in_dim, out_dim],
            Architecture::Gcn => {
                if depth > 1 && hidden == 0 {
                    return Err(Error::InvalidInput("GCN hidden width must be >= 1".into()));
                }
                let mut d = vec![in_dim];
                d.extend(std::iter::repeat(hidden).take(depth - 1));
                d.push(out_dim);
                d
            }
        };
        let layers = dims
            .windows(2)
            .map(|w| LayerParams::new(DenseMatrix::glorot(w[0], w[1], rng)))
            .collect();
        Ok(Self {
            arch,
            depth,
            hidden,
            layers,
        })
    }

    pub fn from_layers(
        arch: Architecture,
        depth: usize,
        hidden: usize,
        layers: Vec<LayerParams>,
    ) -> Result<Self> {
        let expected = match arch {
            Architecture::Sgc => 1,
            Architecture::Gcn => depth,
        };
        if depth == 0 || layers.len() != expected {
            return Err(Error::InvalidInput(format!(
                "{arch} depth {depth} needs {expected} layers, got {}",
                layers.len()
            )));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            arch,
            depth,
            hidden,
            layers,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Parameter-independent part of the forward pass: the full smoothing for
    /// SGC, the first aggregation for GCN.
    pub fn prepare(&self, patch: &GraphPatch, f0: &DenseMatrix) -> Result<DenseMatrix> {
        match self.arch {
            Architecture::Sgc => nn::smooth(patch, f0, self.depth),
            Architecture::Gcn => nn::normalized_aggregate(patch, f0),
        }
    }

    pub fn forward_prepared(
        &self,
        patch: &GraphPatch,
        prepared: DenseMatrix,
    ) -> Result<(DenseMatrix, ForwardCache)> {
        match self.arch {
            Architecture::Sgc => nn::linear_forward(prepared, &self.layers[0]),
            Architecture::Gcn => nn::gcn_forward_aggregated(patch, prepared, &self.layers),
        }
    }

    pub fn logits(&self, patch: &GraphPatch, f0: &DenseMatrix) -> Result<DenseMatrix> {
        let prepared = self.prepare(patch, f0)?;
        Ok(self.forward_prepared(patch, prepared)?.0)
    }

    pub fn backward(
        &self,
        patch: &GraphPatch,
        cache: &ForwardCache,
        grad_logits: &DenseMatrix,
    ) -> Result<Vec<DenseMatrix>> {
        nn::backward(patch, &self.layers, cache, grad_logits)
    }

    /// One header line `arch depth hidden out_dim`, then the binary parameters.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{} {} {} {}",
            self.arch,
            self.depth,
            self.hidden,
            self.out_dim()
        )?;
        checkpoint::write_params(w, &self.layers)
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(Error::Data(format!("bad model header {header:?}")));
        }
        let arch: Architecture = toks[0].parse().map_err(Error::Data)?;
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Data(format!("bad model header field {s:?}: {e}")))
        };
        let (depth, hidden, out) = (num(toks[1])?, num(toks[2])?, num(toks[3])?);
        let layers = checkpoint::read_params(r)?;
        let model = Self::from_layers(arch, depth, hidden, layers)?;
        if model.out_dim() != out {
            return Err(Error::Data(format!(
                "header declares {out} outputs, parameters give {}",
                model.out_dim()
            )));
        }
        Ok(model)
    }
}

/// Feature rows of the patch vertices, in patch order.
pub fn patch_features(features: &FeatureMatrix, patch: &GraphPatch) -> DenseMatrix {
    let dim = features.dim();
    let mut data = Vec::with_capacity(patch.len() * dim);
    for &v in patch.vertex_ids() {
        data.extend_from_slice(features.row(v));
    }
    DenseMatrix::from_vec(patch.len(), dim, data).expect("row lengths match feature dim")
}
