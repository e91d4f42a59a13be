//! Row-normalized graph convolution over a patch, its SGC special case, and
//! reverse-mode gradients for the stacked layers.
//!
//! One block computes `F' = relu(D̃⁻¹ Ã F W)` with `Ã = A + I` and `D̃` the
//! row sums of `Ã`. The final block skips the activation and feeds the head.

use crate::error::{Error, Result};
use crate::graph::GraphPatch;
use crate::nn::DenseMatrix;

/// Weight matrix of one block (`in_dim x out_dim`, no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: DenseMatrix,
}

impl LayerParams {
    pub fn new(weight: DenseMatrix) -> Self {
        Self { weight }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Intermediates of one forward pass, tied to the parameters that produced it.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    vertices: usize,
    /// `D̃⁻¹ Ã H_l` per layer, the matrix multiplied into `W_l`.
    agg_inputs: Vec<DenseMatrix>,
    /// `D̃⁻¹ Ã H_l W_l` per layer, before the activation.
    pre_activations: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn layers(&self) -> usize {
        self.agg_inputs.len()
    }
}

/// FNV-1a over parameter shapes and bit patterns.
pub fn fingerprint(params: &[LayerParams]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for p in params {
        mix(p.weight.rows() as u64);
        mix(p.weight.cols() as u64);
        for v in p.weight.data() {
            mix(v.to_bits());
        }
    }
    h
}

fn check_rows(patch: &GraphPatch, f: &DenseMatrix) -> Result<()> {
    if f.rows() != patch.len() {
        return Err(Error::Dimension(format!(
            "patch has {} vertices but input has {} rows",
            patch.len(),
            f.rows()
        )));
    }
    Ok(())
}

fn self_loop_degrees(patch: &GraphPatch) -> Result<Vec<f64>> {
    (0..patch.len())
        .map(|i| {
            let d = 1.0 + patch.local_neighbors(i).iter().map(|&(_, w)| w).sum::<f64>();
            if d == 0.0 || !d.is_finite() {
                Err(Error::Numerical(format!(
                    "row sum of A + I vanishes at local vertex {i}"
                )))
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// `D̃⁻¹ Ã F` restricted to the patch.
pub fn normalized_aggregate(patch: &GraphPatch, f: &DenseMatrix) -> Result<DenseMatrix> {
    check_rows(patch, f)?;
    let deg = self_loop_degrees(patch)?;
    let mut out = f.clone();
    for i in 0..patch.len() {
        let row = out.row_mut(i);
        for &(j, w) in patch.local_neighbors(i) {
            for (o, &x) in row.iter_mut().zip(f.row(j)) {
                *o += w * x;
            }
        }
        for o in row.iter_mut() {
            *o /= deg[i];
        }
    }
    Ok(out)
}

/// `(D̃⁻¹ Ã)ᵀ G`, the adjoint of [`normalized_aggregate`].
pub fn aggregate_adjoint(patch: &GraphPatch, g: &DenseMatrix) -> Result<DenseMatrix> {
    check_rows(patch, g)?;
    let deg = self_loop_degrees(patch)?;
    let mut out = DenseMatrix::zeros(g.rows(), g.cols());
    for i in 0..patch.len() {
        let scale = 1.0 / deg[i];
        let gi: Vec<f64> = g.row(i).iter().map(|v| v * scale).collect();
        for (o, &x) in out.row_mut(i).iter_mut().zip(&gi) {
            *o += x;
        }
        for &(j, w) in patch.local_neighbors(i) {
            for (o, &x) in out.row_mut(j).iter_mut().zip(&gi) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// `(D̃⁻¹ Ã)^depth F`
pub fn smooth(patch: &GraphPatch, f: &DenseMatrix, depth: usize) -> Result<DenseMatrix> {
    check_rows(patch, f)?;
    let mut h = f.clone();
    for _ in 0..depth {
        h = normalized_aggregate(patch, &h)?;
    }
    Ok(h)
}

/// Stacked graph convolution; depth is `params.len()`.
pub fn gcn_forward(
    patch: &GraphPatch,
    f0: &DenseMatrix,
    params: &[LayerParams],
) -> Result<(DenseMatrix, ForwardCache)> {
    let agg0 = normalized_aggregate(patch, f0)?;
    gcn_forward_aggregated(patch, agg0, params)
}

/// Same as [`gcn_forward`] with the first aggregation `D̃⁻¹ Ã F0` precomputed.
pub fn gcn_forward_aggregated(
    patch: &GraphPatch,
    agg0: DenseMatrix,
    params: &[LayerParams],
) -> Result<(DenseMatrix, ForwardCache)> {
    check_rows(patch, &agg0)?;
    if params.is_empty() {
        return Err(Error::InvalidInput("graph convolution needs at least one layer".into()));
    }
    let depth = params.len();
    let mut agg_inputs = Vec::with_capacity(depth);
    let mut pre_activations = Vec::with_capacity(depth);
    let mut next = Some(agg0);
    for (l, p) in params.iter().enumerate() {
        let agg = next.take().expect("set for every layer");
        if agg.cols() != p.in_dim() {
            return Err(Error::Dimension(format!(
                "layer {l} expects {} inputs, got {}",
                p.in_dim(),
                agg.cols()
            )));
        }
        let z = agg.matmul(&p.weight)?;
        agg_inputs.push(agg);
        if l + 1 < depth {
            let h = z.map(|v| v.max(0.0));
            next = Some(normalized_aggregate(patch, &h)?);
        }
        pre_activations.push(z);
    }
    let logits = pre_activations[depth - 1].clone();
    Ok((
        logits,
        ForwardCache {
            fingerprint: fingerprint(params),
            vertices: patch.len(),
            agg_inputs,
            pre_activations,
        },
    ))
}

/// SGC: `(D̃⁻¹ Ã)^depth F0 W`, no nonlinearity.
pub fn sgc_forward(
    patch: &GraphPatch,
    f0: &DenseMatrix,
    depth: usize,
    classifier: &LayerParams,
) -> Result<DenseMatrix> {
    if depth == 0 {
        return Err(Error::InvalidInput("SGC depth must be at least 1".into()));
    }
    let smoothed = smooth(patch, f0, depth)?;
    Ok(linear_forward(smoothed, classifier)?.0)
}

/// Linear head over precomputed smoothed features, cached for [`backward`].
pub fn linear_forward(
    smoothed: DenseMatrix,
    classifier: &LayerParams,
) -> Result<(DenseMatrix, ForwardCache)> {
    if smoothed.cols() != classifier.in_dim() {
        return Err(Error::Dimension(format!(
            "classifier expects {} inputs, got {}",
            classifier.in_dim(),
            smoothed.cols()
        )));
    }
    let logits = smoothed.matmul(&classifier.weight)?;
    Ok((
        logits.clone(),
        ForwardCache {
            fingerprint: fingerprint(std::slice::from_ref(classifier)),
            vertices: smoothed.rows(),
            agg_inputs: vec![smoothed],
            pre_activations: vec![logits],
        },
    ))
}

/// Gradients of a scalar loss with respect to every layer weight.
///
/// `patch` is only consulted for multi-layer caches, where gradients flow
/// back through the aggregation.
pub fn backward(
    patch: &GraphPatch,
    params: &[LayerParams],
    cache: &ForwardCache,
    grad_logits: &DenseMatrix,
) -> Result<Vec<DenseMatrix>> {
    if cache.layers() != params.len() || cache.fingerprint != fingerprint(params) {
        return Err(Error::InvalidInput(
            "forward cache does not match the current parameters".into(),
        ));
    }
    let depth = params.len();
    if grad_logits.shape() != cache.pre_activations[depth - 1].shape() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match logits {:?}",
            grad_logits.shape(),
            cache.pre_activations[depth - 1].shape()
        )));
    }
    if depth > 1 && patch.len() != cache.vertices {
        return Err(Error::Dimension("cache was built on a different patch".into()));
    }
    let mut grads = vec![DenseMatrix::zeros(0, 0); depth];
    let mut g = grad_logits.clone();
    for l in (0..depth).rev() {
        grads[l] = cache.agg_inputs[l].t_matmul(&g)?;
        if l > 0 {
            let g_agg = g.matmul_t(&params[l].weight)?;
            let mut g_h = aggregate_adjoint(patch, &g_agg)?;
            let z = &cache.pre_activations[l - 1];
            for (gv, &zv) in g_h.data_mut().iter_mut().zip(z.data()) {
                if zv <= 0.0 {
                    *gv = 0.0;
                }
            }
            g = g_h;
        }
    }
    Ok(grads)
}
