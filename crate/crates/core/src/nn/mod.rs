//! Dense numerical kernel: matrices, patch-local graph convolution, losses and Adam.

mod adam;
pub mod checkpoint;
mod layers;
mod loss;
mod matrix;

pub use adam::AdamState;
pub use layers::{
    aggregate_adjoint, backward, fingerprint, gcn_forward, gcn_forward_aggregated, linear_forward,
    normalized_aggregate, sgc_forward, smooth, ForwardCache, LayerParams,
};
pub use loss::{sigmoid, sigmoid_bce, softmax_in_place, softmax_rows, softmax_xent};
pub use matrix::DenseMatrix;
