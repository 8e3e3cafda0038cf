//! Differentiable building blocks. Each `*_forward` returns its output and an
//! [`OpRecord`]; [`backward`] turns a record and the upstream gradient into
//! input and parameter gradients.

pub mod activation;
pub mod conv;
pub mod dense;
pub(crate) mod gemm;
pub mod loss;
pub mod pool;
pub mod record;
pub mod tconv;

pub use activation::{activation_forward, Activation};
pub use conv::{conv2d_forward, ConvSpec};
pub use dense::dense_forward;
pub use loss::{bce_loss, BCE_EPSILON};
pub use pool::maxpool2x2_forward;
pub use record::{backward, Gradients, OpRecord};
pub use tconv::{
    crop_forward, tconv_forward, tconv_sparse_matrix, SparseMatrix, TConvGeometry, TConvMatrix,
};
