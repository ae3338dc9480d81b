//! Dense tensors, forward kernels and the reverse-mode tape everything else
//! is built on.

mod gemm;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use graph::{Gradients, Graph, OpKind, Var};
pub use kernels::{
    layer_norm, matmul, max_pool_time, mean_pool_time, softmax_rows, standard_norm, standard_norm_eps, NormParams,
    NORM_EPS,
};
pub use params::{ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
