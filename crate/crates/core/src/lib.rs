//! Recurrent attention network encoder.
//!
//! A document is cut into fixed windows. Each window is encoded with
//! self-attention together with a single recurrent state vector (the global
//! perception cell), which is carried from window to window. The states
//! collected along the way form a memory bank that token outputs can attend
//! back into. Everything is generic over `f32`/`f64` through [`Scalar`].

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod heads;
pub mod kv;
pub mod memory_review;
pub mod model;
pub mod numerics;
pub mod recurrence;
pub mod rope;
pub mod training;

pub use config::{Ablations, GpcRouting, ModelConfig, Task};
pub use error::{RanError, Result};
pub use model::RanModel;
pub use numerics::{DType, ParamStore, Scalar, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = RanModel<f32>;
pub type Model64 = RanModel<f64>;
pub type Params32 = ParamStore<f32>;
pub type Params64 = ParamStore<f64>;
