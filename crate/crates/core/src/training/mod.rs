//! Losses, optimizer, metrics, gradient checking and the training loop.

mod gradcheck;
mod losses;
mod metrics;
mod optimizer;
mod trainer;

pub use gradcheck::*;
pub use losses::*;
pub use metrics::*;
pub use optimizer::*;
pub use trainer::*;
