pub mod check;
pub mod data;
pub mod error;
pub mod geometry;
pub mod lab;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod losses;
pub mod stats;
pub mod train;
pub mod uncertainty;

pub use error::{LabError, Result};
pub use renormlab_tensor as tensor;
