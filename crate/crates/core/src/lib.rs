pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gcfagg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod networks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
