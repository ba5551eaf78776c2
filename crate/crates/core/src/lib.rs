pub mod autograd;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod task;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use task::Task;
pub use tensor::{DType, Element, Tensor};
