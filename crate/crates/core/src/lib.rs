pub mod codec;
pub mod container;
pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod nets;
pub mod ops;
pub mod pipeline;
pub mod segmenter;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Dims, Scalar, Tensor};
pub use weights::WeightSet;
