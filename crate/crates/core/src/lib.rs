pub mod baselines;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod model;
pub mod objective;
pub mod perturb;
pub mod report;
pub mod tensor;
pub mod trainer;
pub mod util;

pub use error::{FavcError, Result};
pub use tensor::{Gradients, NodeId, ParamKind, ParameterSet, Tape, Tensor};
