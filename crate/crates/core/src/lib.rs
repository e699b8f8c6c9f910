pub mod autograd;
pub mod checkpoint;
pub mod critic;
pub mod dsp;
pub mod error;
pub mod generator;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod speech_encoder;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use autograd::{ConvGeom, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
