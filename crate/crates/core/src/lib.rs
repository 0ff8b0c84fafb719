pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod discriminator;
pub mod dsp;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod prep;
pub mod real;
pub mod streaming;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
