pub mod cli;
pub mod dataset;
pub mod eval;
pub mod kg;
pub mod model;
pub mod synth;
pub mod train;
pub mod tensor;
