pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod sample;
pub mod synth;
pub mod train;

mod dataset;
