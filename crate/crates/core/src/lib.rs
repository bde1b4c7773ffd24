pub mod checkpoint;
pub mod dataset;
pub mod dynamics;
pub mod encoder;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod report;
pub mod rng;
