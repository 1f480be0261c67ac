pub mod error;
pub mod exec;
pub mod geometry;
pub mod kinematics;
pub mod kv;
pub mod material;
pub mod audio;
pub mod cloud;
pub mod dataset;
pub mod eval;
pub mod shape;
pub mod refine;
pub mod sim;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
