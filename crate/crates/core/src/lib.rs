pub mod cfrm;
pub mod cli;
pub mod clustering;
pub mod dcmtf;
pub mod error;
pub mod linalg;
pub mod model;
pub mod neural;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
