pub mod error;
pub mod field;
pub mod graph;
pub mod lattice;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod walkers;
pub mod ward;

pub use error::{Error, Result};
