pub mod bits;
pub mod cli;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod belief;
pub mod measures;
pub mod miner;
pub mod pra;
pub mod model;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
