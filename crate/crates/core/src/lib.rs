//! Multilingual interpretability workbench over an instrumented toy
//! decoder-only transformer.

pub mod codemix;
pub mod error;
pub mod io;
pub mod lens;
pub mod model;
pub mod neurons;
pub mod stats;
pub mod tokenize;

pub use error::{Error, Result};
