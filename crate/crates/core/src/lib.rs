pub mod decoding;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod train;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
