pub mod corpus;
pub mod cvb;
pub mod downstream;
pub mod error;
pub mod estimates;
pub mod eval;
pub mod model_io;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
