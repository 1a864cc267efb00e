pub mod copula;
pub mod error;
pub mod ingest;
pub mod marginals;
pub mod mlp;
pub mod optimize;
pub mod pipeline;
pub mod scenario;
pub mod selection;
pub mod tail;

pub use error::{Error, Result};
