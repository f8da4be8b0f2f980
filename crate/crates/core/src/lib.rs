pub mod corpus;
pub mod detector;
pub mod dialogue;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod rag;
pub mod rng;
pub mod scoring;
pub mod trajectory;

pub use error::{Error, Result};
