//! Embedding-based slant measurement and difference-in-differences
//! estimation for user-day social media panels.

pub mod config;
pub mod corpus;
pub mod dates;
pub mod encoder;
pub mod estimator;
pub mod error;
pub mod numeric;
pub mod panel;
pub mod pipeline;
pub mod slant;
pub mod synth;

pub use error::{Error, Result};
