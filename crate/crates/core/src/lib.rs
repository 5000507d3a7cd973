pub mod compute;
pub mod adapter;
pub mod backbone;
pub mod config;
pub mod ctc;
pub mod error;
pub mod ifr;
pub mod model;
pub mod pipeline;
pub mod synthdata;
pub mod training;
pub mod windowing;

pub use error::{Error, Result};
