pub mod adapt;
pub mod autograd;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod record;
pub mod seed;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{DameError, Result};
