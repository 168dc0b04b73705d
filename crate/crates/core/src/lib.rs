pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod guidance;
pub mod image;
pub mod schedule;
pub mod solver;
pub mod verify;
pub mod wire;

pub use error::{Error, Result};
