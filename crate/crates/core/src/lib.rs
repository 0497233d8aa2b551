pub mod disk;
pub mod config;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod homology;
pub mod linearized;
pub mod moduli;
pub mod numerics;
pub mod report;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
