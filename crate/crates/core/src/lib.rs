//! Facilitated Rydberg tweezer arrays as synthetic flat-band lattices.
pub mod bloch;
pub mod disorder;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod seed;
pub mod stats;
pub mod sweep;
pub mod transfer;

pub use error::{Error, Result};
