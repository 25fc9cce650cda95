pub mod bench;
pub mod dense;
pub mod error;
pub mod factor;
pub mod geometry;
pub mod problems;
pub mod skel;
pub mod source;
pub mod verify;

pub use error::{Error, Result};
