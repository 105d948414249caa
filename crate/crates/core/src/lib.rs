pub mod container;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod hin;
pub mod incremental;
pub mod metastructure;
pub mod msgat;
pub mod numerics;

pub use error::{Error, Result};
