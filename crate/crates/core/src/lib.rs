pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod m3gn;
pub mod meshgraph;
pub mod mgn;
pub mod model;
pub mod mpn;
pub mod numerics;
pub mod prodmp;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
