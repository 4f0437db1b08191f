pub mod error;
pub mod mesh;
pub mod nn;
pub mod deform;
pub mod losses;
pub mod quadtree;
pub mod decode;
pub mod render;
pub mod pipeline;

pub use error::{Error, Result};
