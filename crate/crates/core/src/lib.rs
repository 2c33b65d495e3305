pub mod augment;
pub mod dct;
pub mod error;
pub mod eval;
pub mod model;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
