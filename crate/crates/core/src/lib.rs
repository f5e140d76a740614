pub mod basis;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod model;
pub mod optim;
pub mod par;
pub mod sim;
pub mod spatial;

pub use error::{FsarError, Result};
