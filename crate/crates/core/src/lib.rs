pub mod decompose;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod reduced_form;
pub mod revenue;
pub mod sampling;
pub mod welfare;
pub mod wso;

pub use error::{Error, Result};
