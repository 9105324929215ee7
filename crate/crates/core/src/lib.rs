pub mod error;
pub mod evolution;
pub mod exact;
pub mod gaussian_dos;
pub mod grassmann;
pub mod linalg;
pub mod optimizer;
pub mod umps;

pub use error::{Error, Result};
