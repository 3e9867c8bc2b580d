pub mod error;
pub mod linalg;
pub mod medium;
pub mod stix;

pub use error::{Error, Result};
pub mod mesh;
pub mod fdtd;
pub mod diagnostics;
pub mod implicit;
pub mod spectral;
pub mod harmonic;
pub mod scenario;
