//! Coil sensitivity map estimation from calibration k-space by the
//! nullspace (linear predictability) method, with accelerated variants.

pub mod bench;
pub mod calibration;
pub mod eigensolve;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod maps;
pub mod metrics;
pub mod nullspace;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{extract_calibration, CalibrationRegion, ComplexImageStack, Domain};
pub use maps::{estimate_maps, PipelineConfig, SensitivityResult};
pub use metrics::{projection_residual, ResidualReport};
