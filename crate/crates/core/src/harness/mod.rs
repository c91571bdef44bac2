//! Training, evaluation, gradient checking, ablation sweeps and overhead
//! accounting, as used by the `sadapter` binary.

pub mod ablate;
pub mod config;
pub mod gradcheck;
pub mod params;
pub mod train;

pub use config::RunConfig;
