//! Initial-value privacy auditing for linear dynamical systems.
//!
//! * [`sysmodel`]: systems, noise models, network structures and their JSON files.
//! * [`obsv`]: observability matrices, Toeplitz noise maps and SVD rank utilities.
//! * [`linalg`]: SVD and symmetric eigendecompositions backed by faer.
//! * [`intrinsic`]: exact privacy verdicts and the network privacy index.
//! * [`dp`]: Gaussian-mechanism certificates and noise calibration.
//! * [`generic`]: structural verdicts over random weight configurations.
//! * [`sim`]: trajectory simulation, the GLS attack and empirical DP evidence.
//! * [`cli`]: the `ivp` command-line front end.

pub mod cli;
pub mod dp;
pub mod error;
pub mod generic;
pub mod intrinsic;
pub mod linalg;
pub mod obsv;
pub mod sim;
pub mod sysmodel;

pub use error::{Error, Result};
