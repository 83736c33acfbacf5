//! Simulation of correlated relaxation and dephasing in qubit registers with a
//! second-order time-convolutionless master equation, plus the intensity,
//! parity-oscillation and multiple-quantum-coherence analyses used to detect
//! spatial noise correlations.

pub use num_complex::Complex64 as C64;

pub mod error;
pub mod hilbert;
pub mod spectra;
pub mod dynamics;
pub mod observables;
pub mod protocols;
pub mod experiment;

pub use error::{Error, Result};
