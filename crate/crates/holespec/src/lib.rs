//! Simulation and analysis toolkit for transient spectral hole burning in
//! inhomogeneously broadened optical transitions with nuclear-spin shelving
//! levels, plus the surrounding photophysics (lifetimes, quantum yields,
//! chromaticity) and the nonlinear least-squares fits used to reduce the
//! synthetic data.
//!
//! Internal convention: all frequencies in Hz, all times in seconds.
//! Nanometres and wavenumbers exist only at I/O boundaries (see
//! [`spectro`] for the conversions).

pub mod config;
pub mod csvio;
pub mod fitting;
pub mod levels;
pub mod photophysics;
pub mod pump;
pub mod readout;
pub mod run;
pub mod spectro;

pub use config::RunConfig;
pub use fitting::FitResult;
pub use levels::{EnsembleModel, HyperfineManifold, TransitionTable};
pub use pump::{LaserPulse, PopulationState, PulseSequence, RelaxationParams};
pub use readout::{DecaySeries, HoleSpectrum};
pub use spectro::{Linewidths, Spectrum};
