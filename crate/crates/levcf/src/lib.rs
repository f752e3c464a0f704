//! Simulation and analysis toolkit for an optically levitated nanoparticle
//! cooled by measurement-free, delayed all-optical feedback.
//!
//! The crate has three legs that cross-validate each other:
//!
//! - [`model`] carries the closed-form theory: coherent damping from a
//!   delayed restoring force, noise amplitudes, displacement spectra,
//!   effective and minimum temperatures, optimal gain, phonon conversion and
//!   parameter projections.
//! - [`dynamics`] integrates the same physics as a stochastic delay
//!   differential equation with reproducible, stream-split randomness; the
//!   linearized damping and noise terms of the model are emergent there, not
//!   injected.
//! - [`spectral`], [`fitting`] and [`detection`] recover temperatures,
//!   linewidths, loop parameters and noise-squashing signatures from the
//!   simulated records the way an experiment would.
//!
//! [`harness`] wires those into batch scenarios (sweeps over loop phase,
//! trap frequency, feedback gain) with CSV outputs, fit reports and
//! self-contained plot scripts. A thin `levcf` binary exposes the harness;
//! the `examples/` directory demonstrates each capability in isolation:
//!
//! ```bash
//! cargo run -p levcf --release --example damping_law
//! cargo run -p levcf --release --example equipartition
//! cargo run -p levcf --release --example temperature_minimum
//! cargo run -p levcf --release --example noise_squashing
//! cargo run -p levcf --release --example frequency_sweep
//! cargo run -p levcf --release --example heating_cooling
//! cargo run -p levcf --release --example delay_oracle
//! cargo run -p levcf --release --example projection
//! cargo run -p levcf --release --example batch_sweep
//! ```

pub mod detection;
pub mod digest;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod harness;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
