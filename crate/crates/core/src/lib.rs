//! Coupled pore-air/pore-water consolidation of an unsaturated soil layer.
//!
//! Two independent solution routes share one soil description:
//!
//! * [`oracle`]: Crank–Nicolson finite differences (plus the decoupled Terzaghi
//!   series) for reference fields;
//! * [`neural`], [`losses`] and [`trainer`]: a tanh network trained segment by
//!   segment over log-spaced time windows, with warm starts and a lagged
//!   compatibility penalty against the previous segment's network.
//!
//! [`metrics`] compares the two, [`config`] holds the JSON run configuration.

pub mod error;
pub mod physics;
pub mod oracle;
pub mod neural;
pub mod losses;
pub mod trainer;
pub mod metrics;
pub mod config;

pub use error::*;
pub use physics::{characteristic_air_time, derive_coefficients, validate_coupling, ConstitutiveParameters, SoilModel, WellPosednessReport};
pub use oracle::{sample_solution, solve_coupled_fd, terzaghi_series, GridSpec, SolutionGrid};
