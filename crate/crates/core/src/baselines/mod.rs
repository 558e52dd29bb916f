//! Comparison estimators that integrate the equation directly.

pub mod ivp;
pub mod nls;
pub mod sa;

pub use ivp::{integration_grid, rk4_solve, IvpSolution, Trajectory};
pub use nls::{nls_fit, NlsControls, NlsResult};
pub use sa::{sa_fit, AcceptanceRule, AnnealerConfig, Energy, SaResult};
