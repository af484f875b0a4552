//! Oracle filters: Kalman–Bucy for linear models, a grid solver for the
//! modified Kushner–Stratonovich equation, and the particle/grid
//! consistency check built from them.

pub mod consistency;
pub mod grid;
pub mod kalman;

pub use consistency::{consistency_check, ConsistencyAssociation, ConsistencyConfig, ConsistencyReport};
pub use grid::{ks_grid_step, GridDensity};
pub use kalman::{kalman_bucy_step, riccati_steady_state, KalmanState};
