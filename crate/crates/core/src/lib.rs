//! Continuous-time recurrent networks: liquid time-constant (LTC) cells with
//! CT-RNN and Neural ODE baselines, fused and adaptive solvers, exact BPTT
//! training, stability verifiers and a trajectory-length laboratory.

pub mod bounds;
pub mod cells;
pub mod data;
pub mod error;
pub mod expressivity;
pub mod numeric;
pub mod solvers;
pub mod training;

pub use cells::{Activation, Cell, CellKind, CellParams};
pub use error::{Error, Result};
pub use numeric::{Matrix, Polyline2D, RngSeed};
pub use solvers::{Dynamics, SolverKind, Trajectory};
