//! Gradient-based trajectory optimization and the LQR/Riccati solver.

pub mod dare;
pub mod dual;
pub mod lbfgs;

pub use dare::{solve_dare, solve_dare_doubling, spectral_radius, DareOptions, DareSolution};
pub use dual::{central_difference, forward_grad, ChunkDual, Dual, Program, Real, CHUNK};
pub use lbfgs::{
    lbfgs_minimize, AutoDiff, Diagnostics, LbfgsOptions, Minimum, Objective, Termination,
};
