//! Method-of-steps integration, solution operators, convolution solves and
//! the adjoint pairing.

mod adjoint;
mod convolve;
mod history;
mod integrate;

pub use adjoint::{
    adjoint_matrices, adjoint_pairing_residual, apply_adjoint, apply_operator, weighted_pairing,
    PairingResult,
};
pub use convolve::{convolve_solve, convolve_weighted, equation_residual, ConvolveReport, Kernel};
pub use history::HistorySegment;
pub use integrate::{
    batch_trajectory, integrate, integrate_with, integrator_step, operator_matrix,
    operator_trajectory, solution_operator, IntegratorOptions, Trajectory,
};
