mod forcing;
mod fredholm;
mod gamma;
mod project;
mod verify;
mod whole_line;

pub use forcing::{build_forcing, extend_history, Direction, ExtendedHistory};
pub use fredholm::{fredholm_diagnostics, FredholmReport, KERNEL_CUTOFF};
pub use gamma::{gamma0_estimate, GammaEstimate};
pub use project::{project, projector_matrix, Projection, ProjectorMatrix};
pub use verify::{
    verify_dichotomy, BaseTimeReport, CommutationSample, DecayFit, DecaySample, DichotomyReport, Verdict,
    VerifyOptions, DEGENERACY_LIMIT, FULL_BASIS_LIMIT,
};
pub use whole_line::{
    green_cross_check, solve_whole_line, LeakageReport, WholeLineProblem, WholeLineSolution, WholeLineSolver,
};
