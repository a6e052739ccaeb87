//! Green's functions of the limit system and of the perturbed system.

mod autonomous;
mod fit;
mod neumann;

pub use autonomous::{
    green_autonomous, resolvent, resolvent_remainder, scalar_samples, GreenKernel, GreenOptions,
};
pub use fit::fit_exponential_bound;
pub use neumann::{
    neumann_green, perturbed_kernel_gamma, small_gain, NeumannConstants, NeumannOptions,
    PerturbedKernel,
};
