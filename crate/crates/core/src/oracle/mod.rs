//! Brute-force references and instrumentation: dense attention, a
//! straight-line forward pass, finite-difference gradient checks and FLOP
//! accounting.

mod dense;
mod flops;
mod gradcheck;
mod straight;

pub use dense::{dense_ha_reference, dense_sa_reference};
pub use flops::{count_flops, count_flops_plan, linear_fit, FlopReport};
pub use gradcheck::{
    fd_gradcheck, relative_error, GradCheckOptions, GradCheckReport, ModelObjective, Objective, PathCheck,
};
pub use straight::straight_line_forward;

#[cfg(test)]
mod tests;
