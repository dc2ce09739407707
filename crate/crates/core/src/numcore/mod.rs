//! Dense tensors, deterministic randomness and exact gradients.

pub mod avic;
mod grad;
pub mod ops;
mod params;
mod rng;
mod tensor;

pub use grad::{
    finite_diff_against, finite_diff_check, finite_diff_multi_step, grad, relative_error,
    FnObjective, GradCheckReport, Objective, SegmentReport,
};
pub use params::ParamVector;
pub use rng::{seeded_rng, Rng};
pub use tensor::{dot, Tensor};
