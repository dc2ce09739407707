//! Audio-visual sound source localization with iterative contrastive learning.
// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod json;
pub mod localization;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
