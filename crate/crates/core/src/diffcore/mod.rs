//! Minimal differentiable compute layer: a matrix-valued reverse-mode tape,
//! dense networks, Gaussian log-densities, Adam with gradient clipping, and a
//! central finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod nn;
mod params;
mod tape;

pub use adam::{adam_step, clip_global_norm, clip_row_norm, AdamConfig};
pub use nn::{
    gaussian_head, gaussian_kl_rows, gaussian_logpdf, gaussian_logpdf_rows, std_normal_logpdf_rows,
    Activation, Mlp, NetworkSpec, HALF_LN_2PI, LOG_STD_MAX, LOG_STD_MIN,
};
pub use params::{AdamState, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
