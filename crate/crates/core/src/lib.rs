//! Joint MRI reconstruction and multi-class segmentation from undersampled
//! k-space data with Bregman iterations.
//!
//! The pieces, bottom up: [`types`] and [`operators`] (unitary DFT forward
//! model, gradient, projections), [`recon`] (TV and Bregman-TV
//! reconstruction), [`segment`] (convex-relaxed Chan-Vese), [`joint`] (the
//! alternating scheme), [`simulate`], [`metrics`], [`diagnostics`], and the
//! experiment harness in [`config`], [`io`] and [`experiment`].

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod joint;
pub mod metrics;
pub mod operators;
pub mod recon;
pub mod segment;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use joint::{constrained_joint_solve, joint_solve, JointResult};
pub use metrics::{psnr, rre, rse, PsnrVariant};
pub use recon::{bregman_tv_reconstruct, tv_reconstruct, Reconstruction};
pub use segment::{bregman_segment, segment, threshold, Segmentation};
pub use types::*;
