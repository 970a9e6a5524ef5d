//! Pose-conditioned, masked-autoregressive rectified-flow transformer for
//! generative novel view synthesis.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rigid camera poses, translation normalisation, orbit rigs.
//! - [`encoding`]: group-representation positional encoding applied inside
//!   attention (2D angles, frame angles and SE(3) camera poses).
//! - [`net`]: the decoder-only backbone with hand-written reverse mode.
//! - [`flow`]: rectified-flow objective, timestep samplers, inference
//!   schedules and Euler generation with classifier-free guidance.
//! - [`views`]: reference/target partitioning and random view masking.
//! - [`synth`]: a deterministic raycaster producing multi-view and video data.
//! - [`evalkit`]: PSNR, SSIM, the activation-magnitude probe, throughput.
//! - [`trainer`]: AdamW training loop for video, 3D and mixed modes.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod encoding;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod net;
pub mod real;
pub mod synth;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
pub use real::Real;
