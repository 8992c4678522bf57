//! Spectral visual odometry for downward-looking cameras.
//!
//! Consecutive frames are registered with the Fourier-Mellin transform
//! (rotation and zoom from log-polar magnitude spectra, translation from
//! phase correlation). Instead of trusting the single strongest peak, the
//! correlation surfaces are summarized as energy vectors over zoom and
//! translation radius; matching these vectors between consecutive frame
//! pairs keeps the motion scale consistent when the dominant scene depth
//! changes. A three-frame loop refinement adjusts angles and scale factors
//! so that the 0→1, 1→2 and 0→2 motions chain.
//!
//! The crate also ships a procedural multi-depth scene renderer for
//! generating datasets with ground truth, and an evaluation kit for
//! absolute trajectory error.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod eval;
pub mod fft;
pub mod image;
pub mod matching;
pub mod optimizer;
pub mod pipeline;
pub mod registration;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{align_and_scale, ate, emit_plots, AteReport};
pub use image::{Grid, Image};
pub use pipeline::{process_sequence, Mode, PipelineConfig, Pose, Trajectory};
pub use registration::{register_pair, PairRegistration, RegistrationConfig};
