//! Uncertainty-aware navigation pipeline for a simulated UAV gate-racing task.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense-network substrate with dropout, Gaussian losses,
//!   reverse-mode gradients and Adam.
//! - [`env`]: circular gate tracks, first-order UAV kinematics, synthetic
//!   observations, the analytic expert and dataset generators.
//! - [`perception`]: a cross-modal variational encoder with Monte Carlo
//!   dropout latent sampling.
//! - [`control`]: ensembles of heteroscedastic policies and the mixture
//!   posterior predictive built from latent samples x members.
//! - [`metrics`]: regression calibration error, density summaries and KDE mode
//!   detection.
//! - [`dependability`]: uncertainty monitors, Bayesian-network risk with soft
//!   evidence and behavior-tree arbitration.
//!
//! Everything is deterministic given explicit seeds.

pub mod control;
pub mod dependability;
pub mod env;
pub mod metrics;
pub mod nn;
pub mod perception;
pub mod seed;
pub mod stats;

pub use control::{PolicyEnsemble, PredictiveComponent, PredictiveSet};
pub use env::{Observation, SceneClass, Track, UavState, VelocityCommand};
pub use nn::DenseNet;
pub use perception::{CmvaeLite, LatentSampleSet};
