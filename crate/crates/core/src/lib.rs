//! Multiple-instance learning for video-level engagement intensity.
//!
//! A video is a *bag* of `M` segment feature vectors carrying one weak
//! label in `0..=3`. The crate covers the whole path from per-frame inputs
//! to localized per-segment intensities:
//!
//! * [`features`] turns face-crop frame archives and head-pose / eye-gaze
//!   tracks into per-segment LBP-TOP or pose/gaze vectors.
//! * [`weakdata`] builds bags, subject-independent splits, class
//!   rebalancing, k-means relabeling and a planted-signal synthetic
//!   generator.
//! * [`baselines`] holds the instance-level regressors (epsilon-SVR trained
//!   by SMO, SGD linear regression, Bayesian ridge) and video aggregation.
//! * [`deepmil`] holds the dense ranking network with top-k / mean pooling
//!   and the LSTM sequence network, with handwritten backpropagation.
//! * [`eval`] has annotation fusion via quadratic-weighted kappa and the
//!   reported metrics.

pub mod baselines;
pub mod deepmil;
pub mod eval;
pub mod features;
pub mod weakdata;

/// Number of engagement levels (`0..=3`).
pub const LEVELS: usize = 4;

/// Highest engagement level.
pub const MAX_LEVEL: u8 = 3;
