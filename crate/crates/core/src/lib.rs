//! Bayes-optimal F-measure maximization for multi-label classification.
//!
//! The exact maximizer ([`gfm`]) consumes the `m x m` matrix of
//! `p(y_i = 1, s_y = s)` values. When the label set splits into subsets that
//! are conditionally independent given the features, [`factor`] rebuilds that
//! matrix from small per-subset matrices before running the maximizer.
//! [`estimate`] fits the per-subset matrices from data, [`discover`] looks for
//! the subsets, [`synth`] produces Bayesian-network benchmark data and
//! [`harness`] runs the comparison sweeps. [`oracle`] holds the brute-force
//! reference used throughout the tests.

pub mod discover;
pub mod error;
pub mod estimate;
pub mod factor;
pub mod gfm;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use factor::{f_gfm, merge, parameter_count, recover_d, DVector, FactorStats, LabelPartition};
pub use gfm::{build_w, compute_delta, f_measure, gfm, gfm_from_p_only, LabelVector, PMatrix};
pub use oracle::JointLabelDistribution;
pub use synth::{BayesNetSpec, Dataset, ScenarioId};
