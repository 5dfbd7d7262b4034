//! Inverse-probability-weighted GEE for clustered sequential multiple-assignment
//! randomized trials, with finite-sample sandwich inference and a Monte Carlo
//! coverage harness.
//!
//! The usual path is [`trial_data::load_csv`] → [`gee::fit`] →
//! [`sandwich::sandwich`] → [`inference::report`]. [`simgen`] and [`harness`]
//! generate synthetic trials and summarize repeated fits; [`oracles`] holds
//! slow reference implementations used to check the fast path.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod covariance;
pub mod distributions;
pub mod error;
pub mod gee;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod oracles;
pub mod parallel;
pub mod sandwich;
pub mod simgen;
pub mod trial_data;
pub mod weights;

pub use error::{Error, Result};
pub use trial_data::{ClusterRecord, EmbeddedAI, Sign, TrialDataset};
