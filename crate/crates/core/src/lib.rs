//! Semi-supervised pseudo-labeling for sentence-complexity regression.
//!
//! The pipeline ingests unlabeled corpora ([`corpus`]), featurizes sentences
//! ([`featurize`]), retrieves candidates similar to labeled anchors
//! ([`simindex`]), admits them as pseudo-labels when a baseline regressor's
//! score stays within the anchor's rating spread ([`pseudolabel`]), trains a
//! two-stage multi-seed k-fold ensemble ([`ensemble`]) of linear regressors
//! ([`scorer`]), and evaluates with RMSE before and after a cubic mapping
//! ([`evalmetrics`]).

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evalmetrics;
pub mod featurize;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod pseudolabel;
pub mod scorer;
pub mod simindex;
pub mod synth;

pub use error::{Error, Result};
