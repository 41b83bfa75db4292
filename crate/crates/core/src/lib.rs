//! Bayesian classification with one finite mixture of multivariate
//! Student-t (Gaussian scale mixture) models per class, learned by
//! variational inference with automatic component pruning.
//!
//! The usual flow: load a [`FeatureDataset`], build a prior with
//! [`build_default_prior`], train with [`fit`], then score new rows with
//! [`class_posterior`] or [`classify`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Frozen reference values keep every digit they were computed with.
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nu_select;
pub mod numerics;
pub mod predict;
pub mod vb;

pub use data::{FeatureDataset, FeatureMatrix};
pub use error::{Error, Result};
pub use model::{
    build_default_prior, ClassModel, ClassPriorPolicy, ComponentPosterior, LatentStatistics,
    PriorHyperparameters, TrainedClassifier,
};
pub use predict::{class_log_predictive, class_posterior, classify, ClassPosterior};
pub use vb::{fit, InitStrategy, NuMode, VbConfig};
