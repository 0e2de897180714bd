//! Post-hoc out-of-distribution detection by sensitivity-guided pruning of a
//! classifier's final affine layer.
//!
//! The pipeline: estimate how strongly each head weight moves the energy
//! score on training data ([`sensitivity`]), mask the weights and neurons
//! whose sensitivity is extreme on either side ([`pruning`]), then score and
//! evaluate ID/OOD separability ([`scoring`], [`metrics`]). [`sweep`] picks
//! the pruning percentages on a validation split and [`toymodel`] provides a
//! small synthetic benchmark for testing all of it.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pruning;
pub mod scoring;
pub mod sensitivity;
pub mod sweep;
pub mod toymodel;
pub mod types;

pub use error::{OpnpError, Result};
pub use types::{
    validate, ClassifierHead, EvalReport, FeatureSet, NeuronSensitivity, NeuronStatistic,
    PruneConfig, ScoreKind, ScoreVector, SensitivityMap,
};
