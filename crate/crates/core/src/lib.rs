//! Calibration of classifiers against ambiguous, multi-annotator labels.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotators;
pub mod calibrators;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod hexfloat;
pub mod metrics;
pub mod optim;
pub mod prob;
pub mod seeding;
pub mod synthetic;
pub mod toy;

pub use dataset::{LabeledExample, LogitDataset};
pub use error::{Error, Result};
pub use prob::{AnnotationSet, Distribution, LogitVector};
