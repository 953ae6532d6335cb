//! Event forecasting from nested bags of documents.
//!
//! The unit of prediction is a super-bag: `h` consecutive days of documents
//! leading up to a date, labeled by whether an event occurred shortly after.
//! Only super-bag labels are observed; the model learns instance-level
//! probabilities anyway, which is what makes precursor discovery (ranking
//! the documents that drove a positive forecast) possible.
//!
//! Modules follow the pipeline: [`synthgen`] produces corpora with planted
//! signal, [`corpus`] defines the data model and file format, [`model`] and
//! [`objective`] define scoring and the training loss, [`trainer`] fits
//! weights by mini-batch SGD, [`precursor`] extracts and ranks precursor
//! documents, [`multiclass`] layers one-vs-rest event typing on top, and
//! [`evaluation`] provides metrics, cross-validation and the lead/history
//! sweep protocol.
//!
//! With the default `parallel` feature, embarrassingly parallel surfaces
//! (scoring, sweep cells, gradient batches) run on a rayon pool; results
//! are bit-identical with the feature disabled.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod model;
pub mod multiclass;
pub mod objective;
pub mod precursor;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
