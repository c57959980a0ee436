//! Context-aware separation logic over flow graphs.
//!
//! The crate grounds the inset flow monoid on a finite key grid so that
//! flows, estimators, closures and proof obligations can be decided by
//! exhaustive evaluation. Case studies are a binary search tree with
//! maintenance operations and a linearizability registry.

pub mod error;
pub mod bst;
pub mod casl;
pub mod cli;
pub mod estimator;
pub mod flowgraph;
pub mod keyspace;
pub mod oracle;
pub mod pred;
pub mod registry;

pub use error::{Error, Result};
