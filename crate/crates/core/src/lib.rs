//! Usage-based probing workbench.
//!
//! Trains a small masked language model on a synthetic agreement corpus,
//! measures how linearly extractable grammatical number is with
//! V-information probes, removes it with iterative nullspace projection,
//! cuts attention paths, and scores every intervention on subject–verb
//! number agreement.

pub mod agreement;
pub mod amnesic;
pub mod attention;
pub mod config;
pub mod corpus;
pub mod error;
pub mod model;
pub mod probes;
pub mod report;
pub mod repr;
pub mod vocab;

pub use error::{Error, Result};
