//! synthmark: multi-table synthetic data generation with sticky-noise
//! anonymization, plus utility and privacy measurement of the result
//! against the original data.

pub mod data;
pub mod forest;
pub mod harness;
pub mod metrics;
pub mod microdata;
pub mod privacy;
pub mod store;
