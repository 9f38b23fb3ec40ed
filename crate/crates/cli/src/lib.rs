//! Command-line front end: CSV ingestion, run configuration, the elevation
//! service client and report emitters.

pub mod commands;
pub mod config;
pub mod elevation;
pub mod ingest;
pub mod report;
