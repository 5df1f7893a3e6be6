//! Pipeline driver: configuration, staged artifacts with manifests, and reports.

pub mod ablation;
pub mod app;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
