//! Pipeline glue: manifests, checkpoints, experiment configs, dataset
//! synthesis, report emission, and the end-to-end experiment runner.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod synth;
