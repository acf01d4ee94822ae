//! Scenario runner for the Compton scattering tomography toolkit: the CSTB
//! array format, run configuration, manifests and pipeline commands.

pub mod config;
pub mod cstb;
pub mod manifest;
pub mod pipeline;
