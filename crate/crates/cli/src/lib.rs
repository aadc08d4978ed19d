//! Command line front end and annotation service for `poolal`.

pub mod commands;
pub mod service;
pub mod settings;

pub use settings::RunSettings;
