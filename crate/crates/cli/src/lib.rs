//! Command-line pipeline driver and HTTP relighting service.

pub mod cli;
pub mod service;
