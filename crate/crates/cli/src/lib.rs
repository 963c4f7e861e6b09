//! Command-line front end for the solver: TOML-configured runs that persist
//! CSV traces with JSON sidecars, and a comparison view over finished
//! traces.

pub mod compare;
pub mod config;
pub mod run;
pub mod trace;
