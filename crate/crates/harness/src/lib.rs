//! Experiment harness for the fractional-gradient optimizer suite:
//! configuration, multi-seed execution, hyperparameter grid search,
//! meta-training orchestration, and tidy CSV emission for plotting.

pub mod config;
pub mod csvio;
pub mod error;
pub mod grid;
pub mod metacli;
pub mod plotdata;
pub mod records;
pub mod runner;
