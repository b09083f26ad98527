//! Harness around `opetrl-core`: text configuration, CSV emission, network
//! checkpoints, the train/eval/sweep commands and the self-check oracles.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod verify;
