//! Energy-minimal power control for multi-task split inference on a
//! solar-harvesting UAV.
//!
//! A UAV collects classification jobs at random slots and must ship each one
//! to a server within a deadline, either as raw data (direct transmission,
//! DT) or as a device-computed feature map (computation-transmission, CT).
//! Minimising energy couples three decisions: the per-task transmission
//! mode, the device compute speed, and the per-slot transmit power under a
//! fading channel.
//!
//! The crate implements the OPETRL pipeline: a tiny DDQN picks the discrete
//! mode per arriving task, and an embedded optimizer produces the continuous
//! power plan — capped water-filling per task window, slot-granular window
//! allocation across the queue, sample-average approximation of the channel
//! chance constraint, and consensus averaging of the per-sample plans. A
//! slot-driven simulator runs the pipeline against one-task and greedy
//! baselines.
//!
//! The crate is `no_std`-compatible (allocation required): disable the
//! default `std` feature and enable `libm`. All randomness flows through
//! explicit seeded generators, so runs are reproducible bit for bit.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("opetrl-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod agent;
pub mod channel;
pub mod error;
pub(crate) mod math;
pub mod model;
pub mod params;
pub mod power;
pub mod seeding;
pub mod sim;
pub mod task;

pub use error::CoreError;
pub use params::SystemParams;
pub use task::{Mode, Task};
