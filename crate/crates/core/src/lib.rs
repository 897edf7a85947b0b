//! Control and simulation stack for non-contact cold-sensation displays.
//!
//! A continuous cold-air jet cools the skin while LEDs warm it in pulses,
//! so the skin temperature saw-tooths around its starting value instead of
//! drifting down. This crate compiles such stimuli into actuator duty
//! timelines, calibrates duty-to-rate models against a simulated skin
//! plant, and replays perception experiments with synthetic participants.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod experiment;
pub mod io;
pub mod pattern;
pub mod plant;
pub mod stats;

pub use error::{Channel, Error, Result};
