//! Data pipeline, training loop and command-line harness around
//! [`reimts_core`].

pub mod data;
pub mod training;
pub mod harness;
