//! Station-based bike-sharing digital twin.
//!
//! Builds half-hour net-demand datasets, trains forecasters on them, and
//! replays days of user trips through a discrete-event simulator in which a
//! fleet of vehicles relocates bikes guided by those forecasts.

pub mod data;
pub mod experiments;
pub mod forecast;
pub mod model;
pub mod relocation;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod synth;
