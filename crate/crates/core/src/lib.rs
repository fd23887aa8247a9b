//! Simulation, reconstruction and evaluation toolkit for the optical-mouse
//! acoustic side channel.
//!
//! Audio drives a vibrating desk surface ([`sensor::surface_response`]); the
//! mouse sensor quantizes that motion into sparse HID-style packets
//! ([`sensor::simulate_sensor`]); packets travel over a telemetry channel
//! ([`telemetry`]) and are turned back into audio by non-uniform sinc
//! resampling and Wiener filtering ([`reconstruct`]). [`metrics`] scores the
//! result and [`feasibility`] covers the resolution and sampling bounds.

pub mod dsp;
pub mod error;
pub mod feasibility;
pub mod metrics;
pub mod pipeline;
pub mod reconstruct;
pub mod sensor;
pub mod signal;
pub mod telemetry;
pub mod tensor;

pub use error::{Error, Result};
pub use signal::{SweepSpec, Waveform};
