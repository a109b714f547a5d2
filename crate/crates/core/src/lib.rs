//! Physiological-model-based extended Kalman filter for estimating physical
//! activity energy expenditure from wearable IMU and heart-rate data.

pub mod ekf;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod observability;
pub mod physio;
pub mod pipeline;
pub mod signal;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use types::{ActivitySegment, Intensity, Series3, SubjectProfile, TimeSeries, Unit};
