// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod calibration;
pub mod error;
pub mod isp;
pub mod kernel;
pub mod noise_model;
pub mod raw;
pub mod rng;
pub mod sensor_sim;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
