//! Hawkes processes with latency-shifted exponential kernels: simulation,
//! likelihoods, maximum-likelihood fitting and order-book data utilities.

pub mod data;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod sim;

pub use error::{HawkesError, Result};
pub use model::{
    expected_intensity, intensity_at, intensity_at_md, kernel_curve, kernel_value, CurveUnits,
    EventSeries, ExpKernel, KernelCurve, Latency, Model1D, ModelMD, Stationarity,
};

pub use nalgebra;
