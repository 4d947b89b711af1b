//! Robust wavelet variance estimation and the (robust) generalized method of
//! wavelet moments for latent time-series models.

pub mod covariance;
pub mod error;
pub mod gmwm;
pub mod lab;
pub mod model;
pub mod optim;
pub mod psi;
pub mod quad;
pub mod wavelet;
pub mod wv;

pub use nalgebra;

pub use error::{Error, ErrorCategory, Result};
pub use gmwm::{fit_series, fit_wv, FitOptions, FitResult, OmegaKind, PipelineConfig, WeightingMatrix};
pub use model::{parse_model, Component, ModelSpec};
pub use psi::{PsiKind, PsiSpec};
pub use wavelet::{decompose, max_scales, CoefficientPyramid, TimeSeries, WaveletFamily};
pub use wv::{WvEstimate, WvEstimator};
