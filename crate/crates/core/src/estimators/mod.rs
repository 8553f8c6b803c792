//! The eight treatment-effect estimators and REML variance components.

mod fit;
mod gls;
mod kind;
mod reml;

pub use fit::{fit, fit_many, fit_summary, fit_summary_many, FitOptions, FitResult};
pub use gls::gls_point_estimate;
pub use kind::EstimatorKind;
pub use reml::{estimate_variance_components, RemlFit, RemlOptions};
