//! Refracted light-field features (RLFF).
//!
//! A background point seen through a curved refractive object is imaged
//! like a point behind an astigmatic lens: its rays converge on two focal
//! lines at different depths. From the multi-view observations of one
//! light-field capture this crate estimates the six feature parameters
//! `[Px, Py, Pz1, Pz2, theta1, theta2]`, separates Lambertian from
//! refracted features, and exports the end points of the interval of Sturm
//! as ordinary 2D features for structure-from-motion tools.
//!
//! Modules:
//! - [`geometry`]: two-plane rays, intrinsic decoding, Lambertian projection.
//! - [`oracle`]: astigmatic forward model and synthetic observations.
//! - [`estimator`]: linear fit, eigendecomposition, classification.
//! - [`pipeline`]: keypoint ingestion, cross-view matching, batch extraction.
//! - [`export`]: mono/stereo characteristic-point feature files.
//! - [`io`], [`config`], [`eval`], [`calibrate`]: files, settings, metrics.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod export;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod pipeline;

pub use error::{Error, Result};
pub use estimator::{
    asymmetry_residual, classify, decompose, extract_batch, extract_rlff, fit_linear_system, interval_of_sturm,
    recover_offsets, symmetrize, view_diversity, CharacteristicPoints, ExtractConfig, Extraction, FeatureClass,
    FitDiagnostics, FitMatrices, FitMode, Rejection, Rlff,
};
pub use geometry::{depth_of_slope, project_lambertian, slope_of_depth, DiscreteSample, GridDims, LfIntrinsics, Ray4D};
pub use oracle::{synth_observations, AstigmaticLensModel, ObservationSet};

/// Map an angle onto the unoriented-axis range `[0, pi)`.
pub fn wrap_axis_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(std::f64::consts::PI);
    if w >= std::f64::consts::PI {
        0.0
    } else {
        w
    }
}

/// Distance between two axis angles, modulo `pi`.
pub fn axis_angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_axis_angle(a - b);
    d.min(std::f64::consts::PI - d)
}
