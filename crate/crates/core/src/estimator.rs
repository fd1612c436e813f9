//! Estimation of refracted light-field features from observation sets.
//!
//! The observations of one feature are fitted to `[u, v] = H [s, t] + X`
//! by least squares. The slope estimate is symmetrized, eigendecomposed
//! into focal-line depths and axes, and the lateral offsets are recovered
//! through the reconstructed slope matrix.

use nalgebra::{DMatrix, Matrix2, Point3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ray4D;
use crate::oracle::{FocalLine, FocalLines, ObservationSet};
use crate::wrap_axis_angle;

/// Relative eigenvalue gap below which the two focal lines are treated as
/// coincident and the axes fixed to the identity.
pub const REPEATED_EIGENVALUE_TOL: f64 = 1e-9;

/// The six feature parameters. `pz1 <= pz2`; angles are axis angles in
/// `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rlff {
    #[serde(rename = "Px")]
    pub px: f64,
    #[serde(rename = "Py")]
    pub py: f64,
    #[serde(rename = "Pz1")]
    pub pz1: f64,
    #[serde(rename = "Pz2")]
    pub pz2: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Rlff {
    pub fn interval_length(&self) -> f64 {
        self.pz2 - self.pz1
    }

    pub fn classify(&self, eps_rel: f64) -> FeatureClass {
        classify(self, eps_rel)
    }

    /// Focal lines implied by the parameters. The line at `pz1` runs along
    /// the `theta2` axis and vice versa.
    pub fn focal_lines(&self) -> FocalLines {
        let c1 = Point3::new(self.px, self.py, self.pz1);
        let c2 = Point3::new(self.px, self.py, self.pz2);
        let axis = |t: f64| Vector3::new(t.cos(), t.sin(), 0.0);
        FocalLines {
            lines: [
                FocalLine { anchor: c1, direction: axis(self.theta2) },
                FocalLine { anchor: c2, direction: axis(self.theta1) },
            ],
            interval: (c1, c2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureClass {
    Lambertian,
    Refracted,
}

impl FeatureClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureClass::Lambertian => "lambertian",
            FeatureClass::Refracted => "refracted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rms_residual: f64,
    pub asymmetry: f64,
    pub r_squared: f64,
    pub n_views: usize,
    pub interval_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitMatrices {
    pub h_hat: Matrix2<f64>,
    pub x_hat: Vector2<f64>,
    pub h_sym: Matrix2<f64>,
    pub h_rec: Matrix2<f64>,
}

/// Solver used for the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Independent `h1..h4`, symmetrized afterwards.
    #[default]
    Unconstrained,
    /// `h2 = h3` imposed inside the least-squares problem.
    SymmetricConstrained,
}

/// Output of [`fit_linear_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub h_hat: Matrix2<f64>,
    pub x_hat: Vector2<f64>,
    pub rms_residual: f64,
    /// Per-observation 2D residual norms, parallel to the input rays.
    pub residuals: Vec<f64>,
}

/// Rotation-maximized coefficient of determination of the `(s, t)` view
/// positions.
///
/// With `l1 >= l2` the eigenvalues of the positions' scatter matrix this is
/// `((l1 - l2) / (l1 + l2))^2`: 1 for collinear views, 0 for an isotropic
/// grid. It equals the largest squared correlation over all rotations of
/// the `s, t` axes.
pub fn view_diversity(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InsufficientViews { need: 3, got: points.len() });
    }
    let n = points.len() as f64;
    let ms = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sss, mut stt, mut sst) = (0.0, 0.0, 0.0);
    for &(s, t) in points {
        let (ds, dt) = (s - ms, t - mt);
        sss += ds * ds;
        stt += dt * dt;
        sst += ds * dt;
    }
    let total = sss + stt;
    if total <= 0.0 {
        return Ok(1.0);
    }
    // l1 - l2 for the 2x2 scatter matrix
    let gap = ((sss - stt).powi(2) + 4.0 * sst * sst).sqrt();
    Ok((gap / total).powi(2).min(1.0))
}

pub fn view_positions(rays: &[Ray4D]) -> Vec<(f64, f64)> {
    rays.iter().map(|r| (r.s, r.t)).collect()
}

/// Least-squares fit of `[u, v] = H [s, t] + X`.
pub fn fit_linear_system(rays: &[Ray4D], mode: FitMode) -> Result<LinearFit> {
    if rays.len() < 4 {
        return Err(Error::InsufficientViews { need: 4, got: rays.len() });
    }
    let n = rays.len();
    let (h_hat, x_hat) = match mode {
        FitMode::Unconstrained => {
            let a = DMatrix::from_fn(n, 3, |r, c| match c {
                0 => rays[r].s,
                1 => rays[r].t,
                _ => 1.0,
            });
            let b = DMatrix::from_fn(n, 2, |r, c| if c == 0 { rays[r].u } else { rays[r].v });
            let x = solve_least_squares(a, b)?;
            (Matrix2::new(x[(0, 0)], x[(1, 0)], x[(0, 1)], x[(1, 1)]), Vector2::new(x[(2, 0)], x[(2, 1)]))
        }
        FitMode::SymmetricConstrained => {
            // unknowns [h1, h2 = h3, h4, x1, x2]
            let mut a = DMatrix::zeros(2 * n, 5);
            let mut b = DMatrix::zeros(2 * n, 1);
            for (r, ray) in rays.iter().enumerate() {
                a[(2 * r, 0)] = ray.s;
                a[(2 * r, 1)] = ray.t;
                a[(2 * r, 3)] = 1.0;
                b[(2 * r, 0)] = ray.u;
                a[(2 * r + 1, 1)] = ray.s;
                a[(2 * r + 1, 2)] = ray.t;
                a[(2 * r + 1, 4)] = 1.0;
                b[(2 * r + 1, 0)] = ray.v;
            }
            let x = solve_least_squares(a, b)?;
            (Matrix2::new(x[0], x[1], x[1], x[2]), Vector2::new(x[3], x[4]))
        }
    };
    let residuals: Vec<f64> = rays
        .iter()
        .map(|r| (Vector2::new(r.u, r.v) - h_hat * Vector2::new(r.s, r.t) - x_hat).norm())
        .collect();
    let rms_residual = (residuals.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(LinearFit { h_hat, x_hat, rms_residual, residuals })
}

/// Column-equilibrated SVD solve of `min |A x - B|`.
fn solve_least_squares(mut a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scales: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::DegenerateGeometry);
    }
    for (mut col, s) in a.column_iter_mut().zip(&scales) {
        col /= *s;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin.is_nan() || smin <= 1e-10 * smax {
        return Err(Error::DegenerateGeometry);
    }
    let mut x = svd.solve(&b, 0.0).map_err(|_| Error::DegenerateGeometry)?;
    for (mut row, s) in x.row_iter_mut().zip(&scales) {
        row /= *s;
    }
    Ok(x)
}

/// `(H + H^T) / 2`.
pub fn symmetrize(h: &Matrix2<f64>) -> Matrix2<f64> {
    (h + h.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric slope matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// Columns are the unit axes for `pz1` and `pz2`.
    pub axes: Matrix2<f64>,
    /// Slopes `-D / pz1`, `-D / pz2`.
    pub slopes: [f64; 2],
    pub pz1: f64,
    pub pz2: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Decomposition {
    /// `H_R = V S V^-1`. The axes are orthonormal so `V^-1 = V^T`.
    pub fn reconstruct(&self) -> Matrix2<f64> {
        self.axes * Matrix2::new(self.slopes[0], 0.0, 0.0, self.slopes[1]) * self.axes.transpose()
    }
}

/// Depths and axes from a symmetric slope matrix.
///
/// Both eigenvalues must be negative. The more negative one belongs to the
/// nearer focal line, so `pz1 <= pz2` holds by construction.
pub fn decompose(hs: &Matrix2<f64>, d: f64) -> Result<Decomposition> {
    let a = hs[(0, 0)];
    let c = hs[(1, 1)];
    let b = 0.5 * (hs[(0, 1)] + hs[(1, 0)]);
    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let lo = mean - radius;
    let hi = mean + radius;
    if hi.is_nan() || hi >= 0.0 {
        return Err(Error::BehindCamera(hi));
    }
    let (theta1, theta2) = if radius < REPEATED_EIGENVALUE_TOL * lo.abs() {
        (0.0, 0.0)
    } else {
        // axis of the larger eigenvalue
        let phi = 0.5 * (2.0 * b).atan2(a - c);
        (wrap_axis_angle(phi + std::f64::consts::FRAC_PI_2), wrap_axis_angle(phi))
    };
    let axes = if theta1 == theta2 {
        Matrix2::identity()
    } else {
        Matrix2::new(theta1.cos(), theta2.cos(), theta1.sin(), theta2.sin())
    };
    Ok(Decomposition { axes, slopes: [lo, hi], pz1: -d / lo, pz2: -d / hi, theta1, theta2 })
}

/// `[Px, Py] = -H_R^-1 X`.
pub fn recover_offsets(h_rec: &Matrix2<f64>, x_hat: &Vector2<f64>) -> Result<Vector2<f64>> {
    let scale = h_rec.norm_squared();
    let det = h_rec.determinant().abs();
    if det.is_nan() || det <= 1e-14 * scale {
        return Err(Error::OffsetUnrecoverable);
    }
    let inv = h_rec.try_inverse().ok_or(Error::OffsetUnrecoverable)?;
    Ok(-(inv * x_hat))
}

/// Frobenius norm of `H_hat - H_R`.
pub fn asymmetry_residual(h_hat: &Matrix2<f64>, h_rec: &Matrix2<f64>) -> f64 {
    (h_hat - h_rec).norm()
}

/// Refracted iff the relative depth gap exceeds `eps_rel`.
pub fn classify(rlff: &Rlff, eps_rel: f64) -> FeatureClass {
    if (rlff.pz2 - rlff.pz1) / rlff.pz1 > eps_rel {
        FeatureClass::Refracted
    } else {
        FeatureClass::Lambertian
    }
}

/// End points of the interval of Sturm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicPoints {
    pub class: FeatureClass,
    pub c1: Point3<f64>,
    pub c2: Point3<f64>,
}

impl CharacteristicPoints {
    /// Distinct points: one for Lambertian features, two otherwise.
    pub fn points(&self) -> Vec<Point3<f64>> {
        match self.class {
            FeatureClass::Lambertian => vec![self.c1],
            FeatureClass::Refracted => vec![self.c1, self.c2],
        }
    }
}

/// `C1 = (Px, Py, Pz1)`, `C2 = (Px, Py, Pz2)`; Lambertian features collapse
/// to the midpoint.
pub fn interval_of_sturm(rlff: &Rlff, eps_rel: f64) -> CharacteristicPoints {
    let class = classify(rlff, eps_rel);
    let (c1, c2) = match class {
        FeatureClass::Refracted => {
            (Point3::new(rlff.px, rlff.py, rlff.pz1), Point3::new(rlff.px, rlff.py, rlff.pz2))
        }
        FeatureClass::Lambertian => {
            let mid = Point3::new(rlff.px, rlff.py, 0.5 * (rlff.pz1 + rlff.pz2));
            (mid, mid)
        }
    };
    CharacteristicPoints { class, c1, c2 }
}

/// Thresholds and options for [`extract_rlff`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub min_views: usize,
    pub r2_max: f64,
    /// Meters in `u, v`.
    pub max_residual: f64,
    pub max_asymmetry: f64,
    pub lambertian_eps: f64,
    /// Drop the single worst view and refit once when the residual test
    /// fails.
    pub trim_worst_view: bool,
    pub fit_mode: FitMode,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            min_views: 5,
            r2_max: crate::calibrate::R2_MAX,
            max_residual: crate::calibrate::DEFAULT_MAX_RESIDUAL,
            max_asymmetry: crate::calibrate::DEFAULT_MAX_ASYMMETRY,
            lambertian_eps: crate::calibrate::DEFAULT_LAMBERTIAN_EPS,
            trim_worst_view: false,
            fit_mode: FitMode::Unconstrained,
        }
    }
}

/// Why a feature was not extracted.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("diversity: {n_views} views, R^2 {r_squared:?}")]
    Diversity { r_squared: Option<f64>, n_views: usize },
    #[error("residual: rms {rms:.3e} > {limit:.3e}")]
    Residual { rms: f64, limit: f64 },
    #[error("asymmetry: {value:.3e} > {limit:.3e}")]
    Asymmetry { value: f64, limit: f64 },
    #[error("geometry: {0}")]
    Geometry(String),
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::Diversity { .. } => "diversity",
            Rejection::Residual { .. } => "residual",
            Rejection::Asymmetry { .. } => "asymmetry",
            Rejection::Geometry(_) => "geometry",
        }
    }
}

/// A successfully extracted feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub id: u64,
    pub rlff: Rlff,
    pub diagnostics: FitDiagnostics,
    pub class: FeatureClass,
    pub fit: FitMatrices,
}

impl Extraction {
    pub fn characteristic_points(&self, eps_rel: f64) -> CharacteristicPoints {
        interval_of_sturm(&self.rlff, eps_rel)
    }
}

/// Full chain: diversity gate, linear fit, symmetrization,
/// eigendecomposition and offset recovery.
pub fn extract_rlff(obs: &ObservationSet, d: f64, cfg: &ExtractConfig) -> std::result::Result<Extraction, Rejection> {
    let mut obs = obs.clone();
    let n_views = obs.len();
    if n_views < cfg.min_views.max(4) {
        return Err(Rejection::Diversity { r_squared: None, n_views });
    }
    let mut r_squared = diversity_of(&obs, cfg)?;
    let mut fit = fit_linear_system(obs.rays(), cfg.fit_mode).map_err(geometry)?;

    if fit.rms_residual > cfg.max_residual && cfg.trim_worst_view && n_views > cfg.min_views.max(4) {
        let worst = fit
            .residuals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(n, _)| n)
            .expect("non-empty");
        obs = obs.filtered(|n| n != worst).map_err(geometry)?;
        r_squared = diversity_of(&obs, cfg)?;
        fit = fit_linear_system(obs.rays(), cfg.fit_mode).map_err(geometry)?;
    }
    if fit.rms_residual > cfg.max_residual {
        return Err(Rejection::Residual { rms: fit.rms_residual, limit: cfg.max_residual });
    }

    let h_sym = symmetrize(&fit.h_hat);
    let dec = decompose(&h_sym, d).map_err(geometry)?;
    let h_rec = dec.reconstruct();
    let asymmetry = asymmetry_residual(&fit.h_hat, &h_rec);
    if asymmetry > cfg.max_asymmetry {
        return Err(Rejection::Asymmetry { value: asymmetry, limit: cfg.max_asymmetry });
    }
    let p = recover_offsets(&h_rec, &fit.x_hat).map_err(geometry)?;
    let rlff = Rlff { px: p.x, py: p.y, pz1: dec.pz1, pz2: dec.pz2, theta1: dec.theta1, theta2: dec.theta2 };
    let class = classify(&rlff, cfg.lambertian_eps);
    Ok(Extraction {
        id: obs.id,
        rlff,
        diagnostics: FitDiagnostics {
            rms_residual: fit.rms_residual,
            asymmetry,
            r_squared,
            n_views: obs.len(),
            interval_length: rlff.interval_length(),
        },
        class,
        fit: FitMatrices { h_hat: fit.h_hat, x_hat: fit.x_hat, h_sym, h_rec },
    })
}

fn diversity_of(obs: &ObservationSet, cfg: &ExtractConfig) -> std::result::Result<f64, Rejection> {
    let r2 = view_diversity(&view_positions(obs.rays())).map_err(geometry)?;
    if r2 > cfg.r2_max {
        return Err(Rejection::Diversity { r_squared: Some(r2), n_views: obs.len() });
    }
    Ok(r2)
}

fn geometry(e: Error) -> Rejection {
    Rejection::Geometry(e.to_string())
}

/// Extract every set in parallel; output is ordered by feature id.
pub fn extract_batch(
    sets: &[ObservationSet],
    d: f64,
    cfg: &ExtractConfig,
) -> Vec<(u64, std::result::Result<Extraction, Rejection>)> {
    let mut out: Vec<_> = sets.par_iter().map(|o| (o.id, extract_rlff(o, d, cfg))).collect();
    out.sort_by_key(|(id, _)| *id);
    out
}
