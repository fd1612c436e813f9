//! Forward model of a point seen through a thin astigmatic lens.
//!
//! The lens focuses the point to two focal lines at apparent depths `Pz1`
//! and `Pz2`. In ray space every observation satisfies
//! `[u, v] = H [s, t] + X` with `H = V S V^-1`, `S = diag(-D/Pz1, -D/Pz2)`
//! and `X = -H [Px, Py]`. This module generates noise-controlled
//! observation sets from known models and is the ground truth for the
//! estimator.

use std::collections::HashSet;

use nalgebra::{Matrix2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DiscreteSample, LfIntrinsics, Ray4D};
use crate::wrap_axis_angle;

/// Ground-truth astigmatic lens model for one background point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstigmaticLensModel {
    pub px: f64,
    pub py: f64,
    pub pz1: f64,
    pub pz2: f64,
    v1: Vector2<f64>,
    v2: Vector2<f64>,
}

impl AstigmaticLensModel {
    /// General model with focal-line axes at angles `theta1`, `theta2`.
    pub fn new(px: f64, py: f64, pz1: f64, pz2: f64, theta1: f64, theta2: f64) -> Result<Self> {
        for (name, x) in [("Px", px), ("Py", py), ("theta1", theta1), ("theta2", theta2)] {
            if !x.is_finite() {
                return Err(Error::InvalidModel(format!("{name} is not finite")));
            }
        }
        if !(pz1 > 0.0 && pz1.is_finite() && pz2 > 0.0 && pz2.is_finite()) {
            return Err(Error::InvalidModel(format!("depths must be positive, got {pz1}, {pz2}")));
        }
        let v1 = Vector2::new(theta1.cos(), theta1.sin());
        let v2 = Vector2::new(theta2.cos(), theta2.sin());
        if pz1 != pz2 && Matrix2::from_columns(&[v1, v2]).determinant().abs() < 1e-12 {
            return Err(Error::DegenerateAxes);
        }
        Ok(AstigmaticLensModel { px, py, pz1, pz2, v1, v2 })
    }

    /// Toric lens: orthogonal axes, the first at angle `theta`.
    pub fn toric(px: f64, py: f64, pz1: f64, pz2: f64, theta: f64) -> Result<Self> {
        Self::new(px, py, pz1, pz2, theta, theta + std::f64::consts::FRAC_PI_2)
    }

    /// A plain Lambertian point at `(px, py, pz)`.
    pub fn lambertian(px: f64, py: f64, pz: f64) -> Result<Self> {
        Self::toric(px, py, pz, pz, 0.0)
    }

    pub fn axis1(&self) -> Vector2<f64> {
        self.v1
    }

    pub fn axis2(&self) -> Vector2<f64> {
        self.v2
    }

    pub fn theta1(&self) -> f64 {
        wrap_axis_angle(self.v1.y.atan2(self.v1.x))
    }

    pub fn theta2(&self) -> f64 {
        wrap_axis_angle(self.v2.y.atan2(self.v2.x))
    }

    pub fn is_orthogonal(&self) -> bool {
        self.v1.dot(&self.v2).abs() < 1e-12
    }

    /// Same lens with the labels of the two focal lines exchanged.
    pub fn swapped(&self) -> Self {
        AstigmaticLensModel { pz1: self.pz2, pz2: self.pz1, v1: self.v2, v2: self.v1, ..*self }
    }

    /// Same lens seen from a camera translated by `(dx, dy)` in the `s, t`
    /// plane.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        AstigmaticLensModel { px: self.px - dx, py: self.py - dy, ..*self }
    }

    /// Slope matrix `H = V S V^-1`.
    pub fn slope_matrix(&self, d: f64) -> Result<Matrix2<f64>> {
        let s1 = -d / self.pz1;
        let s2 = -d / self.pz2;
        if self.pz1 == self.pz2 {
            return Ok(Matrix2::identity() * s1);
        }
        let v = Matrix2::from_columns(&[self.v1, self.v2]);
        let v_inv = v.try_inverse().ok_or(Error::DegenerateAxes)?;
        Ok(v * Matrix2::new(s1, 0.0, 0.0, s2) * v_inv)
    }

    /// Offset term `X = -H [Px, Py]`.
    pub fn offset(&self, d: f64) -> Result<Vector2<f64>> {
        Ok(-(self.slope_matrix(d)? * Vector2::new(self.px, self.py)))
    }

    /// Relative `(u, v)` observed from `(s, t)`.
    pub fn observe(&self, s: f64, t: f64, d: f64) -> Result<(f64, f64)> {
        let h = self.slope_matrix(d)?;
        let uv = h * Vector2::new(s - self.px, t - self.py);
        Ok((uv.x, uv.y))
    }

    /// The two focal lines and the interval of Sturm joining them.
    ///
    /// Rays from the pencil all cross depth `Pz1` on the line through
    /// `(Px, Py)` spanned by the second axis, and depth `Pz2` on the line
    /// spanned by the first.
    pub fn focal_lines(&self) -> FocalLines {
        let c1 = Point3::new(self.px, self.py, self.pz1);
        let c2 = Point3::new(self.px, self.py, self.pz2);
        FocalLines {
            lines: [
                FocalLine { anchor: c1, direction: Vector3::new(self.v2.x, self.v2.y, 0.0) },
                FocalLine { anchor: c2, direction: Vector3::new(self.v1.x, self.v1.y, 0.0) },
            ],
            interval: (c1, c2),
        }
    }

    pub fn to_record(&self, id: Option<u64>) -> SceneRecord {
        SceneRecord {
            id,
            px: self.px,
            py: self.py,
            pz1: self.pz1,
            pz2: self.pz2,
            theta1: self.v1.y.atan2(self.v1.x),
            theta2: self.v2.y.atan2(self.v2.x),
        }
    }
}

/// Scene-file record for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
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

impl SceneRecord {
    pub fn to_model(&self) -> Result<AstigmaticLensModel> {
        AstigmaticLensModel::new(self.px, self.py, self.pz1, self.pz2, self.theta1, self.theta2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLine {
    pub anchor: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl FocalLine {
    /// Shortest distance between this line and a ray.
    pub fn distance_to_ray(&self, ray: &Ray4D, d: f64) -> f64 {
        line_line_distance(&self.anchor, &self.direction, &ray.origin(), &ray.direction(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLines {
    pub lines: [FocalLine; 2],
    pub interval: (Point3<f64>, Point3<f64>),
}

impl FocalLines {
    pub fn interval_length(&self) -> f64 {
        (self.interval.1 - self.interval.0).norm()
    }
}

fn line_line_distance(p1: &Point3<f64>, d1: &Vector3<f64>, p2: &Point3<f64>, d2: &Vector3<f64>) -> f64 {
    let w = p2 - p1;
    let n = d1.cross(d2);
    let nn = n.norm();
    if nn < 1e-15 * d1.norm() * d2.norm() {
        // parallel: distance from p2 to the first line
        return w.cross(d1).norm() / d1.norm();
    }
    w.dot(&n).abs() / nn
}

/// Observations of one feature: rays with the discrete samples they came
/// from, at most one per view.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub id: u64,
    rays: Vec<Ray4D>,
    samples: Vec<DiscreteSample>,
}

impl ObservationSet {
    pub fn new(id: u64, rays: Vec<Ray4D>, samples: Vec<DiscreteSample>) -> Result<Self> {
        if rays.is_empty() {
            return Err(Error::InvalidObservations("no observations".into()));
        }
        if rays.len() != samples.len() {
            return Err(Error::InvalidObservations("rays and samples differ in length".into()));
        }
        if let Some(r) = rays.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidObservations(format!("non-finite ray {r:?}")));
        }
        let mut seen = HashSet::new();
        for n in &samples {
            if !seen.insert(n.view()) {
                return Err(Error::InvalidObservations(format!("duplicate view ({}, {})", n.i, n.j)));
            }
        }
        Ok(ObservationSet { id, rays, samples })
    }

    pub fn rays(&self) -> &[Ray4D] {
        &self.rays
    }

    pub fn samples(&self) -> &[DiscreteSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Subset keeping only the entries where `keep` is true.
    pub fn filtered(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let (rays, samples) = self
            .rays
            .iter()
            .zip(&self.samples)
            .enumerate()
            .filter(|(n, _)| keep(*n))
            .map(|(_, (r, s))| (*r, *s))
            .unzip();
        Self::new(self.id, rays, samples)
    }
}

/// Synthesize one observation per view of `intr` for model `m`.
///
/// Each view's pixel `(k, l)` is solved so that the decoded ray satisfies
/// the model exactly; Gaussian noise of standard deviation `noise_sigma`
/// (meters) is then added to `u` and `v`. Samples record the noiseless
/// pixel location.
pub fn synth_observations(
    m: &AstigmaticLensModel,
    intr: &LfIntrinsics,
    noise_sigma: f64,
    seed: u64,
    id: u64,
) -> Result<ObservationSet> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidModel(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let d = intr.plane_separation();
    let h = m.slope_matrix(d)?;
    let x = m.offset(d)?;
    let mm = intr.matrix();
    // (s, t, u, v) is affine in (k, l) for a fixed view
    let b_st = Matrix2::new(mm[(0, 2)], mm[(0, 3)], mm[(1, 2)], mm[(1, 3)]);
    let b_uv = Matrix2::new(mm[(2, 2)], mm[(2, 3)], mm[(3, 2)], mm[(3, 3)]);
    let solve = (b_uv - h * b_st).try_inverse().ok_or(Error::DegenerateGeometry)?;

    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = intr.dims();
    let mut rays = Vec::with_capacity(dims.n_views());
    let mut samples = Vec::with_capacity(dims.n_views());
    for (i, j) in dims.views() {
        let base = intr.decode_continuous(i as f64, j as f64, 0.0, 0.0);
        let resid = Vector2::new(base.u, base.v) - h * Vector2::new(base.s, base.t) - x;
        let kl = -(solve * resid);
        let mut ray = intr.decode_continuous(i as f64, j as f64, kl.x, kl.y);
        if noise_sigma > 0.0 {
            ray.u += normal.sample(&mut rng);
            ray.v += normal.sample(&mut rng);
        }
        rays.push(ray);
        samples.push(DiscreteSample::new(i, j, kl.x, kl.y));
    }
    ObservationSet::new(id, rays, samples)
}

/// Per-feature seed derived from a run seed, so features in a scene get
/// independent noise streams.
pub fn feature_seed(seed: u64, feature: u64) -> u64 {
    // splitmix64 step
    let mut z = seed ^ feature.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws random orthogonal-axes models.
#[derive(Debug, Clone, Copy)]
pub struct ModelSampler {
    pub depth_min: f64,
    pub depth_max: f64,
    /// Offsets are uniform in `[-offset, offset]`.
    pub offset: f64,
}

impl Default for ModelSampler {
    fn default() -> Self {
        ModelSampler { depth_min: 0.2, depth_max: 2.0, offset: 0.05 }
    }
}

impl ModelSampler {
    pub fn toric<R: Rng>(&self, rng: &mut R) -> AstigmaticLensModel {
        let pz1 = rng.random_range(self.depth_min..=self.depth_max);
        let pz2 = rng.random_range(self.depth_min..=self.depth_max);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let px = rng.random_range(-self.offset..=self.offset);
        let py = rng.random_range(-self.offset..=self.offset);
        AstigmaticLensModel::toric(px, py, pz1, pz2, theta).expect("sampled model is valid")
    }

    pub fn lambertian<R: Rng>(&self, rng: &mut R) -> AstigmaticLensModel {
        let pz = rng.random_range(self.depth_min..=self.depth_max);
        let px = rng.random_range(-self.offset..=self.offset);
        let py = rng.random_range(-self.offset..=self.offset);
        AstigmaticLensModel::lambertian(px, py, pz).expect("sampled model is valid")
    }
}
