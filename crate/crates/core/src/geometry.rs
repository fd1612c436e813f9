//! Two-plane light-field parameterization.
//!
//! A ray is stored as `[s, t, u, v]`: `(s, t)` is where it crosses the
//! reference plane at `z = 0` (camera side) and `(u, v)` is its crossing of
//! the plane at `z = D`, expressed relative to `(s, t)`. The ray therefore
//! passes through `(s, t, 0)` and `(s + u, t + v, D)`. Depth `z` is positive
//! toward the scene and everything is in meters.

use std::path::Path;

use nalgebra::{Matrix5, Point3, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plane separation used when none is given.
pub const DEFAULT_PLANE_SEPARATION: f64 = 0.1;

/// A continuous light-field sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray4D {
    pub s: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl Ray4D {
    pub fn new(s: f64, t: f64, u: f64, v: f64) -> Self {
        Ray4D { s, t, u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.t.is_finite() && self.u.is_finite() && self.v.is_finite()
    }

    /// Point where the ray crosses the `z = 0` plane.
    pub fn origin(&self) -> Point3<f64> {
        Point3::new(self.s, self.t, 0.0)
    }

    /// Direction of the ray, scaled so that it advances `D` in z.
    pub fn direction(&self, d: f64) -> Vector3<f64> {
        Vector3::new(self.u, self.v, d)
    }

    /// Lateral position of the ray at depth `z`.
    pub fn at_depth(&self, z: f64, d: f64) -> Point3<f64> {
        let f = z / d;
        Point3::new(self.s + f * self.u, self.t + f * self.v, z)
    }
}

/// Discrete light-field coordinates. `i, j` pick the sub-image, `k, l` are
/// (possibly sub-pixel) pixel coordinates inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSample {
    pub i: usize,
    pub j: usize,
    pub k: f64,
    pub l: f64,
}

impl DiscreteSample {
    pub fn new(i: usize, j: usize, k: f64, l: f64) -> Self {
        DiscreteSample { i, j, k, l }
    }

    pub fn view(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
    pub nl: usize,
}

impl GridDims {
    pub fn new(ni: usize, nj: usize, nk: usize, nl: usize) -> Self {
        GridDims { ni, nj, nk, nl }
    }

    pub fn n_views(&self) -> usize {
        self.ni * self.nj
    }

    /// Central sub-image (rounded down for even grids).
    pub fn central_view(&self) -> (usize, usize) {
        ((self.ni.saturating_sub(1)) / 2, (self.nj.saturating_sub(1)) / 2)
    }

    pub fn contains_view(&self, i: usize, j: usize) -> bool {
        i < self.ni && j < self.nj
    }

    pub fn contains(&self, n: &DiscreteSample) -> bool {
        self.contains_view(n.i, n.j)
            && n.k >= 0.0
            && n.k < self.nk as f64
            && n.l >= 0.0
            && n.l < self.nl as f64
    }

    /// All views in row-major `(i, j)` order.
    pub fn views(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ni).flat_map(move |i| (0..self.nj).map(move |j| (i, j)))
    }
}

/// Linear intrinsic model mapping `[i, j, k, l, 1]` to `[s, t, u, v, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LfIntrinsics {
    m: Matrix5<f64>,
    m_inv: Matrix5<f64>,
    d: f64,
    dims: GridDims,
}

/// On-disk form of [`LfIntrinsics`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntrinsicsFile {
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Ni")]
    pub ni: usize,
    #[serde(rename = "Nj")]
    pub nj: usize,
    #[serde(rename = "Nk")]
    pub nk: usize,
    #[serde(rename = "Nl")]
    pub nl: usize,
}

impl LfIntrinsics {
    pub fn new(m: Matrix5<f64>, d: f64, dims: GridDims) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!("plane separation must be positive, got {d}")));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite matrix entry".into()));
        }
        let last = m.row(4);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 0.0 || last[4] != 1.0 {
            return Err(Error::InvalidIntrinsics("last row must be [0, 0, 0, 0, 1]".into()));
        }
        if dims.ni == 0 || dims.nj == 0 || dims.nk == 0 || dims.nl == 0 {
            return Err(Error::InvalidIntrinsics("grid dimensions must be non-zero".into()));
        }
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidIntrinsics("matrix is singular".into()))?;
        Ok(LfIntrinsics { m, m_inv, d, dims })
    }

    /// Diagonal intrinsics centred on the grid: view pitch `view_pitch`
    /// between adjacent sub-images and `pixel_pitch` between pixels, both in
    /// meters on their respective planes.
    pub fn centered(dims: GridDims, view_pitch: f64, pixel_pitch: f64, d: f64) -> Result<Self> {
        let ci = (dims.ni as f64 - 1.0) / 2.0;
        let cj = (dims.nj as f64 - 1.0) / 2.0;
        let ck = (dims.nk as f64 - 1.0) / 2.0;
        let cl = (dims.nl as f64 - 1.0) / 2.0;
        #[rustfmt::skip]
        let m = Matrix5::new(
            view_pitch, 0.0, 0.0, 0.0, -view_pitch * ci,
            0.0, view_pitch, 0.0, 0.0, -view_pitch * cj,
            0.0, 0.0, pixel_pitch, 0.0, -pixel_pitch * ck,
            0.0, 0.0, 0.0, pixel_pitch, -pixel_pitch * cl,
            0.0, 0.0, 0.0, 0.0, 1.0,
        );
        Self::new(m, d, dims)
    }

    /// A 13x13-view, 625x434-pixel camera with 1 mm view pitch and 2 mrad
    /// pixels at `D = 0.1 m`. Used as the default throughout the tools.
    pub fn reference() -> Self {
        Self::centered(GridDims::new(13, 13, 625, 434), 1e-3, 2e-4, DEFAULT_PLANE_SEPARATION)
            .expect("reference intrinsics are valid")
    }

    /// `s = i, t = j, u = k, v = l`.
    pub fn identity(dims: GridDims, d: f64) -> Result<Self> {
        Self::new(Matrix5::identity(), d, dims)
    }

    pub fn matrix(&self) -> &Matrix5<f64> {
        &self.m
    }

    pub fn plane_separation(&self) -> f64 {
        self.d
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Mean `u`/`v` spacing between adjacent pixels.
    pub fn pixel_pitch(&self) -> f64 {
        0.5 * (self.m[(2, 2)].abs() + self.m[(3, 3)].abs())
    }

    /// Convert a discrete sample to a ray.
    pub fn decode(&self, n: &DiscreteSample) -> Result<Ray4D> {
        if !self.dims.contains(n) {
            return Err(Error::OutOfBounds {
                i: n.i,
                j: n.j,
                k: n.k,
                l: n.l,
                ni: self.dims.ni,
                nj: self.dims.nj,
                nk: self.dims.nk,
                nl: self.dims.nl,
            });
        }
        Ok(self.decode_continuous(n.i as f64, n.j as f64, n.k, n.l))
    }

    /// Apply the linear map without bounds checks.
    pub fn decode_continuous(&self, i: f64, j: f64, k: f64, l: f64) -> Ray4D {
        let r = self.m * Vector5::new(i, j, k, l, 1.0);
        Ray4D::new(r[0], r[1], r[2], r[3])
    }

    /// Inverse map: continuous `[i, j, k, l]` for a ray.
    pub fn encode(&self, ray: &Ray4D) -> [f64; 4] {
        let n = self.m_inv * Vector5::new(ray.s, ray.t, ray.u, ray.v, 1.0);
        [n[0], n[1], n[2], n[3]]
    }

    /// `(s, t)` of a view, taken at the centre pixel of its sub-image.
    pub fn view_position(&self, i: usize, j: usize) -> (f64, f64) {
        let ck = (self.dims.nk as f64 - 1.0) / 2.0;
        let cl = (self.dims.nl as f64 - 1.0) / 2.0;
        let r = self.decode_continuous(i as f64, j as f64, ck, cl);
        (r.s, r.t)
    }

    /// Pixel `(k, l)` at which view `(i, j)` sees the relative direction
    /// `(u, v)`. Solves the `k, l` columns of the map with `i, j` held fixed.
    pub fn pixel_for_direction(&self, i: usize, j: usize, u: f64, v: f64) -> Result<(f64, f64)> {
        let (i, j) = (i as f64, j as f64);
        let a = nalgebra::Matrix2::new(self.m[(2, 2)], self.m[(2, 3)], self.m[(3, 2)], self.m[(3, 3)]);
        let rhs = nalgebra::Vector2::new(
            u - self.m[(2, 0)] * i - self.m[(2, 1)] * j - self.m[(2, 4)],
            v - self.m[(3, 0)] * i - self.m[(3, 1)] * j - self.m[(3, 4)],
        );
        let kl = a
            .try_inverse()
            .ok_or_else(|| Error::InvalidIntrinsics("pixel block of matrix is singular".into()))?
            * rhs;
        Ok((kl[0], kl[1]))
    }

    /// Full `s` extent spanned by the view grid.
    pub fn view_extent_s(&self) -> f64 {
        let (s0, _) = self.view_position(0, 0);
        let (s1, _) = self.view_position(self.dims.ni - 1, 0);
        (s1 - s0).abs()
    }

    pub fn to_file(&self) -> IntrinsicsFile {
        IntrinsicsFile {
            m: self.m.transpose().iter().copied().collect(),
            d: self.d,
            ni: self.dims.ni,
            nj: self.dims.nj,
            nk: self.dims.nk,
            nl: self.dims.nl,
        }
    }

    pub fn from_file(f: &IntrinsicsFile) -> Result<Self> {
        if f.m.len() != 25 {
            return Err(Error::InvalidIntrinsics(format!("M must have 25 entries, got {}", f.m.len())));
        }
        let m = Matrix5::from_row_slice(&f.m);
        Self::new(m, f.d, GridDims::new(f.ni, f.nj, f.nk, f.nl))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: IntrinsicsFile = serde_json::from_str(text)?;
        Self::from_file(&f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Default for LfIntrinsics {
    fn default() -> Self {
        Self::reference()
    }
}

/// Hyperplane slope `-D / Pz` of a Lambertian point at depth `pz`.
pub fn slope_of_depth(pz: f64, d: f64) -> Result<f64> {
    if pz == 0.0 {
        return Err(Error::SingularDepth);
    }
    Ok(-d / pz)
}

/// Inverse of [`slope_of_depth`].
pub fn depth_of_slope(slope: f64, d: f64) -> Result<f64> {
    if slope == 0.0 {
        return Err(Error::SingularDepth);
    }
    Ok(-d / slope)
}

/// Relative `(u, v)` of the ray from `(s, t)` through the Lambertian point `p`.
pub fn project_lambertian(p: &Point3<f64>, s: f64, t: f64, d: f64) -> Result<(f64, f64)> {
    let slope = slope_of_depth(p.z, d)?;
    Ok((slope * (s - p.x), slope * (t - p.y)))
}
