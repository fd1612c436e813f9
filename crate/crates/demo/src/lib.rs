//! Browser demo: synthesize one astigmatic feature, fit it, and project its
//! characteristic points into a virtual stereo pair.
//!
//! Each exported function takes plain numbers and returns a JSON string so
//! the page needs no generated glue beyond `wasm-bindgen`'s.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rlff_core::estimator::{extract_rlff, interval_of_sturm, ExtractConfig};
use rlff_core::export::project_stereo;
use rlff_core::oracle::{synth_observations, AstigmaticLensModel};
use rlff_core::LfIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub px: f64,
    pub py: f64,
    pub pz1: f64,
    pub pz2: f64,
    pub theta_deg: f64,
}

impl SceneParams {
    fn model(&self) -> Result<AstigmaticLensModel, String> {
        AstigmaticLensModel::toric(self.px, self.py, self.pz1, self.pz2, self.theta_deg.to_radians())
            .map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct ViewPoint {
    i: usize,
    j: usize,
    s: f64,
    t: f64,
    u: f64,
    v: f64,
}

#[derive(Serialize)]
struct FitReport {
    accepted: bool,
    rejection: Option<String>,
    estimate: Option<rlff_core::Rlff>,
    class: Option<rlff_core::FeatureClass>,
    rms_residual: Option<f64>,
    asymmetry: Option<f64>,
    views: Vec<ViewPoint>,
}

/// Synthesize the feature on the reference camera with `noise_px` pixels
/// of noise and fit it.
pub fn simulate_and_fit(p: SceneParams, noise_px: f64, seed: u64) -> Result<String, String> {
    let intr = LfIntrinsics::reference();
    let obs = synth_observations(&p.model()?, &intr, noise_px.max(0.0) * intr.pixel_pitch(), seed, 0)
        .map_err(|e| e.to_string())?;
    let views = obs
        .rays()
        .iter()
        .zip(obs.samples())
        .map(|(r, n)| ViewPoint { i: n.i, j: n.j, s: r.s, t: r.t, u: r.u, v: r.v })
        .collect();
    let report = match extract_rlff(&obs, intr.plane_separation(), &ExtractConfig::default()) {
        Ok(e) => FitReport {
            accepted: true,
            rejection: None,
            estimate: Some(e.rlff),
            class: Some(e.class),
            rms_residual: Some(e.diagnostics.rms_residual),
            asymmetry: Some(e.diagnostics.asymmetry),
            views,
        },
        Err(why) => FitReport {
            accepted: false,
            rejection: Some(why.to_string()),
            estimate: None,
            class: None,
            rms_residual: None,
            asymmetry: None,
            views,
        },
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct StereoPoint {
    tag: rlff_core::export::PointTag,
    z: f64,
    left: [f64; 2],
    right: [f64; 2],
    disparity: f64,
}

/// Project the noiseless characteristic points into the stereo pair at
/// `baseline` meters (the grid width when not positive).
pub fn stereo_points(p: SceneParams, baseline: f64) -> Result<String, String> {
    let intr = LfIntrinsics::reference();
    let m = p.model()?;
    let (lo, hi) = if m.pz1 <= m.pz2 { (m.pz1, m.pz2) } else { (m.pz2, m.pz1) };
    let rlff = rlff_core::Rlff { px: m.px, py: m.py, pz1: lo, pz2: hi, theta1: 0.0, theta2: 0.0 };
    let cp = interval_of_sturm(&rlff, rlff_core::calibrate::DEFAULT_LAMBERTIAN_EPS);
    let b = if baseline > 0.0 { baseline } else { intr.view_extent_s() };
    let (l, r) = project_stereo(&cp, &intr, b).map_err(|e| e.to_string())?;
    let pts: Vec<StereoPoint> = l
        .iter()
        .zip(&r)
        .map(|(a, b)| StereoPoint {
            tag: a.tag,
            z: a.point.z,
            left: a.pixel,
            right: b.pixel,
            disparity: a.pixel[0] - b.pixel[0],
        })
        .collect();
    serde_json::to_string(&pts).map_err(|e| e.to_string())
}

/// Rotation-maximized R^2 of the views `(i, j)` given as a flat list.
pub fn diversity_of_views(flat: &[u32]) -> Result<f64, String> {
    let intr = LfIntrinsics::reference();
    if !flat.len().is_multiple_of(2) {
        return Err("view list must hold (i, j) pairs".into());
    }
    let dims = intr.dims();
    let pts = flat
        .chunks(2)
        .map(|c| {
            let (i, j) = (c[0] as usize, c[1] as usize);
            if dims.contains_view(i, j) {
                Ok(intr.view_position(i, j))
            } else {
                Err(format!("view ({i}, {j}) outside the grid"))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    rlff_core::view_diversity(&pts).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = simulateAndFit)]
pub fn simulate_and_fit_js(
    px: f64,
    py: f64,
    pz1: f64,
    pz2: f64,
    theta_deg: f64,
    noise_px: f64,
    seed: u32,
) -> Result<String, JsError> {
    simulate_and_fit(SceneParams { px, py, pz1, pz2, theta_deg }, noise_px, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = stereoPoints)]
pub fn stereo_points_js(px: f64, py: f64, pz1: f64, pz2: f64, baseline: f64) -> Result<String, JsError> {
    stereo_points(SceneParams { px, py, pz1, pz2, theta_deg: 0.0 }, baseline).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = viewDiversity)]
pub fn view_diversity_js(views: &[u32]) -> Result<f64, JsError> {
    diversity_of_views(views).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SceneParams {
        SceneParams { px: 0.01, py: -0.01, pz1: 0.4, pz2: 0.9, theta_deg: 30.0 }
    }

    #[test]
    fn fit_report_recovers_depths() {
        let v: serde_json::Value = serde_json::from_str(&simulate_and_fit(params(), 0.0, 1).unwrap()).unwrap();
        assert_eq!(v["accepted"], true);
        assert_eq!(v["class"], "refracted");
        assert!((v["estimate"]["Pz1"].as_f64().unwrap() - 0.4).abs() < 1e-9);
        assert_eq!(v["views"].as_array().unwrap().len(), 169);
    }

    #[test]
    fn invalid_depth_is_an_error() {
        assert!(simulate_and_fit(SceneParams { pz1: -1.0, ..params() }, 0.0, 1).is_err());
    }

    #[test]
    fn stereo_disparity_halves_with_depth() {
        let p = SceneParams { px: 0.0, py: 0.0, pz1: 0.5, pz2: 1.0, theta_deg: 0.0 };
        let v: serde_json::Value = serde_json::from_str(&stereo_points(p, 0.0).unwrap()).unwrap();
        let d0 = v[0]["disparity"].as_f64().unwrap();
        let d1 = v[1]["disparity"].as_f64().unwrap();
        assert!((d0 / d1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_of_row_and_grid() {
        let row: Vec<u32> = (0..13).flat_map(|i| [i, 6]).collect();
        assert!((diversity_of_views(&row).unwrap() - 1.0).abs() < 1e-12);
        let grid: Vec<u32> = (0..13).flat_map(|i| (0..13).flat_map(move |j| [i, j])).collect();
        assert!(diversity_of_views(&grid).unwrap() < 0.05);
        assert!(diversity_of_views(&[0, 20, 1, 1, 2, 2]).is_err());
        assert!(diversity_of_views(&[1]).is_err());
    }
}
