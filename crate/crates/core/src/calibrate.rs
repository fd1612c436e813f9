//! Monte-Carlo calibration of the rejection thresholds.
//!
//! The defaults below were produced by [`calibrate`] on the reference
//! intrinsics at 0.1 pixel of observation noise with 2000 trials and seed
//! 2021; the run is stored in `fixtures/calibration.json` and re-checked by
//! the tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{decompose, fit_linear_system, recover_offsets, symmetrize, asymmetry_residual, FitMode};
use crate::geometry::LfIntrinsics;
use crate::oracle::{feature_seed, synth_observations, ModelSampler};

/// View sets with a larger rotation-maximized R^2 are too close to a line.
pub const R2_MAX: f64 = 0.65;

/// Mean rms fit residual at the calibration noise level, meters.
pub const RMS_NOISE_FLOOR: f64 = 2.800638511508512e-5;
/// Mean `|H_hat - H_R|_F` at the calibration noise level.
pub const ASYMMETRY_NOISE_FLOOR: f64 = 3.3084871003189446e-4;

pub const DEFAULT_MAX_RESIDUAL: f64 = 3.0 * RMS_NOISE_FLOOR;
pub const DEFAULT_MAX_ASYMMETRY: f64 = 3.0 * ASYMMETRY_NOISE_FLOOR;
pub const DEFAULT_LAMBERTIAN_EPS: f64 = 0.05;

pub const CALIBRATION_SIGMA_PIXELS: f64 = 0.1;
pub const CALIBRATION_TRIALS: usize = 2000;
pub const CALIBRATION_SEED: u64 = 2021;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma_pixels: f64,
    pub noise_sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub rms_noise_floor: f64,
    pub asymmetry_noise_floor: f64,
    pub max_residual: f64,
    pub max_asymmetry: f64,
    /// 95th percentile of the relative depth gap of Lambertian features.
    pub lambertian_gap_p95: f64,
}

/// Run the threshold calibration for `intr`.
pub fn calibrate(intr: &LfIntrinsics, sigma_pixels: f64, trials: usize, seed: u64) -> Calibration {
    let d = intr.plane_separation();
    let sigma = sigma_pixels * intr.pixel_pitch();
    let sampler = ModelSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rms_sum, mut asym_sum) = (0.0, 0.0);
    let mut gaps = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let toric = sampler.toric(&mut rng);
        let obs = synth_observations(&toric, intr, sigma, feature_seed(seed, 2 * trial), trial)
            .expect("sampled model synthesizes");
        let fit = fit_linear_system(obs.rays(), FitMode::Unconstrained).expect("full grid fits");
        let h_rec = decompose(&symmetrize(&fit.h_hat), d).expect("depths in front").reconstruct();
        rms_sum += fit.rms_residual;
        asym_sum += asymmetry_residual(&fit.h_hat, &h_rec);

        let lamb = sampler.lambertian(&mut rng);
        let obs = synth_observations(&lamb, intr, sigma, feature_seed(seed, 2 * trial + 1), trial)
            .expect("sampled model synthesizes");
        let fit = fit_linear_system(obs.rays(), FitMode::Unconstrained).expect("full grid fits");
        let dec = decompose(&symmetrize(&fit.h_hat), d).expect("depths in front");
        // offsets are not needed here but must be recoverable
        debug_assert!(recover_offsets(&dec.reconstruct(), &fit.x_hat).is_ok());
        gaps.push((dec.pz2 - dec.pz1) / dec.pz1);
    }
    gaps.sort_by(f64::total_cmp);
    let p95 = gaps[((0.95 * trials as f64).ceil() as usize).saturating_sub(1).min(trials - 1)];
    let rms = rms_sum / trials as f64;
    let asym = asym_sum / trials as f64;
    Calibration {
        sigma_pixels,
        noise_sigma: sigma,
        trials,
        seed,
        rms_noise_floor: rms,
        asymmetry_noise_floor: asym,
        max_residual: 3.0 * rms,
        max_asymmetry: 3.0 * asym,
        lambertian_gap_p95: p95,
    }
}

/// The shipped calibration run.
pub fn reference_calibration() -> Calibration {
    serde_json::from_str(include_str!("../fixtures/calibration.json")).expect("fixture parses")
}
