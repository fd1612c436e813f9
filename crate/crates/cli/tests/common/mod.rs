#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlff_core::oracle::{synth_observations, AstigmaticLensModel};
use rlff_core::pipeline::{format_keypoint_text, Keypoint};
use rlff_core::LfIntrinsics;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rlff"))
}

pub fn rlff(args: &[&str], cwd: &Path) -> Output {
    rlff_env(args, cwd, &[])
}

pub fn rlff_env(args: &[&str], cwd: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).current_dir(cwd).env_remove("RLFF_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Mixed scene: every third feature Lambertian, the rest toric.
pub fn mixed_scene(n: usize, seed: u64) -> Vec<(u64, AstigmaticLensModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| {
            let px = rng.random_range(-0.04..0.04);
            let py = rng.random_range(-0.04..0.04);
            let z1 = rng.random_range(0.3..0.8);
            let m = if id % 3 == 0 {
                AstigmaticLensModel::lambertian(px, py, z1).unwrap()
            } else {
                let z2 = z1 * rng.random_range(1.3..2.5);
                AstigmaticLensModel::toric(px, py, z1, z2, rng.random_range(0.0..std::f64::consts::PI)).unwrap()
            };
            (id, m)
        })
        .collect()
}

pub fn write_scene(path: &Path, scene: &[(u64, AstigmaticLensModel)]) {
    std::fs::write(path, rlff_core::io::format_scene(scene).unwrap()).unwrap();
}

/// Per-view keypoint files for `scene`: each feature gets a random unit
/// descriptor shared by all of its views.
pub fn write_keypoint_dir(dir: &Path, scene: &[(u64, AstigmaticLensModel)], intr: &LfIntrinsics, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = intr.dims();
    let mut per_view: Vec<Vec<Keypoint>> = vec![Vec::new(); dims.n_views()];
    for (id, m) in scene {
        let mut desc: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
        let n = desc.iter().map(|x| x * x).sum::<f64>().sqrt();
        desc.iter_mut().for_each(|x| *x /= n);
        let obs = synth_observations(m, intr, 0.0, 0, *id).unwrap();
        for s in obs.samples() {
            per_view[s.i * dims.nj + s.j].push(Keypoint {
                view: (s.i, s.j),
                k: s.k,
                l: s.l,
                scale: 2.0,
                orientation: 0.5,
                descriptor: desc.clone(),
            });
        }
    }
    for (i, j) in dims.views() {
        let text = format_keypoint_text(&per_view[i * dims.nj + j], 32);
        std::fs::write(dir.join(format!("view_{i}_{j}.txt")), text).unwrap();
    }
}
