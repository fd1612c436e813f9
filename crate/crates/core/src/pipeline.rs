//! Keypoint ingestion, cross-view matching and batch extraction.
//!
//! 2D keypoints come from any external detector, one text file per
//! sub-image named `view_<i>_<j>.txt`:
//!
//! ```text
//! N d
//! k l scale orientation d_1 ... d_d
//! ...
//! ```
//!
//! Keypoints of the reference (central) view are matched into every other
//! view by descriptor distance, giving one track per reference keypoint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimator::{extract_rlff, Extraction, Rejection};
use crate::geometry::{DiscreteSample, GridDims, LfIntrinsics};
use crate::oracle::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub view: (usize, usize),
    pub k: f64,
    pub l: f64,
    pub scale: f64,
    pub orientation: f64,
    pub descriptor: Vec<f64>,
}

impl Keypoint {
    pub fn sample(&self) -> DiscreteSample {
        DiscreteSample::new(self.view.0, self.view.1, self.k, self.l)
    }
}

/// Keypoints grouped by view, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PerViewKeypoints {
    dims: GridDims,
    descriptor_len: Option<usize>,
    views: Vec<Vec<Keypoint>>,
}

impl PerViewKeypoints {
    pub fn empty(dims: GridDims) -> Self {
        PerViewKeypoints { dims, descriptor_len: None, views: vec![Vec::new(); dims.n_views()] }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn descriptor_len(&self) -> Option<usize> {
        self.descriptor_len
    }

    pub fn view(&self, i: usize, j: usize) -> &[Keypoint] {
        &self.views[i * self.dims.nj + j]
    }

    pub fn total(&self) -> usize {
        self.views.iter().map(Vec::len).sum()
    }

    /// Add keypoints to a view. All descriptors in the set must share one
    /// length.
    pub fn insert(&mut self, i: usize, j: usize, kps: Vec<Keypoint>) -> Result<()> {
        if !self.dims.contains_view(i, j) {
            return Err(Error::ViewOutOfBounds { i, j, ni: self.dims.ni, nj: self.dims.nj });
        }
        for kp in &kps {
            match self.descriptor_len {
                None => self.descriptor_len = Some(kp.descriptor.len()),
                Some(n) if n != kp.descriptor.len() => {
                    return Err(Error::Format(format!(
                        "descriptor length {} in view ({i}, {j}) differs from {n}",
                        kp.descriptor.len()
                    )))
                }
                _ => {}
            }
        }
        self.views[i * self.dims.nj + j].extend(kps);
        Ok(())
    }
}

/// Unit-normalize a descriptor, optionally applying the square-root
/// (RootSIFT) transform first: L1-normalize, then take element-wise square
/// roots.
pub fn normalize_descriptor(desc: &mut [f64], root: bool) -> std::result::Result<(), String> {
    if root {
        let l1: f64 = desc.iter().map(|x| x.abs()).sum();
        if l1 == 0.0 {
            return Err("zero descriptor".into());
        }
        for x in desc.iter_mut() {
            *x = x.signum() * (x.abs() / l1).sqrt();
        }
    }
    let l2 = desc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 || !l2.is_finite() {
        return Err("descriptor cannot be normalized".into());
    }
    for x in desc.iter_mut() {
        *x /= l2;
    }
    Ok(())
}

/// Parse one keypoint file. An empty file holds no keypoints.
pub fn parse_keypoint_text(text: &str, path: &Path, view: (usize, usize), root: bool) -> Result<Vec<Keypoint>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(Error::parse(path, hline + 1, "expected header `N d`"));
    }
    let count: usize = head[0].parse().map_err(|_| Error::parse(path, hline + 1, "bad keypoint count"))?;
    let dlen: usize = head[1].parse().map_err(|_| Error::parse(path, hline + 1, "bad descriptor length"))?;
    let mut out = Vec::with_capacity(count);
    for (n, line) in lines {
        let lineno = n + 1;
        if out.len() == count {
            return Err(Error::parse(path, lineno, format!("more than {count} keypoints")));
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if vals.len() != 4 + dlen {
            return Err(Error::parse(path, lineno, format!("expected {} values, got {}", 4 + dlen, vals.len())));
        }
        if let Some(x) = vals.iter().find(|x| !x.is_finite()) {
            return Err(Error::parse(path, lineno, format!("non-finite value {x}")));
        }
        let mut descriptor = vals[4..].to_vec();
        normalize_descriptor(&mut descriptor, root).map_err(|m| Error::parse(path, lineno, m))?;
        out.push(Keypoint { view, k: vals[0], l: vals[1], scale: vals[2], orientation: vals[3], descriptor });
    }
    if out.len() != count {
        return Err(Error::parse(path, text.lines().count(), format!("expected {count} keypoints, got {}", out.len())));
    }
    Ok(out)
}

fn parse_view_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("view_")?.strip_suffix(".txt")?;
    let (i, j) = rest.split_once('_')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// Read every `view_<i>_<j>.txt` in `dir`. Views without a file are empty.
pub fn ingest_keypoints(dir: &Path, dims: GridDims, root: bool) -> Result<PerViewKeypoints> {
    let mut files: Vec<(usize, usize, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some((i, j)) = name.to_str().and_then(parse_view_name) {
            if !dims.contains_view(i, j) {
                return Err(Error::ViewOutOfBounds { i, j, ni: dims.ni, nj: dims.nj });
            }
            files.push((i, j, entry.path()));
        }
    }
    files.sort();
    let mut out = PerViewKeypoints::empty(dims);
    for (i, j, path) in files {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kps = parse_keypoint_text(&text, &path, (i, j), root)?;
        out.insert(i, j, kps)?;
    }
    Ok(out)
}

/// Write keypoints in the per-view text format (used to build fixtures).
pub fn format_keypoint_text(kps: &[Keypoint], descriptor_len: usize) -> String {
    use std::fmt::Write;
    let mut s = format!("{} {}\n", kps.len(), descriptor_len);
    for kp in kps {
        let _ = write!(s, "{} {} {} {}", kp.k, kp.l, kp.scale, kp.orientation);
        for x in &kp.descriptor {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Lowe ratio: best distance must be below `ratio` times the second best.
    pub ratio: f64,
    pub abs_threshold: Option<f64>,
    pub min_views: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { ratio: 0.8, abs_threshold: None, min_views: 5 }
    }
}

/// Keypoints of one feature across views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub id: u64,
    /// The reference keypoint is always `keypoints[reference]`.
    pub reference: usize,
    pub keypoints: Vec<Keypoint>,
}

impl FeatureTrack {
    pub fn reference_keypoint(&self) -> &Keypoint {
        &self.keypoints[self.reference]
    }
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The view tracks are anchored on: the central view if it has keypoints,
/// otherwise the nearest non-empty view.
pub fn reference_view(kps: &PerViewKeypoints) -> Option<(usize, usize)> {
    let dims = kps.dims();
    let (ci, cj) = dims.central_view();
    dims.views().filter(|&(i, j)| !kps.view(i, j).is_empty()).min_by_key(|&(i, j)| {
        let di = i.abs_diff(ci);
        let dj = j.abs_diff(cj);
        (di * di + dj * dj, i, j)
    })
}

/// Star-topology matching from the reference view.
///
/// For every other view each reference keypoint takes its nearest
/// descriptor if it passes the absolute threshold and the ratio test. A
/// keypoint claimed by several reference keypoints goes to the strictly
/// closest one; on a tie nobody gets it. Tracks with fewer than
/// `min_views` keypoints are dropped.
pub fn match_across_views(kps: &PerViewKeypoints, cfg: &MatchConfig) -> Vec<FeatureTrack> {
    let Some((ri, rj)) = reference_view(kps) else {
        return Vec::new();
    };
    let refs = kps.view(ri, rj);
    let others: Vec<(usize, usize)> = kps.dims().views().filter(|&v| v != (ri, rj)).collect();

    // per view: reference index -> matched keypoint index
    let matched: Vec<HashMap<usize, usize>> = others
        .par_iter()
        .map(|&(i, j)| {
            let cands = kps.view(i, j);
            let mut claims: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
            for (r, rk) in refs.iter().enumerate() {
                let mut best = (usize::MAX, f64::INFINITY);
                let mut second = f64::INFINITY;
                for (c, ck) in cands.iter().enumerate() {
                    let d = descriptor_distance(&rk.descriptor, &ck.descriptor);
                    if d < best.1 {
                        second = best.1;
                        best = (c, d);
                    } else if d < second {
                        second = d;
                    }
                }
                if best.0 == usize::MAX {
                    continue;
                }
                if cfg.abs_threshold.is_some_and(|t| best.1 >= t) {
                    continue;
                }
                if second.is_finite() && best.1 >= cfg.ratio * second {
                    continue;
                }
                claims.entry(best.0).or_default().push((r, best.1));
            }
            let mut out = HashMap::new();
            for (c, mut who) in claims {
                who.sort_by(|a, b| a.1.total_cmp(&b.1));
                if who.len() == 1 || who[0].1 < who[1].1 {
                    out.insert(who[0].0, c);
                }
            }
            out
        })
        .collect();

    let mut tracks = Vec::new();
    for (r, rk) in refs.iter().enumerate() {
        let mut keypoints = Vec::new();
        let mut reference = 0;
        let mut placed = false;
        for &(i, j) in kps.dims().views().collect::<Vec<_>>().iter() {
            if (i, j) == (ri, rj) {
                reference = keypoints.len();
                keypoints.push(rk.clone());
                placed = true;
                continue;
            }
            let vi = others.iter().position(|&v| v == (i, j)).expect("view listed");
            if let Some(&c) = matched[vi].get(&r) {
                keypoints.push(kps.view(i, j)[c].clone());
            }
        }
        debug_assert!(placed);
        if keypoints.len() >= cfg.min_views {
            tracks.push(FeatureTrack { id: r as u64, reference, keypoints });
        }
    }
    tracks
}

/// Decode one track into an observation set.
pub fn track_to_observations(track: &FeatureTrack, intr: &LfIntrinsics) -> Result<ObservationSet> {
    let samples: Vec<DiscreteSample> = track.keypoints.iter().map(Keypoint::sample).collect();
    let rays = samples.iter().map(|n| intr.decode(n)).collect::<Result<Vec<_>>>()?;
    ObservationSet::new(track.id, rays, samples)
}

pub fn tracks_to_observations(tracks: &[FeatureTrack], intr: &LfIntrinsics) -> Result<Vec<ObservationSet>> {
    tracks.iter().map(|t| track_to_observations(t, intr)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFeature {
    pub extraction: Extraction,
    pub track: FeatureTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub features: Vec<PipelineFeature>,
    pub rejected: Vec<(u64, Rejection)>,
}

/// Match, decode and extract every track. Failures are recorded per track
/// and never abort the run. Output is ordered by track id.
pub fn run_pipeline(kps: &PerViewKeypoints, intr: &LfIntrinsics, cfg: &RunConfig) -> PipelineOutput {
    let tracks = match_across_views(kps, &cfg.matching());
    let ecfg = cfg.extract();
    let d = intr.plane_separation();
    let results: Vec<(FeatureTrack, std::result::Result<Extraction, Rejection>)> = tracks
        .into_par_iter()
        .map(|track| {
            let res = track_to_observations(&track, intr)
                .map_err(|e| Rejection::Geometry(e.to_string()))
                .and_then(|obs| extract_rlff(&obs, d, &ecfg));
            (track, res)
        })
        .collect();
    let mut out = PipelineOutput { features: Vec::new(), rejected: Vec::new() };
    for (track, res) in results {
        match res {
            Ok(extraction) => out.features.push(PipelineFeature { extraction, track }),
            Err(why) => {
                log::info!("track {} rejected: {why}", track.id);
                out.rejected.push((track.id, why));
            }
        }
    }
    out.features.sort_by_key(|f| f.track.id);
    out.rejected.sort_by_key(|r| r.0);
    out
}
