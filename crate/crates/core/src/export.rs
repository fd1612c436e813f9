//! Export of characteristic points as 2D features for SfM tools.
//!
//! Mono export projects the end points of the interval of Sturm into the
//! central view. Stereo export projects them into two virtual views at
//! `s = -b/2` and `s = +b/2`, which keeps their depth as disparity.
//! Coordinates are written in pixels of the target view.
//!
//! Feature files are plain text: `N d` on the first line, then one
//! `x y scale orientation d_1 ... d_d` line per feature, six decimals.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{CharacteristicPoints, FeatureClass};
use crate::geometry::{project_lambertian, LfIntrinsics, Ray4D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    Mono,
    Stereo,
}

/// How descriptors are assigned to the two points of a refracted feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorStrategy {
    /// Both points share the source descriptor.
    #[default]
    Identical,
    /// The far point's descriptor is `normalize(w * d + offset)` with
    /// `w = scale` on even elements and 1 on odd ones.
    Bias { scale: f64, offset: f64 },
    /// Identical descriptors; the index file tags each row front or back
    /// for an external matcher.
    ExternalMatch,
}

impl DescriptorStrategy {
    pub const DEFAULT_BIAS: DescriptorStrategy = DescriptorStrategy::Bias { scale: 2.0, offset: 0.05 };

    pub fn validate(&self) -> Result<()> {
        if let DescriptorStrategy::Bias { scale, offset } = *self {
            if !(scale.is_finite() && scale != 0.0 && offset.is_finite()) {
                return Err(Error::Config(format!("invalid bias strategy scale={scale} offset={offset}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DescriptorStrategy::Identical => "identical",
            DescriptorStrategy::Bias { .. } => "bias",
            DescriptorStrategy::ExternalMatch => "external_match",
        }
    }

    /// Parse a strategy name; `bias` takes the default scale and offset.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identical" => Ok(DescriptorStrategy::Identical),
            "bias" => Ok(Self::DEFAULT_BIAS),
            "external_match" | "external-match" => Ok(DescriptorStrategy::ExternalMatch),
            other => Err(Error::Config(format!("unknown descriptor strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub mode: ExportMode,
    /// Stereo baseline in meters; defaults to the `s` extent of the grid.
    pub baseline: Option<f64>,
    pub strategy: DescriptorStrategy,
    pub lambertian_eps: f64,
    /// Descriptor length announced by files with no features.
    pub descriptor_len: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            mode: ExportMode::Mono,
            baseline: None,
            strategy: DescriptorStrategy::Identical,
            lambertian_eps: crate::calibrate::DEFAULT_LAMBERTIAN_EPS,
            descriptor_len: 128,
        }
    }
}

/// Which end of the interval a 2D feature came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointTag {
    Single,
    Front,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub tag: PointTag,
    pub point: Point3<f64>,
    pub ray: Ray4D,
    /// `(k, l)` in the target view.
    pub pixel: [f64; 2],
}

fn tagged_points(cp: &CharacteristicPoints) -> Vec<(PointTag, Point3<f64>)> {
    match cp.class {
        FeatureClass::Lambertian => vec![(PointTag::Single, cp.c1)],
        FeatureClass::Refracted => vec![(PointTag::Front, cp.c1), (PointTag::Back, cp.c2)],
    }
}

fn project_into(cp: &CharacteristicPoints, intr: &LfIntrinsics, s: f64, t: f64) -> Vec<ProjectedPoint> {
    let d = intr.plane_separation();
    tagged_points(cp)
        .into_iter()
        .filter_map(|(tag, p)| {
            if p.z.is_nan() || p.z <= 0.0 {
                log::warn!("skipping characteristic point behind camera at z = {}", p.z);
                return None;
            }
            let (u, v) = project_lambertian(&p, s, t, d).ok()?;
            let ray = Ray4D::new(s, t, u, v);
            let n = intr.encode(&ray);
            Some(ProjectedPoint { tag, point: p, ray, pixel: [n[2], n[3]] })
        })
        .collect()
}

/// Project into the central view `(s, t) = (0, 0)`.
pub fn project_mono(cp: &CharacteristicPoints, intr: &LfIntrinsics) -> Vec<ProjectedPoint> {
    project_into(cp, intr, 0.0, 0.0)
}

/// Project into views at `s = -baseline/2` (left) and `s = +baseline/2`
/// (right).
pub fn project_stereo(
    cp: &CharacteristicPoints,
    intr: &LfIntrinsics,
    baseline: f64,
) -> Result<(Vec<ProjectedPoint>, Vec<ProjectedPoint>)> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(Error::Config(format!("stereo baseline must be > 0, got {baseline}")));
    }
    Ok((project_into(cp, intr, -0.5 * baseline, 0.0), project_into(cp, intr, 0.5 * baseline, 0.0)))
}

/// Element-wise bias transform used by [`DescriptorStrategy::Bias`].
pub fn bias_descriptor(desc: &[f64], scale: f64, offset: f64) -> Vec<f64> {
    let mut out: Vec<f64> = desc
        .iter()
        .enumerate()
        .map(|(n, x)| if n % 2 == 0 { scale * x + offset } else { x + offset })
        .collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

/// Descriptors for the emitted points, in [`tagged_points`] order.
pub fn assign_descriptors(
    cp: &CharacteristicPoints,
    descriptor: &[f64],
    strategy: &DescriptorStrategy,
) -> Vec<(PointTag, Vec<f64>)> {
    tagged_points(cp)
        .into_iter()
        .map(|(tag, _)| {
            let d = match (tag, strategy) {
                (PointTag::Back, DescriptorStrategy::Bias { scale, offset }) => {
                    bias_descriptor(descriptor, *scale, *offset)
                }
                _ => descriptor.to_vec(),
            };
            (tag, d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature2D {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub orientation: f64,
    pub descriptor: Vec<f64>,
}

fn fmt6(out: &mut String, x: f64) {
    let start = out.len();
    let _ = write!(out, "{x:.6}");
    if &out[start..] == "-0.000000" {
        out.replace_range(start.., "0.000000");
    }
}

/// Render a feature file. `empty_len` is the descriptor length announced
/// when there are no features.
pub fn format_feature_file(features: &[Feature2D], empty_len: usize) -> Result<String> {
    let dlen = features.first().map_or(empty_len, |f| f.descriptor.len());
    if let Some(f) = features.iter().find(|f| f.descriptor.len() != dlen) {
        return Err(Error::Format(format!("mixed descriptor lengths {} and {dlen}", f.descriptor.len())));
    }
    let mut s = format!("{} {}\n", features.len(), dlen);
    for f in features {
        fmt6(&mut s, f.x);
        for x in [f.y, f.scale, f.orientation].into_iter().chain(f.descriptor.iter().copied()) {
            s.push(' ');
            fmt6(&mut s, x);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_feature_file(text: &str, path: &Path) -> Result<Vec<Feature2D>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 1, "bad header"))?;
    let [count, dlen] = head[..] else {
        return Err(Error::parse(path, 1, "expected `N d`"));
    };
    let mut out = Vec::with_capacity(count);
    for (n, line) in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| Error::parse(path, n + 1, e.to_string()))?;
        if vals.len() != 4 + dlen {
            return Err(Error::parse(path, n + 1, format!("expected {} values", 4 + dlen)));
        }
        out.push(Feature2D { x: vals[0], y: vals[1], scale: vals[2], orientation: vals[3], descriptor: vals[4..].to_vec() });
    }
    if out.len() != count {
        return Err(Error::parse(path, text.lines().count(), format!("expected {count} features")));
    }
    Ok(out)
}

/// Write `contents` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_feature_file(features: &[Feature2D], path: &Path, empty_len: usize) -> Result<()> {
    write_atomic(path, &format_feature_file(features, empty_len)?)
}

/// A feature ready for export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportSource {
    pub id: u64,
    pub points: CharacteristicPoints,
    pub descriptor: Vec<f64>,
    pub scale: f64,
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub id: u64,
    pub row: usize,
    pub tag: PointTag,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportStats {
    pub features_emitted: usize,
    pub lambertian: usize,
    pub refracted: usize,
    /// Emitted features with each refracted pair counted once.
    pub normalized_feature_count: usize,
    pub skipped: Vec<u64>,
}

impl ExportStats {
    fn new() -> Self {
        Self::default()
    }
}

/// Sidecar describing an exported frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    pub frame: String,
    pub mode: ExportMode,
    pub strategy: String,
    pub baseline: Option<f64>,
    pub files: Vec<String>,
    pub rows: Vec<IndexRow>,
    pub stats: ExportStats,
}

/// Features emitted for one target view, with their index rows.
fn build_view(
    sources: &[ExportSource],
    project: impl Fn(&CharacteristicPoints) -> Vec<ProjectedPoint>,
    strategy: &DescriptorStrategy,
) -> (Vec<Feature2D>, Vec<IndexRow>, ExportStats) {
    let mut feats = Vec::new();
    let mut rows = Vec::new();
    let mut stats = ExportStats::new();
    for src in sources {
        let projected = project(&src.points);
        if projected.len() != src.points.points().len() {
            stats.skipped.push(src.id);
            continue;
        }
        let descs = assign_descriptors(&src.points, &src.descriptor, strategy);
        for (p, (tag, desc)) in projected.iter().zip(descs) {
            debug_assert_eq!(p.tag, tag);
            rows.push(IndexRow { id: src.id, row: feats.len(), tag });
            feats.push(Feature2D { x: p.pixel[0], y: p.pixel[1], scale: src.scale, orientation: src.orientation, descriptor: desc });
        }
        match src.points.class {
            FeatureClass::Lambertian => stats.lambertian += 1,
            FeatureClass::Refracted => stats.refracted += 1,
        }
    }
    stats.features_emitted = feats.len();
    stats.normalized_feature_count = normalized_feature_count(stats.lambertian, 2 * stats.refracted);
    (feats, rows, stats)
}

/// Feature count used for statistics: refracted features contribute two
/// emitted points each, which are counted as one.
pub fn normalized_feature_count(lambertian_points: usize, refracted_points: usize) -> usize {
    lambertian_points + refracted_points / 2
}

/// Write one frame under `out_dir` as `mono/<frame>.txt` or
/// `stereo/<frame>_L.txt` + `stereo/<frame>_R.txt`, plus
/// `<mode>/<frame>_index.json`.
pub fn export_frame(
    sources: &[ExportSource],
    intr: &LfIntrinsics,
    cfg: &ExportConfig,
    out_dir: &Path,
    frame: &str,
) -> Result<ExportIndex> {
    cfg.strategy.validate()?;
    let dlen = sources.first().map_or(cfg.descriptor_len, |s| s.descriptor.len());
    if sources.iter().any(|s| s.descriptor.len() != dlen) {
        return Err(Error::Format("mixed descriptor lengths".into()));
    }
    let (sub, files, rows, stats, baseline) = match cfg.mode {
        ExportMode::Mono => {
            let (feats, rows, stats) = build_view(sources, |cp| project_mono(cp, intr), &cfg.strategy);
            ("mono", vec![(format!("mono/{frame}.txt"), feats)], rows, stats, None)
        }
        ExportMode::Stereo => {
            let b = cfg.baseline.unwrap_or_else(|| intr.view_extent_s());
            if b.is_nan() || b <= 0.0 {
                return Err(Error::Config(format!("stereo baseline must be > 0, got {b}")));
            }
            let (fl, rows, stats) = build_view(sources, |cp| project_into(cp, intr, -0.5 * b, 0.0), &cfg.strategy);
            let (fr, _, _) = build_view(sources, |cp| project_into(cp, intr, 0.5 * b, 0.0), &cfg.strategy);
            let files = vec![(format!("stereo/{frame}_L.txt"), fl), (format!("stereo/{frame}_R.txt"), fr)];
            ("stereo", files, rows, stats, Some(b))
        }
    };
    let dir: PathBuf = out_dir.join(sub);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (rel, feats) in &files {
        write_feature_file(feats, &out_dir.join(rel), dlen)?;
    }
    let index = ExportIndex {
        frame: frame.to_string(),
        mode: cfg.mode,
        strategy: cfg.strategy.name().to_string(),
        baseline,
        files: files.iter().map(|(rel, _)| rel.clone()).collect(),
        rows,
        stats,
    };
    let mut json = serde_json::to_string_pretty(&index)?;
    json.push('\n');
    write_atomic(&dir.join(format!("{frame}_index.json")), &json)?;
    Ok(index)
}
