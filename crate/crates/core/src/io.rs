//! Observation CSV, RLFF JSON lines and scene files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Extraction, FeatureClass, Rlff};
use crate::geometry::{DiscreteSample, LfIntrinsics, Ray4D};
use crate::oracle::{AstigmaticLensModel, ObservationSet, SceneRecord};
use crate::pipeline::PipelineFeature;

pub const RAY_HEADER: &str = "feature_id,i,j,s,t,u,v";
pub const DISCRETE_HEADER: &str = "feature_id,i,j,k,l";

/// Continuous-ray CSV, one row per observation, header included.
pub fn format_observations_csv(sets: &[ObservationSet]) -> String {
    let mut out = String::from(RAY_HEADER);
    out.push('\n');
    for set in sets {
        for (r, n) in set.rays().iter().zip(set.samples()) {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", set.id, n.i, n.j, r.s, r.t, r.u, r.v);
        }
    }
    out
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, path: &Path, line: usize) -> Result<T> {
    let tok = rec.get(idx).ok_or_else(|| Error::parse(path, line, format!("missing field `{name}`")))?;
    tok.parse().map_err(|_| Error::parse(path, line, format!("bad value `{tok}` for `{name}`")))
}

/// Parse either CSV flavour. Rows are grouped by `feature_id`; the result
/// is sorted by id. Discrete rows are decoded through `intr`, continuous
/// rows get their pixel coordinates from the inverse map.
pub fn parse_observations_csv(text: &str, path: &Path, intr: &LfIntrinsics) -> Result<Vec<ObservationSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let line_of = |rec: &csv::StringRecord| rec.position().map_or(0, |p| p.line() as usize);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::parse(path, line, e.to_string())
    };
    let Some(header) = records.next().transpose().map_err(csv_err)? else {
        return Ok(Vec::new());
    };
    let names: Vec<&str> = header.iter().collect();
    let discrete = if names == RAY_HEADER.split(',').collect::<Vec<_>>() {
        false
    } else if names == DISCRETE_HEADER.split(',').collect::<Vec<_>>() {
        true
    } else {
        return Err(Error::parse(path, line_of(&header), format!("expected header `{RAY_HEADER}` or `{DISCRETE_HEADER}`")));
    };
    let ncols = if discrete { 5 } else { 7 };
    let mut groups: BTreeMap<u64, (Vec<Ray4D>, Vec<DiscreteSample>, usize)> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let ln = line_of(&rec);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != ncols {
            return Err(Error::parse(path, ln, format!("expected {ncols} fields, got {}", rec.len())));
        }
        let id: u64 = field(&rec, 0, "feature_id", path, ln)?;
        let i: usize = field(&rec, 1, "i", path, ln)?;
        let j: usize = field(&rec, 2, "j", path, ln)?;
        let (ray, sample) = if discrete {
            let k: f64 = field(&rec, 3, "k", path, ln)?;
            let l: f64 = field(&rec, 4, "l", path, ln)?;
            let sample = DiscreteSample::new(i, j, k, l);
            let ray = intr.decode(&sample).map_err(|e| Error::parse(path, ln, e.to_string()))?;
            (ray, sample)
        } else {
            let mut v = [0.0f64; 4];
            for (n, (slot, name)) in v.iter_mut().zip(["s", "t", "u", "v"]).enumerate() {
                *slot = field(&rec, 3 + n, name, path, ln)?;
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(path, ln, "non-finite ray coordinate"));
            }
            let ray = Ray4D::new(v[0], v[1], v[2], v[3]);
            let p = intr.encode(&ray);
            (ray, DiscreteSample::new(i, j, p[2], p[3]))
        };
        let g = groups.entry(id).or_insert_with(|| (Vec::new(), Vec::new(), ln));
        g.0.push(ray);
        g.1.push(sample);
    }
    groups
        .into_iter()
        .map(|(id, (rays, samples, first))| {
            ObservationSet::new(id, rays, samples)
                .map_err(|e| Error::parse(path, first, format!("feature {id}: {e}")))
        })
        .collect()
}

pub fn read_observations_csv(path: &Path, intr: &LfIntrinsics) -> Result<Vec<ObservationSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations_csv(&text, path, intr)
}

/// One output line of `fit` and `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlffRecord {
    pub id: u64,
    #[serde(flatten)]
    pub rlff: Rlff,
    pub rms_residual: f64,
    pub asymmetry: f64,
    pub r_squared: f64,
    pub n_views: usize,
    pub class: FeatureClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<Vec<f64>>,
}

impl From<&Extraction> for RlffRecord {
    fn from(e: &Extraction) -> Self {
        RlffRecord {
            id: e.id,
            rlff: e.rlff,
            rms_residual: e.diagnostics.rms_residual,
            asymmetry: e.diagnostics.asymmetry,
            r_squared: e.diagnostics.r_squared,
            n_views: e.diagnostics.n_views,
            class: e.class,
            scale: None,
            orientation: None,
            descriptor: None,
        }
    }
}

impl From<&PipelineFeature> for RlffRecord {
    /// Carries the reference keypoint's scale, orientation and descriptor.
    fn from(f: &PipelineFeature) -> Self {
        let kp = f.track.reference_keypoint();
        RlffRecord {
            scale: Some(kp.scale),
            orientation: Some(kp.orientation),
            descriptor: Some(kp.descriptor.clone()),
            ..RlffRecord::from(&f.extraction)
        }
    }
}

pub fn format_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse JSON lines; blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

/// Scene file: a JSON array of model records. Records without an `id` take
/// their array index.
pub fn parse_scene(text: &str, path: &Path) -> Result<Vec<(u64, AstigmaticLensModel)>> {
    let recs: Vec<SceneRecord> =
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let mut seen = std::collections::BTreeSet::new();
    recs.iter()
        .enumerate()
        .map(|(n, r)| {
            let id = r.id.unwrap_or(n as u64);
            if !seen.insert(id) {
                return Err(Error::Format(format!("{}: duplicate feature id {id}", path.display())));
            }
            let m = r.to_model().map_err(|e| Error::Format(format!("{}: record {n}: {e}", path.display())))?;
            Ok((id, m))
        })
        .collect()
}

pub fn read_scene(path: &Path) -> Result<Vec<(u64, AstigmaticLensModel)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

pub fn format_scene(models: &[(u64, AstigmaticLensModel)]) -> Result<String> {
    let recs: Vec<SceneRecord> = models.iter().map(|(id, m)| m.to_record(Some(*id))).collect();
    let mut s = serde_json::to_string_pretty(&recs)?;
    s.push('\n');
    Ok(s)
}
