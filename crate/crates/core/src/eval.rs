//! Parameter-error and classification metrics against a ground-truth scene.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::axis_angle_distance;
use crate::estimator::FeatureClass;
use crate::io::RlffRecord;
use crate::oracle::AstigmaticLensModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRmse {
    #[serde(rename = "Px")]
    pub px: f64,
    #[serde(rename = "Py")]
    pub py: f64,
    #[serde(rename = "Pz1")]
    pub pz1: f64,
    #[serde(rename = "Pz2")]
    pub pz2: f64,
    /// Over refracted ground truth only; axes of a Lambertian point are
    /// arbitrary.
    pub theta1: f64,
    pub theta2: f64,
}

/// Rows are the ground-truth class, columns the estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub lambertian_as_lambertian: usize,
    pub lambertian_as_refracted: usize,
    pub refracted_as_lambertian: usize,
    pub refracted_as_refracted: usize,
}

impl Confusion {
    fn add(&mut self, truth: FeatureClass, est: FeatureClass) {
        use FeatureClass::*;
        match (truth, est) {
            (Lambertian, Lambertian) => self.lambertian_as_lambertian += 1,
            (Lambertian, Refracted) => self.lambertian_as_refracted += 1,
            (Refracted, Lambertian) => self.refracted_as_lambertian += 1,
            (Refracted, Refracted) => self.refracted_as_refracted += 1,
        }
    }

    /// Precision and recall of the refracted class; `None` when undefined.
    pub fn refracted_precision(&self) -> Option<f64> {
        let p = self.refracted_as_refracted + self.lambertian_as_refracted;
        (p > 0).then(|| self.refracted_as_refracted as f64 / p as f64)
    }

    pub fn refracted_recall(&self) -> Option<f64> {
        let t = self.refracted_as_refracted + self.refracted_as_lambertian;
        (t > 0).then(|| self.refracted_as_refracted as f64 / t as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matched: usize,
    pub rmse: ParamRmse,
    pub confusion: Confusion,
    pub refracted_precision: Option<f64>,
    pub refracted_recall: Option<f64>,
    /// Estimates whose id is not in the scene.
    pub unmatched: Vec<u64>,
    /// Scene features with no estimate.
    pub missing: Vec<u64>,
}

/// Ground truth ordered so that `pz1 <= pz2`, as the estimator reports it.
fn ordered(m: &AstigmaticLensModel) -> AstigmaticLensModel {
    if m.pz1 > m.pz2 {
        m.swapped()
    } else {
        *m
    }
}

pub fn true_class(m: &AstigmaticLensModel, eps_rel: f64) -> FeatureClass {
    let m = ordered(m);
    if (m.pz2 - m.pz1) / m.pz1 > eps_rel {
        FeatureClass::Refracted
    } else {
        FeatureClass::Lambertian
    }
}

pub fn evaluate(estimates: &[RlffRecord], truth: &[(u64, AstigmaticLensModel)], eps_rel: f64) -> EvalReport {
    let gt: BTreeMap<u64, AstigmaticLensModel> = truth.iter().copied().collect();
    let mut sq = [0.0f64; 6];
    let (mut n, mut n_theta) = (0usize, 0usize);
    let mut confusion = Confusion::default();
    let mut unmatched = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for e in estimates {
        let Some(m) = gt.get(&e.id) else {
            unmatched.push(e.id);
            continue;
        };
        seen.insert(e.id);
        let m = ordered(m);
        let r = &e.rlff;
        n += 1;
        sq[0] += (r.px - m.px).powi(2);
        sq[1] += (r.py - m.py).powi(2);
        sq[2] += (r.pz1 - m.pz1).powi(2);
        sq[3] += (r.pz2 - m.pz2).powi(2);
        let tc = true_class(&m, eps_rel);
        if tc == FeatureClass::Refracted {
            n_theta += 1;
            sq[4] += axis_angle_distance(r.theta1, m.theta1()).powi(2);
            sq[5] += axis_angle_distance(r.theta2, m.theta2()).powi(2);
        }
        confusion.add(tc, e.class);
    }
    let rms = |s: f64, k: usize| if k == 0 { 0.0 } else { (s / k as f64).sqrt() };
    unmatched.sort_unstable();
    EvalReport {
        matched: n,
        rmse: ParamRmse {
            px: rms(sq[0], n),
            py: rms(sq[1], n),
            pz1: rms(sq[2], n),
            pz2: rms(sq[3], n),
            theta1: rms(sq[4], n_theta),
            theta2: rms(sq[5], n_theta),
        },
        confusion,
        refracted_precision: confusion.refracted_precision(),
        refracted_recall: confusion.refracted_recall(),
        unmatched,
        missing: gt.keys().filter(|id| !seen.contains(id)).copied().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::Rlff;

    fn record(id: u64, m: &AstigmaticLensModel, class: FeatureClass) -> RlffRecord {
        let m = ordered(m);
        RlffRecord {
            id,
            rlff: Rlff { px: m.px, py: m.py, pz1: m.pz1, pz2: m.pz2, theta1: m.theta1(), theta2: m.theta2() },
            rms_residual: 0.0,
            asymmetry: 0.0,
            r_squared: 0.0,
            n_views: 169,
            class,
            scale: None,
            orientation: None,
            descriptor: None,
        }
    }

    #[test]
    fn perfect_recovery_is_zero() {
        let truth = vec![
            (0, AstigmaticLensModel::toric(0.01, 0.0, 1.0, 0.5, 0.3).unwrap()),
            (1, AstigmaticLensModel::lambertian(0.0, 0.02, 0.7).unwrap()),
        ];
        let est: Vec<_> = truth.iter().map(|(id, m)| record(*id, m, true_class(m, 0.05))).collect();
        let r = evaluate(&est, &truth, 0.05);
        assert_eq!(r.rmse, ParamRmse::default());
        assert_eq!(r.matched, 2);
        assert_eq!(r.refracted_precision, Some(1.0));
    }

    #[test]
    fn confusion_and_unmatched() {
        let lam = AstigmaticLensModel::lambertian(0.0, 0.0, 1.0).unwrap();
        let refr = AstigmaticLensModel::toric(0.0, 0.0, 0.5, 1.0, 0.0).unwrap();
        let truth: Vec<_> = (0..4).map(|i| (i, lam)).chain((4..10).map(|i| (i, refr))).collect();
        let mut est: Vec<_> = truth.iter().map(|(id, m)| record(*id, m, true_class(m, 0.05))).collect();
        est[0].class = FeatureClass::Refracted;
        est[9].class = FeatureClass::Lambertian;
        est.push(record(77, &lam, FeatureClass::Lambertian));
        est.remove(5);
        let r = evaluate(&est, &truth, 0.05);
        assert_eq!(
            r.confusion,
            Confusion {
                lambertian_as_lambertian: 3,
                lambertian_as_refracted: 1,
                refracted_as_lambertian: 1,
                refracted_as_refracted: 4,
            }
        );
        assert_eq!(r.unmatched, vec![77]);
        assert_eq!(r.missing, vec![5]);
        assert_eq!(r.refracted_precision, Some(0.8));
        assert_eq!(r.refracted_recall, Some(0.8));
    }
}
