mod common;

use common::*;
use rlff_core::io::{parse_jsonl, RlffRecord};
use rlff_core::oracle::AstigmaticLensModel;
use rlff_core::{axis_angle_distance, LfIntrinsics};
use std::path::Path;

#[test]
fn help_and_version_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["simulate", "fit", "pipeline", "export", "eval", "calibrate"] {
        let o = rlff(&[sub, "--help"], dir.path());
        assert!(o.status.success(), "{sub} --help");
        let o = rlff(&[sub, "--version"], dir.path());
        assert!(o.status.success());
        let v = String::from_utf8(o.stdout).unwrap();
        assert_eq!(v.trim(), format!("rlff-{sub} {}", env!("CARGO_PKG_VERSION")));
    }
    let o = rlff(&["--version"], dir.path());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), format!("rlff {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rlff(&["nope"], dir.path()).status.code(), Some(1));
    assert_eq!(rlff(&["fit"], dir.path()).status.code(), Some(1));
    assert_eq!(rlff(&["simulate", "--scene", "s.json", "--noise", "abc"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "wat = 3\n").unwrap();
    let o = rlff(&["--config", "bad.toml", "eval", "--rlff", "a", "--scene", "b"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = rlff_env(&["fit", "--obs", "x.csv"], dir.path(), &[("RLFF_THREADS", "many")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lambertian_scene_gives_one_row_per_view() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(&dir.path().join("s.json"), &[(0, AstigmaticLensModel::lambertian(0.01, 0.0, 0.8).unwrap())]);
    let o = rlff(&["simulate", "--scene", "s.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count() - 1, 13 * 13);
}

#[test]
fn mixed_scene_row_count() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(&dir.path().join("s.json"), &mixed_scene(50, 4));
    let o = rlff(&["simulate", "--scene", "s.json", "--noise", "0.1", "-o", "obs.csv"], dir.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("obs.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 50 * 169);
}

#[test]
fn effective_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "min_views = 9\n").unwrap();
    std::fs::write(dir.path().join("e.csv"), "").unwrap();
    let o = rlff(&["--config", "c.toml", "--seed", "12", "fit", "--obs", "e.csv"], dir.path());
    let err = stderr(&o);
    assert!(err.contains("\"min_views\":9") && err.contains("\"seed\":12"), "{err}");
}

fn fit_records(dir: &Path, args: &[&str]) -> Vec<RlffRecord> {
    let o = rlff(args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    parse_jsonl(std::str::from_utf8(&o.stdout).unwrap(), Path::new("stdout")).unwrap()
}

#[test]
fn simulate_then_fit_recovers_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = mixed_scene(12, 8);
    write_scene(&dir.path().join("s.json"), &scene);
    assert!(rlff(&["simulate", "--scene", "s.json", "-o", "obs.csv"], dir.path()).status.success());
    let recs = fit_records(dir.path(), &["fit", "--obs", "obs.csv"]);
    assert_eq!(recs.len(), scene.len());
    for (r, (id, m)) in recs.iter().zip(&scene) {
        assert_eq!(r.id, *id);
        let m = if m.pz1 > m.pz2 { m.swapped() } else { *m };
        assert!((r.rlff.px - m.px).abs() < 1e-9 && (r.rlff.py - m.py).abs() < 1e-9);
        assert!((r.rlff.pz1 - m.pz1).abs() < 1e-9 * m.pz1 && (r.rlff.pz2 - m.pz2).abs() < 1e-9 * m.pz2);
        if m.pz1 != m.pz2 {
            assert!(axis_angle_distance(r.rlff.theta1, m.theta1()) < 1e-8);
        }
    }
}

#[test]
fn discrete_csv_with_intrinsics_file() {
    let dir = tempfile::tempdir().unwrap();
    let intr = LfIntrinsics::reference();
    std::fs::write(dir.path().join("intr.json"), serde_json::to_string(&intr.to_file()).unwrap()).unwrap();
    let m = AstigmaticLensModel::toric(0.01, 0.02, 0.5, 1.2, 0.4).unwrap();
    let obs = rlff_core::synth_observations(&m, &intr, 0.0, 0, 5).unwrap();
    let mut text = String::from("feature_id,i,j,k,l\n");
    for s in obs.samples() {
        text += &format!("5,{},{},{},{}\n", s.i, s.j, s.k, s.l);
    }
    std::fs::write(dir.path().join("d.csv"), text).unwrap();
    let recs = fit_records(dir.path(), &["--intrinsics", "intr.json", "fit", "--obs", "d.csv"]);
    assert_eq!(recs.len(), 1);
    assert!((recs[0].rlff.pz2 - 1.2).abs() < 1e-8);
}

#[test]
fn corrupt_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "feature_id,i,j,s,t,u,v\n0,0,0,0,0,0,0\n0,0,1,0,0,zz,0\n").unwrap();
    let o = rlff(&["fit", "--obs", "c.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c.csv:3"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn empty_csv_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "").unwrap();
    let o = rlff(&["fit", "--obs", "e.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rlff(&["fit", "--obs", "absent.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(rlff(&["--intrinsics", "absent.json", "fit", "--obs", "x"], dir.path()).status.code(), Some(2));
}

#[test]
fn rejected_features_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let intr = LfIntrinsics::reference();
    let m = AstigmaticLensModel::toric(0.01, 0.02, 0.5, 1.2, 0.4).unwrap();
    let obs = rlff_core::synth_observations(&m, &intr, 0.0, 0, 1).unwrap();
    let row = obs.filtered(|n| obs.samples()[n].j == 6).unwrap();
    let good = rlff_core::synth_observations(&m, &intr, 0.0, 0, 2).unwrap();
    std::fs::write(dir.path().join("o.csv"), rlff_core::io::format_observations_csv(&[row, good])).unwrap();
    let recs = fit_records(dir.path(), &["fit", "--obs", "o.csv", "--rejected", "rej.jsonl"]);
    assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![2]);
    let rej: Vec<serde_json::Value> = rlff_core::io::read_jsonl(&dir.path().join("rej.jsonl")).unwrap();
    assert_eq!(rej.len(), 1);
    assert_eq!(rej[0]["id"], 1);
    assert_eq!(rej[0]["reason"], "diversity");
}

#[test]
fn pipeline_on_keypoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let intr = LfIntrinsics::reference();
    let scene = mixed_scene(6, 21);
    write_keypoint_dir(&dir.path().join("kp"), &scene, &intr, 3);
    let recs = fit_records(dir.path(), &["pipeline", "--keypoints", "kp"]);
    assert_eq!(recs.len(), scene.len());
    for r in &recs {
        // tracks are identified by their reference keypoint; match by position
        let (_, m) = scene
            .iter()
            .min_by(|a, b| {
                let da = (a.1.px - r.rlff.px).hypot(a.1.py - r.rlff.py);
                let db = (b.1.px - r.rlff.px).hypot(b.1.py - r.rlff.py);
                da.total_cmp(&db)
            })
            .unwrap();
        assert!((m.pz1.min(m.pz2) - r.rlff.pz1).abs() < 1e-8);
        assert_eq!(r.descriptor.as_ref().map(Vec::len), Some(32));
        assert_eq!(r.n_views, 169);
    }
}

#[test]
fn eval_reports_unmatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let scene = mixed_scene(6, 2);
    write_scene(&dir.path().join("s.json"), &scene);
    assert!(rlff(&["simulate", "--scene", "s.json", "-o", "o.csv"], dir.path()).status.success());
    assert!(rlff(&["fit", "--obs", "o.csv", "-o", "f.jsonl"], dir.path()).status.success());
    write_scene(&dir.path().join("partial.json"), &scene[1..]);
    let o = rlff(&["eval", "--rlff", "f.jsonl", "--scene", "partial.json"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["unmatched"], serde_json::json!([0]));
    assert_eq!(v["matched"], 5);
    assert!(v["rmse"]["Pz1"].as_f64().unwrap() < 1e-9);
    let c = &v["confusion"];
    assert_eq!(c["lambertian_as_lambertian"], 1);
    assert_eq!(c["refracted_as_refracted"], 4);
}

#[test]
fn export_layout_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let scene = mixed_scene(9, 6);
    write_scene(&dir.path().join("s.json"), &scene);
    assert!(rlff(&["simulate", "--scene", "s.json", "-o", "o.csv"], dir.path()).status.success());
    assert!(rlff(&["fit", "--obs", "o.csv", "-o", "f.jsonl"], dir.path()).status.success());
    let o = rlff(&["export", "--rlff", "f.jsonl", "--mode", "stereo", "--out", "out", "--frame", "000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["lambertian"], 3);
    assert_eq!(stats["refracted"], 6);
    assert_eq!(stats["features_emitted"], 15);
    assert_eq!(stats["normalized_feature_count"], 9);
    for f in ["stereo/000_L.txt", "stereo/000_R.txt", "stereo/000_index.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let idx: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/stereo/000_index.json")).unwrap()).unwrap();
    assert_eq!(idx["rows"].as_array().unwrap().len(), 15);
    assert_eq!(idx["rows"][1]["tag"], "front");
    assert_eq!(idx["rows"][2]["tag"], "back");
    let o = rlff(&["export", "--rlff", "f.jsonl", "--out", "out", "--frame", "../x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
