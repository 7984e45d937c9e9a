use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use pcm_core::geom::Mask;
use pcm_core::io;

fn pcm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcm"))
        .args(args)
        .current_dir(cwd)
        .env("PCM_TOOLKIT_LOG", "off")
        .output()
        .expect("spawn pcm")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = pcm(args, cwd);
    assert!(
        out.status.success(),
        "pcm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

const RECIPE: &str = r#"{"seed": 21, "extent_m": 30.0, "buildings": 1, "poles": 2, "signs": 2, "vehicles": 1,
    "removed_objects": 1, "inserted_objects": 1, "cameras_per_object": 2}"#;

fn fixture(dir: &Path) {
    fs::write(dir.join("recipe.json"), RECIPE).unwrap();
    ok(&["synth", "--recipe", "recipe.json", "--out", "fx"], dir);
}

fn views(dir: &Path) -> Vec<String> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("fx/views")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v.iter().flat_map(|p| ["--view".to_string(), p.display().to_string()]).collect()
}

#[test]
fn eval_of_a_correct_update_is_all_zero() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fixture(d);
    ok(&["eval", "--outdated", "fx/p_out.pcmv", "--updated", "fx/p_star_upd.pcmv", "--truth", "fx/p_star_upd.pcmv", "--out", "ev"], d);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    for pair in ["addition", "deletion"] {
        for m in ["chamfer_m2", "hausdorff_m", "modified_hausdorff_m", "median_point_m"] {
            assert_eq!(report[pair][m].as_f64(), Some(0.0), "{pair} {m}");
        }
    }
    // nothing changed at all: every metric is undefined, not zero
    ok(&["eval", "--outdated", "fx/p_star_upd.pcmv", "--updated", "fx/p_star_upd.pcmv", "--truth", "fx/p_star_upd.pcmv", "--oracle", "--out", "ev2"], d);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("ev2/report.json")).unwrap()).unwrap();
    assert!(report["addition"]["chamfer_m2"].is_null());
    assert_eq!(report["addition"]["undefined"].as_array().unwrap().len(), 4);
    assert_eq!(manifest(&d.join("ev2"))["counts"]["backend"], "exhaustive");
}

#[test]
fn edit_export_import_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fixture(d);
    ok(
        &[
            "edit", "--scene", "fx/p_star_upd.pcmv", "--script", "fx/edit_script.json", "--patches", "fx/patches",
            "--ground", "fx/ground.json", "--taxonomy", "fx/taxonomy.json", "--out", "ed",
        ],
        d,
    );
    assert_eq!(fs::read(d.join("ed/edited.pcmv")).unwrap(), fs::read(d.join("fx/p_out.pcmv")).unwrap());
    ok(&["export", "--scene", "fx/p_star_upd.pcmv", "--delta", "ed/delta.json", "--out", "ex"], d);
    ok(&["import", "--scene", "fx/p_star_upd.pcmv", "--archive", "ex/edits.pcme", "--out", "im"], d);
    assert_eq!(fs::read(d.join("im/scene_0000.pcmv")).unwrap(), fs::read(d.join("ed/edited.pcmv")).unwrap());
    assert_eq!(manifest(&d.join("im"))["counts"]["fingerprints"][0], manifest(&d.join("ed"))["counts"]["fingerprint"]);

    // against the wrong base the archive is refused
    let out = pcm(&["import", "--scene", "fx/p_out.pcmv", "--archive", "ex/edits.pcme", "--out", "bad"], d);
    assert!(!out.status.success());
    assert!(!d.join("bad").exists());
}

#[test]
fn all_zero_masks_delete_nothing() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fixture(d);
    let v = views(d);
    fs::create_dir(d.join("zero")).unwrap();
    for n in 0..v.len() / 2 {
        let cam = io::load_json::<io::CameraRecord>(&d.join(format!("fx/views/view_{n:04}/camera.json"))).unwrap();
        io::save_mask_png(&d.join(format!("zero/mask_{n:04}.png")), &Mask::new(cam.width, cam.height)).unwrap();
    }
    let mut args = vec!["delete", "--scene", "fx/p_out.pcmv", "--masks", "zero", "--out", "del"];
    args.extend(v.iter().map(String::as_str));
    ok(&args, d);
    assert_eq!(manifest(&d.join("del"))["counts"]["deletions"], 0);
    assert!(io::load_cloud(&d.join("del/p_del.ply")).unwrap().is_empty());
    assert_eq!(fs::read(d.join("del/updated.pcmv")).unwrap(), fs::read(d.join("fx/p_out.pcmv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fixture(d);
    let v = views(d);
    for out in ["m1", "m2"] {
        let mut args = vec!["project", "--changes", "fx/changes", "--out", out];
        args.extend(v.iter().map(String::as_str));
        ok(&args, d);
    }
    fs::write(d.join("recipe.json"), RECIPE).unwrap();
    ok(&["synth", "--recipe", "recipe.json", "--out", "fx2"], d);
    for (a, b) in [("m1", "m2"), ("fx", "fx2")] {
        let fa = files(&d.join(a));
        assert_eq!(fa, files(&d.join(b)));
        for rel in fa.iter().filter(|r| !r.ends_with("run_manifest.json")) {
            assert_eq!(fs::read(d.join(a).join(rel)).unwrap(), fs::read(d.join(b).join(rel)).unwrap(), "{rel:?}");
        }
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn failures_are_one_line_and_leave_no_output() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let out = pcm(&["eval", "--outdated", "nope.pcmv", "--updated", "nope.pcmv", "--truth", "nope.pcmv", "--out", "ev"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("pcm: error:"), "{err}");
    assert_eq!(fs::read_dir(d).unwrap().count(), 0);

    // a corrupt input fails after staging started; the stage is cleaned up
    fs::write(d.join("bad.pcmv"), b"PCMVgarbage").unwrap();
    let out = pcm(&["edit", "--scene", "bad.pcmv", "--script", "bad.pcmv", "--out", "ed"], d);
    assert!(!out.status.success());
    let names: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("bad.pcmv")]);

    let out = pcm(&["synth", "--resolution", "-1", "--out", "x"], d);
    assert!(!out.status.success());
    assert!(!d.join("x").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("recipe.json"), RECIPE).unwrap();
    fs::write(d.join("cfg.json"), r#"{"seed": 5, "occlusion_margin_m": 0.5, "threads": 2, "out": "from_cfg"}"#).unwrap();
    ok(&["synth", "--config", "cfg.json", "--recipe", "recipe.json", "--seed", "6"], d);
    let m = manifest(&d.join("from_cfg"));
    assert_eq!(m["parameters"]["config"]["seed"], 6);
    assert_eq!(m["parameters"]["config"]["occlusion_margin_m"], 0.5);
    assert_eq!(m["parameters"]["config"]["threads"], 2);
    let recipe: Value = serde_json::from_str(&fs::read_to_string(d.join("from_cfg/recipe.json")).unwrap()).unwrap();
    assert_eq!(recipe["seed"], 6);
    for entry in m["outputs"].as_array().unwrap() {
        assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(m["inputs"][0]["path"], "recipe.json");
}

#[test]
fn build_filters_dynamic_objects() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fixture(d);
    ok(
        &["build", "--scans", "fx/survey", "--cuboids", "fx/cuboids.json", "--taxonomy", "fx/taxonomy.json", "--out", "b"],
        d,
    );
    let built = io::load_scene(&d.join("b/scene.pcmv")).unwrap();
    let truth = io::load_scene(&d.join("fx/p_star_upd.pcmv")).unwrap();
    assert!(built.keys().eq(truth.keys()));
    // without the cuboids the parked vehicle stays in the map
    ok(&["build", "--scans", "fx/survey", "--out", "b2"], d);
    assert!(io::load_scene(&d.join("b2/scene.pcmv")).unwrap().len() > truth.len());
}
