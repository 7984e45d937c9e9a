//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use pcm_core::edit::{apply_delta, decode_portable, delete_by_selection, encode_portable, insert_patch, SelectionRegion};
use pcm_core::geom::{RigidTransform, SimilarityTransform};
use pcm_core::io;
use pcm_core::metrics::{diff_sets, DistanceBackend, PairStats};
use pcm_core::project::{
    build_change_mask, build_change_mask_with, depth_reference, ChangeKind, ChangeObject, ChangeSet3D,
    OcclusionParams,
};
use pcm_core::scene::{VoxelKey, VoxelScene};
use pcm_core::synth::{generate, random_similarity, SceneRecipe, SynthBundle};
use pcm_core::update::{kabsch_umeyama, predict_deletions, CorrespondenceSet};
use pcm_core::{Camera, Cloud, Point3d};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cloud(r: &mut impl Rng, n: usize, spread: f64) -> Vec<Point3d> {
    (0..n)
        .map(|_| {
            Point3::new(
                r.random_range(-spread..spread),
                r.random_range(-spread..spread),
                r.random_range(-spread..spread),
            )
        })
        .collect()
}

fn random_rigid(r: &mut impl Rng) -> RigidTransform<f64> {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    ));
    let t = Vector3::new(r.random_range(-100.0..100.0), r.random_range(-100.0..100.0), r.random_range(-100.0..100.0));
    RigidTransform::new(q.to_rotation_matrix().into_inner(), t).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Plain double loop: (chamfer, hausdorff, modified hausdorff, median).
fn brute_metrics(p: &[Point3d], q: &[Point3d]) -> [f64; 4] {
    let directed = |a: &[Point3d], b: &[Point3d]| -> Vec<f64> {
        a.iter()
            .map(|x| {
                let mut best = f64::INFINITY;
                for y in b {
                    let d = (x.x - y.x).powi(2) + (x.y - y.y).powi(2) + (x.z - y.z).powi(2);
                    if d < best {
                        best = d;
                    }
                }
                best
            })
            .collect()
    };
    let stats = |sq: Vec<f64>| {
        let n = sq.len() as f64;
        let mean_sq = sq.iter().sum::<f64>() / n;
        let mut d: Vec<f64> = sq.iter().map(|v| v.sqrt()).collect();
        let mean = d.iter().sum::<f64>() / n;
        d.sort_by(f64::total_cmp);
        let m = d.len();
        let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
        (mean_sq, d[m - 1], mean, median)
    };
    let f = stats(directed(p, q));
    let b = stats(directed(q, p));
    [f.0 + b.0, f.1.max(b.1), f.2.max(b.2), f.3.max(b.3)]
}

fn indexed_metrics(p: &[Point3d], q: &[Point3d]) -> [f64; 4] {
    let s = PairStats::compute(p, q, DistanceBackend::Indexed).unwrap();
    [s.chamfer(), s.hausdorff(), s.modified_hausdorff(), s.median_point()]
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let pairs: Vec<(Vec<Point3d>, Vec<Point3d>)> = (0..200)
        .map(|_| {
            let (n, m) = (r.random_range(10..=2000), r.random_range(10..=2000));
            let spread = r.random_range(0.5..50.0);
            (random_cloud(&mut r, n, spread), random_cloud(&mut r, m, spread))
        })
        .collect();
    let worst = pairs
        .par_iter()
        .map(|(p, q)| {
            let a = indexed_metrics(p, q);
            let b = brute_metrics(p, q);
            (0..4).map(|i| rel(a[i], b[i])).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 60.0,
        format!("200 pairs, worst relative error {worst:.1e}, {secs:.1} s"),
    )
}

fn metric_fixtures() -> Outcome {
    let c = |v: &[[f64; 3]]| v.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect::<Vec<_>>();
    let o = c(&[[0.0, 0.0, 0.0]]);
    let a = indexed_metrics(&o, &c(&[[1.0, 0.0, 0.0]]));
    let b = indexed_metrics(&c(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), &o);
    let m = indexed_metrics(&c(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]]), &o);
    let even = indexed_metrics(&c(&[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]), &o);
    let got = [a[0], b[1], b[2], m[3], even[3]];
    check(
        got == [2.0, 2.0, 1.0, 1.0, 1.0],
        format!("chamfer {}, hausdorff {}, modified {}, median {}, even median {}", got[0], got[1], got[2], got[3], got[4]),
    )
}

fn kabsch_recovery() -> Outcome {
    let mut r = rng(3);
    let (mut ds, mut dr, mut dt) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let sim = random_similarity(&mut r);
        let n = r.random_range(3..=40);
        let src = random_cloud(&mut r, n, 10.0);
        let tgt: Vec<Point3d> = src.iter().map(|p| sim.apply(p)).collect();
        let fit = match kabsch_umeyama(&CorrespondenceSet::from_pairs(&src, &tgt).unwrap()) {
            Ok(f) => f.transform,
            Err(e) => return Err(format!("fit failed: {e}")),
        };
        ds = ds.max(rel(fit.scale(), sim.scale()));
        dr = dr.max((fit.rotation() - sim.rotation()).norm());
        dt = dt.max((fit.translation() - sim.translation()).norm());
    }
    let mut worst_det = 0.0f64;
    for _ in 0..200 {
        let sim = random_similarity(&mut r);
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let src = random_cloud(&mut r, 12, 10.0);
        let tgt: Vec<Point3d> = src
            .iter()
            .map(|p| Point3::from(sim.scale() * (sim.rotation() * mirror * p.coords) + sim.translation()))
            .collect();
        let fit = kabsch_umeyama(&CorrespondenceSet::from_pairs(&src, &tgt).unwrap()).map_err(|e| e.to_string())?;
        worst_det = worst_det.max((fit.transform.rotation().determinant() - 1.0).abs());
    }
    check(
        ds <= 1e-9 && dr <= 1e-9 && dt <= 1e-9 && worst_det < 1e-9,
        format!("1000 fits: scale {ds:.1e}, rotation {dr:.1e}, translation {dt:.1e} m; 200 mirrored: |det-1| {worst_det:.1e}"),
    )
}

fn manual_project(cam: &Camera, p: &Point3d) -> Option<(f64, f64, f64)> {
    let pc = cam.extrinsics().apply(p);
    if pc.z <= 0.0 {
        return None;
    }
    let u = cam.fx() * pc.x / pc.z + cam.cx();
    let v = cam.fy() * pc.y / pc.z + cam.cy();
    (u >= 0.0 && v >= 0.0 && u < cam.width() as f64 && v < cam.height() as f64).then_some((u, v, pc.z))
}

/// Nearest scan depth per pixel, built without the library's depth
/// reference.
fn zbuffer(cam: &Camera, scan_world: &[Point3d]) -> Vec<f64> {
    let w = cam.width() as usize;
    let mut z = vec![f64::INFINITY; w * cam.height() as usize];
    for p in scan_world {
        if let Some((u, v, d)) = manual_project(cam, p) {
            let i = v as usize * w + u as usize;
            z[i] = z[i].min(d);
        }
    }
    z
}

/// `None` = out of view, `Some(false)` = occluded by a closer sample in
/// the pixel window, `Some(true)` = visible.
fn window_visible(cam: &Camera, z: &[f64], c: &Point3d, params: &OcclusionParams<f64>) -> Option<bool> {
    let (u, v, d) = manual_project(cam, c)?;
    let r = params.radius_px as i64;
    let (w, h) = (cam.width() as i64, cam.height() as i64);
    let (x, y) = (u as i64, v as i64);
    for yy in (y - r).max(0)..=(y + r).min(h - 1) {
        for xx in (x - r).max(0)..=(x + r).min(w - 1) {
            if z[(yy * w + xx) as usize] < d - params.margin_m {
                return Some(false);
            }
        }
    }
    Some(true)
}

/// Exact-geometry counterpart: is the straight ray to `c` blocked by the
/// fixture world more than `margin` in front of it?
fn ray_blocked(b: &SynthBundle, cam: &Camera, c: &Point3d, margin: f64) -> bool {
    let o = Point3::from(*cam.pose().translation());
    let dist = (c - o).norm();
    b.world.raycast(&o, &((c - o) / dist)).is_some_and(|t| t < dist - margin)
}

fn view_masks(b: &SynthBundle, params: &OcclusionParams<f64>) -> Vec<BTreeSet<VoxelKey>> {
    let changes = b.changes();
    b.views
        .iter()
        .map(|v| {
            let (_, mask) = build_change_mask(&changes, &v.camera, &v.scan, params).unwrap();
            let depth = depth_reference(&v.scan, &v.camera);
            predict_deletions(&b.p_out, &mask.raster, &v.camera, &depth, params).unwrap().keys
        })
        .collect()
}

fn conservative_deletion() -> Outcome {
    let params = OcclusionParams::default();
    let results: Vec<(usize, usize, usize, usize, usize)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let recipe = SceneRecipe {
                seed: 1000 + seed,
                extent_m: 40.0,
                buildings: 1,
                poles: 2,
                signs: 2,
                vehicles: 1,
                removed_objects: 1,
                inserted_objects: 2,
                tall_structure_m: Some(8.0),
                cameras_per_object: 3,
                occluded_views: 2,
                survey_scans: 2,
                ..SceneRecipe::default()
            };
            let b = generate(&recipe).unwrap();
            let per_view = view_masks(&b, &params);
            let (mut violations, mut checked, mut sub_pixel) = (0, 0, 0);
            for (v, keys) in b.views.iter().zip(&per_view) {
                let z = zbuffer(&v.camera, &v.scan.world_points());
                for k in keys {
                    checked += 1;
                    let c = b.p_out.center(k);
                    if window_visible(&v.camera, &z, &c, &params) != Some(true) {
                        violations += 1;
                    } else if ray_blocked(&b, &v.camera, &c, params.margin_m) {
                        sub_pixel += 1;
                    }
                }
            }
            // recall on deleted objects that every camera sees unobstructed
            let (mut expected, mut missed) = (0, 0);
            for o in b.objects.iter().filter(|o| o.kind == ChangeKind::Deleted && o.height < 8.0) {
                let views: Vec<usize> = (0..b.views.len()).filter(|&i| b.views[i].object == o.id).collect();
                if !views.iter().all(|&i| b.views[i].clear) {
                    continue;
                }
                let found: BTreeSet<VoxelKey> = views.iter().flat_map(|&i| per_view[i].iter().copied()).collect();
                expected += o.keys.len();
                missed += o.keys.difference(&found).count();
            }
            (violations, checked, expected, missed, sub_pixel)
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let checked: usize = results.iter().map(|r| r.1).sum();
    let expected: usize = results.iter().map(|r| r.2).sum();
    let missed: usize = results.iter().map(|r| r.3).sum();
    let sub_pixel: usize = results.iter().map(|r| r.4).sum();
    check(
        violations == 0 && missed == 0 && expected > 0,
        format!(
            "100 scenes: {violations} occluded/out-of-view deletions among {checked}; clear objects recall {}/{expected}; \
             {sub_pixel} deletions behind geometry no scan sample resolved",
            expected - missed
        ),
    )
}

fn tall_structure() -> Outcome {
    let params = OcclusionParams::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let b = generate(&SceneRecipe::tall_building(seed)).unwrap();
        let tall = b.objects.iter().find(|o| o.kind == ChangeKind::Deleted).unwrap();
        let found: BTreeSet<VoxelKey> = view_masks(&b, &params).into_iter().flatten().collect();
        let top_k = tall.keys.iter().map(|k| k.k).max().unwrap();
        let third = (top_k + 1) as f64 / 3.0;
        let frac = |lo: f64, hi: f64| {
            let band: Vec<_> = tall.keys.iter().filter(|k| (k.k as f64) >= lo && (k.k as f64) < hi).collect();
            band.iter().filter(|k| found.contains(k)).count() as f64 / band.len() as f64
        };
        let (bottom, top) = (frac(0.0, third), frac(2.0 * third, f64::INFINITY));
        ok &= top < bottom;
        lines.push(format!("{bottom:.2}/{top:.2}"));
    }
    check(ok, format!("bottom/top third recovered over 5 seeds: {}", lines.join(", ")))
}

fn portable_round_trip() -> Outcome {
    let b = generate(&SceneRecipe {
        seed: 6,
        extent_m: 64.0,
        removed_objects: 3,
        inserted_objects: 3,
        ..SceneRecipe::default()
    })
    .unwrap();
    let base = &b.p_star_upd;
    if base.len() < 100_000 {
        return Err(format!("fixture only has {} voxels", base.len()));
    }
    let mut deltas = vec![b.delta.clone()];
    deltas.push(
        delete_by_selection(
            base,
            &SelectionRegion::Sphere {
                center: Point3::new(20.0, 20.0, 0.0),
                radius: 4.0,
            },
        )
        .unwrap(),
    );
    let mut d3 = delete_by_selection(
        base,
        &SelectionRegion::Box {
            min: Point3::new(40.0, 5.0, -1.0),
            max: Point3::new(48.0, 12.0, 5.0),
        },
    )
    .unwrap();
    let patch = b.patches.iter().next().unwrap().id().to_string();
    d3 = d3.union(insert_patch(base, &b.patches, &patch, [50.0, 50.0], 0.7, &b.ground).unwrap()).unwrap();
    deltas.push(d3);

    let native = io::encode_scene(base).len();
    let mut worst_ratio = 0.0f64;
    let mut touched_max = 0.0f64;
    for d in &deltas {
        let touched = (d.removed_keys.len() + d.inserted_keys().len()) as f64 / base.len() as f64;
        touched_max = touched_max.max(touched);
        let edited = apply_delta(base, d).unwrap();
        let bytes = encode_portable("base", base.fingerprint(), std::slice::from_ref(d)).unwrap();
        worst_ratio = worst_ratio.max(bytes.len() as f64 / io::encode_scene(&edited).len() as f64);
    }
    let bytes = encode_portable("base", base.fingerprint(), &deltas).unwrap();
    let back = decode_portable::<f64>(&bytes).unwrap();
    let exact = back.deltas == deltas
        && deltas
            .iter()
            .zip(&back.deltas)
            .all(|(a, b)| apply_delta(base, a).unwrap() == apply_delta(base, b).unwrap());
    check(
        exact && touched_max <= 0.05 && worst_ratio <= 0.10,
        format!(
            "{} voxels, 3 deltas touching ≤ {:.2}%: exact = {exact}, archive/native ≤ {:.3}% (native {native} B)",
            base.len(),
            touched_max * 100.0,
            worst_ratio * 100.0
        ),
    )
}

fn mask_consistency() -> Outcome {
    let params = OcclusionParams::default();
    let (mut survivors, mut outside, mut nonempty_hidden, mut views) = (0usize, 0usize, 0usize, 0usize);
    let mut identical = true;
    for seed in 0..10 {
        let recipe = SceneRecipe {
            seed: 500 + seed,
            occluded_views: 2,
            ..SceneRecipe::default()
        };
        let b = generate(&recipe).unwrap();
        let again = generate(&recipe).unwrap();
        let changes = b.changes();
        for (v, w) in b.views.iter().zip(&again.views) {
            views += 1;
            let depth = depth_reference(&v.scan, &v.camera);
            let (proj, mask) = build_change_mask_with(&changes, &v.camera, &depth, &params).unwrap();
            for o in &proj.objects {
                for p in &o.pixels {
                    survivors += 1;
                    let (x, y) = p.cell();
                    outside += usize::from(!mask.raster.get(x, y));
                }
            }
            let (_, mask2) = build_change_mask(&again.changes(), &w.camera, &w.scan, &params).unwrap();
            identical &= io::encode_mask_png(&mask.raster).unwrap() == io::encode_mask_png(&mask2.raster).unwrap();

            // geometry pushed 2 m behind every observed surface, and the
            // same geometry mirrored behind the camera
            let o = Point3::from(*v.camera.pose().translation());
            let seen = v.scan.world_points();
            let hidden: Vec<Point3d> = seen.iter().map(|p| p + (p - o).normalize() * 2.0).collect();
            let behind: Vec<Point3d> = seen.iter().map(|p| o - (p - o)).collect();
            let set = ChangeSet3D::new(vec![
                ChangeObject {
                    object_id: "hidden".into(),
                    cloud: Cloud::new(hidden).unwrap(),
                    kind: ChangeKind::Deleted,
                },
                ChangeObject {
                    object_id: "behind".into(),
                    cloud: Cloud::new(behind).unwrap(),
                    kind: ChangeKind::Deleted,
                },
            ])
            .unwrap();
            let (_, m) = build_change_mask_with(&set, &v.camera, &depth, &params).unwrap();
            nonempty_hidden += usize::from(m.raster.count() > 0);
        }
    }
    check(
        outside == 0 && nonempty_hidden == 0 && identical && survivors > 0,
        format!(
            "{views} views: {outside}/{survivors} survivors outside the mask, {nonempty_hidden} non-empty masks for hidden/behind objects, identical PNGs = {identical}"
        ),
    )
}

fn set_operations() -> Outcome {
    let mut r = rng(8);
    let mut mismatches = 0;
    let mut keys_checked = 0;
    let grid = |keys: &BTreeSet<VoxelKey>| {
        let mut s = VoxelScene::new(0.2, Point3::origin()).unwrap();
        for k in keys {
            s.insert(*k, [1]);
        }
        s
    };
    for _ in 0..50 {
        let density = r.random_range(0.05..0.6);
        let mut sets: [BTreeSet<VoxelKey>; 3] = Default::default();
        for i in -6..6 {
            for j in -6..6 {
                for k in -3..3 {
                    for s in sets.iter_mut() {
                        if r.random_bool(density) {
                            s.insert(VoxelKey::new(i, j, k));
                        }
                    }
                }
            }
        }
        let [out, upd, star] = &sets;
        let diff = diff_sets(&grid(out), &grid(upd), &grid(star)).unwrap();
        for i in -7..7 {
            for j in -7..7 {
                for k in -4..4 {
                    let key = VoxelKey::new(i, j, k);
                    keys_checked += 1;
                    let (o, u, s) = (out.contains(&key), upd.contains(&key), star.contains(&key));
                    let expect = [u && !o, o && !u, s && !o, o && !s];
                    let got = [
                        diff.predicted.added.contains(&key),
                        diff.predicted.deleted.contains(&key),
                        diff.truth.added.contains(&key),
                        diff.truth.deleted.contains(&key),
                    ];
                    mismatches += usize::from(expect != got);
                }
            }
        }
    }
    check(mismatches == 0, format!("50 triples, {keys_checked} keys: {mismatches} membership mismatches"))
}

fn invariance() -> Outcome {
    let mut r = rng(9);
    let (mut drift, mut cov) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (n, m) = (r.random_range(10..=500), r.random_range(10..=500));
        let p = random_cloud(&mut r, n, 20.0);
        let q = random_cloud(&mut r, m, 20.0);
        let base = indexed_metrics(&p, &q);
        let g = random_rigid(&mut r);
        let moved = indexed_metrics(
            &p.iter().map(|x| g.apply(x)).collect::<Vec<_>>(),
            &q.iter().map(|x| g.apply(x)).collect::<Vec<_>>(),
        );
        for i in 0..4 {
            drift = drift.max((moved[i] - base[i]).abs() / base[i].max(1.0));
        }
        let s = 10f64.powf(r.random_range(-1.0..1.0));
        let sim = SimilarityTransform::new(s, Matrix3::identity(), Vector3::zeros()).unwrap();
        let scaled = indexed_metrics(
            &p.iter().map(|x| sim.apply(x)).collect::<Vec<_>>(),
            &q.iter().map(|x| sim.apply(x)).collect::<Vec<_>>(),
        );
        cov = cov.max(rel(scaled[0], base[0] * s * s));
        for i in 1..4 {
            cov = cov.max(rel(scaled[i], base[i] * s));
        }
    }
    check(
        drift <= 1e-9 && cov <= 1e-9,
        format!("100 pairs: rigid drift {drift:.1e}, scale covariance error {cov:.1e} (relative)"),
    )
}

fn pcm(args: &[String], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pcm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("pcm {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn args(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    let start = Instant::now();
    // default recipe on a slightly larger plot, ~51k voxels
    fs::write(d.join("recipe.json"), r#"{"extent_m": 42.0}"#).map_err(|e| e.to_string())?;
    pcm(&args(&["synth", "--recipe", "recipe.json", "--out", "fx"]), d)?;
    let voxels = json(&d.join("fx/run_manifest.json"))["counts"]["voxels"].as_u64().unwrap();
    pcm(
        &args(&[
            "edit", "--scene", "fx/p_star_upd.pcmv", "--script", "fx/edit_script.json", "--patches", "fx/patches",
            "--ground", "fx/ground.json", "--taxonomy", "fx/taxonomy.json", "--out", "ed",
        ]),
        d,
    )?;
    let mut views: Vec<_> = fs::read_dir(d.join("fx/views")).unwrap().map(|e| e.unwrap().path()).collect();
    views.sort();
    let view_args: Vec<String> = views.iter().flat_map(|p| ["--view".into(), p.display().to_string()]).collect();
    let mut batches: Vec<_> = fs::read_dir(d.join("fx/predictions")).unwrap().map(|e| e.unwrap().path()).collect();
    batches.sort();
    let batch_args: Vec<String> = batches.iter().flat_map(|p| ["--batch".into(), p.display().to_string()]).collect();

    pcm(&[args(&["project", "--changes", "fx/changes", "--out", "masks"]), view_args.clone()].concat(), d)?;
    pcm(&[args(&["delete", "--scene", "ed/edited.pcmv", "--masks", "masks", "--out", "del"]), view_args].concat(), d)?;
    pcm(&[args(&["add", "--scene", "del/updated.pcmv", "--masks", "masks", "--out", "add"]), batch_args].concat(), d)?;
    pcm(
        &args(&["eval", "--outdated", "ed/edited.pcmv", "--updated", "add/updated.pcmv", "--truth", "fx/p_star_upd.pcmv", "--out", "ev"]),
        d,
    )?;
    let secs = start.elapsed().as_secs_f64();

    let report = json(&d.join("ev/report.json"));
    let add: Vec<f64> = ["chamfer_m2", "hausdorff_m", "modified_hausdorff_m", "median_point_m"]
        .iter()
        .filter_map(|m| report["addition"][m].as_f64())
        .collect();
    let del: Vec<f64> = ["chamfer_m2", "hausdorff_m", "modified_hausdorff_m", "median_point_m"]
        .iter()
        .filter_map(|m| report["deletion"][m].as_f64())
        .collect();
    let same_outdated = fs::read(d.join("ed/edited.pcmv")).unwrap() == fs::read(d.join("fx/p_out.pcmv")).unwrap();
    let p_out = io::load_scene(&d.join("ed/edited.pcmv")).unwrap();
    let diff = diff_sets(
        &p_out,
        &io::load_scene(&d.join("add/updated.pcmv")).unwrap(),
        &io::load_scene(&d.join("fx/p_star_upd.pcmv")).unwrap(),
    )
    .unwrap();
    let key_exact = diff.predicted.deleted == diff.truth.deleted;
    check(
        voxels >= 50_000
            && secs < 120.0
            && same_outdated
            && add.len() == 4
            && add.iter().all(|v| *v < 0.1)
            && del.len() == 4
            && del.iter().all(|v| *v == 0.0)
            && key_exact,
        format!(
            "{voxels} voxels in {secs:.1} s; addition max metric {:.3}, deletion metrics {del:?}, deleted keys exact = {key_exact} ({} keys)",
            add.iter().copied().fold(0.0, f64::max),
            diff.truth.deleted.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracle),
        ("hand-computed metric fixtures", metric_fixtures),
        ("similarity recovery", kabsch_recovery),
        ("conservative deletion", conservative_deletion),
        ("tall-structure visibility", tall_structure),
        ("portable round trip and compression", portable_round_trip),
        ("change-mask consistency", mask_consistency),
        ("set-operation correctness", set_operations),
        ("metric invariance", invariance),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1} s]", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
