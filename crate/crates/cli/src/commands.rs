use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use pcm_core::edit::{
    apply_delta, delete_by_cuboid, delete_by_selection, encode_portable, import_portable, insert_patch, read_portable,
    EditDelta, GroundModel, PatchDatabase,
};
use pcm_core::geom::{CameraModel, Mask, Point3, PointCloud};
use pcm_core::io::{self, CameraRecord, CuboidRecord, EditOp, EditScript, PlyData};
use pcm_core::metrics::{diff_sets, evaluate_update, DistanceBackend};
use pcm_core::project::{build_change_mask, build_change_mask_with, ChangeKind, DepthReference};
use pcm_core::scene::{build_scene, key_id, LabelTaxonomy, VoxelScene};
use pcm_core::synth::{generate, SceneRecipe, SynthBundle};
use pcm_core::update::{
    accumulate_additions, predict_deletions, register_addition_rasters, updated_scene, PredictedReconstruction,
};

use crate::config::RunConfig;
use crate::output::{Manifest, Staging};

fn taxonomy(path: Option<&Path>) -> Result<LabelTaxonomy> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(LabelTaxonomy::from_json(&text)?)
        }
        None => Ok(LabelTaxonomy::default()),
    }
}

fn scene(path: &Path) -> Result<VoxelScene<f64>> {
    io::load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn inputs(m: &mut Manifest, paths: &[&Path]) -> Result<()> {
    paths.iter().try_for_each(|p| m.input(p))
}

fn fp_hex(s: &VoxelScene<f64>) -> String {
    format!("{:016x}", s.fingerprint())
}

/// Voxel centers of `keys` with their key ids, in key order.
fn centers(grid: &VoxelScene<f64>, keys: &BTreeSet<pcm_core::scene::VoxelKey>) -> Result<PointCloud<f64>> {
    Ok(PointCloud::with_ids(
        keys.iter().map(|k| grid.center(k)).collect(),
        keys.iter().map(key_id).collect(),
    )?)
}

struct View {
    camera: CameraModel<f64>,
    depth: DepthReference<f64>,
}

/// A view directory holds `camera.json` and the synchronized scan(s) in
/// `scan/`.
fn load_view(dir: &Path) -> Result<View> {
    let ctx = || format!("loading view {}", dir.display());
    let camera = io::load_json::<CameraRecord>(&dir.join("camera.json")).with_context(ctx)?.to_camera().with_context(ctx)?;
    let scans = io::load_scans(&dir.join("scan")).with_context(ctx)?;
    let world: Vec<Point3<f64>> = scans.iter().flat_map(|s| s.world_points()).collect();
    let depth = DepthReference::from_world_points(&world, &camera);
    Ok(View { camera, depth })
}

fn mask_name(n: usize) -> String {
    format!("mask_{n:04}.png")
}

pub fn build(
    cfg: &RunConfig,
    scans: &Path,
    cuboids: Option<&Path>,
    taxonomy_path: Option<&Path>,
    origin: [f64; 3],
) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("build", json!({ "config": cfg, "origin": origin }))?;
    inputs(&mut m, &[scans])?;
    inputs(&mut m, &cuboids.into_iter().chain(taxonomy_path).collect::<Vec<_>>())?;
    let scans = io::load_scans(scans)?;
    let cuboids = match cuboids {
        Some(p) => io::load_cuboids(p)?,
        None => Vec::new(),
    };
    let tax = taxonomy(taxonomy_path)?;
    let s = build_scene(&scans, &cuboids, &tax, cfg.resolution(), Point3::from(origin))?;
    info!("built {} voxels from {} scans", s.len(), scans.len());
    let stage = Staging::new(out)?;
    io::save_scene(&stage.path("scene.pcmv"), &s)?;
    m.count("scans", scans.len());
    m.count("points", scans.iter().map(|s| s.cloud.len()).sum::<usize>());
    m.count("voxels", s.len());
    m.count("fingerprint", fp_hex(&s));
    m.write(&stage)?;
    stage.commit()
}

pub fn edit(
    cfg: &RunConfig,
    scene_path: &Path,
    script: &Path,
    patches: Option<&Path>,
    ground: Option<&Path>,
    taxonomy_path: Option<&Path>,
) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("edit", json!({ "config": cfg }))?;
    inputs(&mut m, &[scene_path, script])?;
    inputs(&mut m, &patches.into_iter().chain(ground).chain(taxonomy_path).collect::<Vec<_>>())?;
    let base = scene(scene_path)?;
    let script: EditScript = io::load_json(script)?;
    let tax = taxonomy(taxonomy_path)?;
    let db: Option<PatchDatabase<f64>> = patches.map(io::load_patch_db).transpose()?;
    let ground: Option<GroundModel<f64>> = ground.map(io::load_ground).transpose()?;

    let mut cur = base.clone();
    let mut merged = EditDelta::empty(&base);
    let mut into_occupied = 0usize;
    for (n, op) in script.operations.iter().enumerate() {
        let step = || -> Result<EditDelta<f64>> {
            Ok(match op {
                EditOp::DeleteCuboid(c) => delete_by_cuboid(&cur, &c.to_cuboid()?, &tax)?,
                EditOp::DeleteSelection(s) => delete_by_selection(&cur, &s.to_region()?)?,
                EditOp::Insert { patch, xy, yaw } => {
                    let db = db.as_ref().context("insert needs --patches")?;
                    let g = ground.as_ref().context("insert needs --ground")?;
                    insert_patch(&cur, db, patch, *xy, *yaw, g)?
                }
            })
        };
        let d = step().with_context(|| format!("edit operation {n}"))?;
        let occupied = d.inserted_keys().iter().filter(|k| cur.contains(k)).count();
        if occupied > 0 {
            warn!("edit operation {n}: {occupied} inserted voxels were already occupied");
            into_occupied += occupied;
        }
        merged = merged.then(&base, &d).with_context(|| format!("edit operation {n}"))?;
        cur = apply_delta(&cur, &d)?;
    }
    let edited = apply_delta(&base, &merged)?;

    let stage = Staging::new(out)?;
    io::save_scene(&stage.path("edited.pcmv"), &edited)?;
    io::save_delta(&stage.path("delta.json"), &merged)?;
    m.count("operations", script.operations.len());
    m.count("removed", merged.removed_keys.len());
    m.count("inserted", merged.inserted_keys().len());
    m.count("inserted_into_occupied", into_occupied);
    m.count("voxels", edited.len());
    m.count("base_fingerprint", fp_hex(&base));
    m.count("fingerprint", fp_hex(&edited));
    m.write(&stage)?;
    stage.commit()
}

pub fn export(cfg: &RunConfig, scene_path: &Path, deltas: &[PathBuf], base_ref: Option<String>) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("export", json!({ "config": cfg, "base_ref": base_ref }))?;
    inputs(&mut m, &[scene_path])?;
    inputs(&mut m, &deltas.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let base = scene(scene_path)?;
    let deltas = deltas
        .iter()
        .map(|p| io::load_delta(p).with_context(|| format!("loading delta {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if let Some(n) = deltas.iter().position(|d| d.scene_fingerprint != base.fingerprint()) {
        bail!("delta {n} was made against a different base scene");
    }
    let base_ref = base_ref.unwrap_or_else(|| scene_path.file_name().unwrap_or_default().to_string_lossy().into_owned());
    let bytes = encode_portable(&base_ref, base.fingerprint(), &deltas)?;
    let native = io::encode_scene(&base).len();

    let stage = Staging::new(out)?;
    fs::write(stage.path("edits.pcme"), &bytes)?;
    m.count("deltas", deltas.len());
    m.count("archive_bytes", bytes.len());
    m.count("native_scene_bytes", native);
    m.count("size_ratio", bytes.len() as f64 / native as f64);
    m.write(&stage)?;
    stage.commit()
}

pub fn import(cfg: &RunConfig, scene_path: &Path, archive: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("import", json!({ "config": cfg }))?;
    inputs(&mut m, &[scene_path, archive])?;
    let base = scene(scene_path)?;
    let header = read_portable::<f64>(archive)?;
    let scenes = import_portable(archive, &base)?;

    let stage = Staging::new(out)?;
    let mut fps = Vec::new();
    for (n, s) in scenes.iter().enumerate() {
        io::save_scene(&stage.path(format!("scene_{n:04}.pcmv")), s)?;
        fps.push(fp_hex(s));
    }
    m.count("base_ref", header.base_ref);
    m.count("scenes", scenes.len());
    m.count("fingerprints", fps);
    m.write(&stage)?;
    stage.commit()
}

pub fn project(cfg: &RunConfig, changes: &Path, views: &[PathBuf]) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("project", json!({ "config": cfg }))?;
    inputs(&mut m, &[changes])?;
    inputs(&mut m, &views.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let changes = io::load_changes(changes)?;
    let params = cfg.occlusion();

    let stage = Staging::new(out)?;
    let mut per_view = Vec::new();
    for (n, dir) in views.iter().enumerate() {
        let v = load_view(dir)?;
        let (_, mask) = build_change_mask_with(&changes, &v.camera, &v.depth, &params)?;
        io::save_mask_png(&stage.path(mask_name(n)), &mask.raster)?;
        io::save_json(&stage.path(format!("mask_{n:04}.json")), &mask.sidecar())?;
        per_view.push(json!({
            "view": dir.display().to_string(),
            "mask_pixels": mask.raster.count(),
            "survivors": mask.objects.iter().map(|o| o.survivors).sum::<usize>(),
        }));
    }
    m.count("views", per_view);
    m.write(&stage)?;
    stage.commit()
}

fn load_masks(dir: &Path) -> Result<Vec<Mask>> {
    let files = io::list_files(dir, "png").with_context(|| format!("reading mask directory {}", dir.display()))?;
    for (n, f) in files.iter().enumerate() {
        if f.file_name().map(|s| s.to_string_lossy().into_owned()) != Some(mask_name(n)) {
            bail!("mask directory {} is not a contiguous mask_NNNN.png sequence", dir.display());
        }
    }
    files
        .iter()
        .map(|f| io::load_mask_png(f).with_context(|| format!("loading mask {}", f.display())))
        .collect()
}

pub fn delete(cfg: &RunConfig, scene_path: &Path, views: &[PathBuf], masks_dir: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("delete", json!({ "config": cfg }))?;
    inputs(&mut m, &[scene_path, masks_dir])?;
    inputs(&mut m, &views.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let p_out = scene(scene_path)?;
    let masks = load_masks(masks_dir)?;
    if masks.len() != views.len() {
        bail!("{} views but {} masks", views.len(), masks.len());
    }
    let params = cfg.occlusion();
    let mut deleted = BTreeSet::new();
    let mut visibility = Vec::new();
    for (n, dir) in views.iter().enumerate() {
        let v = load_view(dir)?;
        let pred = predict_deletions(&p_out, &masks[n], &v.camera, &v.depth, &params)
            .with_context(|| format!("view {}", dir.display()))?;
        visibility.push(json!({ "view": n, "visibility": pred.visibility, "deleted": pred.keys.len() }));
        deleted.extend(pred.keys);
    }
    let updated = updated_scene(&p_out, &deleted, &BTreeSet::new());

    let stage = Staging::new(out)?;
    io::save_cloud(&stage.path("p_del.ply"), &centers(&p_out, &deleted)?)?;
    io::save_scene(&stage.path("updated.pcmv"), &updated)?;
    io::save_json(&stage.path("visibility.json"), &visibility)?;
    m.count("deletions", deleted.len());
    m.count("voxels", updated.len());
    m.write(&stage)?;
    stage.commit()
}

pub fn add(cfg: &RunConfig, scene_path: &Path, batches: &[PathBuf], masks_dir: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("add", json!({ "config": cfg }))?;
    inputs(&mut m, &[scene_path, masks_dir])?;
    inputs(&mut m, &batches.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let grid = scene(scene_path)?;
    let masks = load_masks(masks_dir)?;

    let mut clouds = Vec::new();
    let mut registrations = Vec::new();
    for dir in batches {
        let ctx = || format!("batch {}", dir.display());
        let ply: PlyData = io::load_ply(&dir.join("prediction.ply")).with_context(ctx)?;
        let (Some(pixels), Some(image_index)) = (ply.pixels.clone(), ply.image_index.clone()) else {
            bail!("batch {}: prediction.ply needs u, v and image_index", dir.display());
        };
        let corr = io::parse_correspondences(&fs::read_to_string(dir.join("correspondences.txt")).with_context(ctx)?)
            .with_context(ctx)?;
        let pred = PredictedReconstruction::new(ply.to_cloud()?, pixels, image_index, &masks).with_context(ctx)?;
        let added = register_addition_rasters(&pred, &corr, &masks).with_context(ctx)?;
        registrations.push(match &added.registration {
            Some(r) => json!({
                "batch": dir.display().to_string(),
                "masked_points": pred.masked_count(),
                "scale": r.transform.scale(),
                "rotation": r.transform.rotation().transpose().as_slice(),
                "translation": r.transform.translation().as_slice(),
                "rmse": r.rmse,
            }),
            None => json!({ "batch": dir.display().to_string(), "masked_points": 0 }),
        });
        clouds.push(added.cloud);
    }
    let keys = accumulate_additions(&grid, &clouds)?;
    let updated = updated_scene(&grid, &BTreeSet::new(), &keys);
    let new_keys: BTreeSet<_> = keys.iter().filter(|k| !grid.contains(k)).copied().collect();

    let stage = Staging::new(out)?;
    io::save_cloud(&stage.path("p_add.ply"), &PointCloud::concat(&clouds)?)?;
    io::save_cloud(&stage.path("added_voxels.ply"), &centers(&grid, &new_keys)?)?;
    io::save_json(&stage.path("registration.json"), &registrations)?;
    io::save_scene(&stage.path("updated.pcmv"), &updated)?;
    m.count("points", clouds.iter().map(PointCloud::len).sum::<usize>());
    m.count("added_voxels", new_keys.len());
    m.count("voxels", updated.len());
    m.write(&stage)?;
    stage.commit()
}

pub fn eval(cfg: &RunConfig, outdated: &Path, updated: &Path, truth: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("eval", json!({ "config": cfg }))?;
    inputs(&mut m, &[outdated, updated, truth])?;
    let diff = diff_sets(&scene(outdated)?, &scene(updated)?, &scene(truth)?)?;
    let backend = if cfg.oracle {
        DistanceBackend::Exhaustive
    } else {
        DistanceBackend::Indexed
    };
    let report = evaluate_update(&diff, backend);

    let stage = Staging::new(out)?;
    io::save_json(&stage.path("report.json"), &report)?;
    m.count("backend", backend);
    m.count("predicted_added", diff.predicted.added.len());
    m.count("predicted_deleted", diff.predicted.deleted.len());
    m.count("truth_added", diff.truth.added.len());
    m.count("truth_deleted", diff.truth.deleted.len());
    m.write(&stage)?;
    stage.commit()
}

/// Edit script that turns the bundle's current map into its outdated map:
/// the static removal cuboids, then the patch insertions in delta order.
fn outdating_script(b: &SynthBundle) -> Result<EditScript> {
    let mut operations = Vec::new();
    for c in &b.cuboids {
        if !b.taxonomy.is_dynamic(c.label())? {
            operations.push(EditOp::DeleteCuboid(CuboidRecord::from_cuboid(c)));
        }
    }
    for ins in &b.delta.insertions {
        let r = ins.placement.rotation();
        let t = ins.placement.translation();
        operations.push(EditOp::Insert {
            patch: ins.patch_id.clone(),
            xy: [t.x, t.y],
            yaw: r[(1, 0)].atan2(r[(0, 0)]),
        });
    }
    Ok(EditScript { operations })
}

/// Subsampled rays per pixel axis and correspondence stride of the
/// fixture's oracle predictor.
const ORACLE_SUBSAMPLES: u32 = 2;
const ORACLE_STRIDE: usize = 7;

pub fn synth(cfg: &RunConfig, recipe_path: Option<&Path>, tall: bool) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut m = Manifest::new("synth", json!({ "config": cfg, "tall": tall }))?;
    let mut recipe = match recipe_path {
        Some(p) => {
            m.input(p)?;
            io::load_json::<SceneRecipe>(p)?
        }
        None if tall => SceneRecipe::tall_building(0),
        None => SceneRecipe::default(),
    };
    if let Some(s) = cfg.seed {
        recipe.seed = s;
    }
    if let Some(r) = cfg.resolution {
        recipe.resolution = r;
    }
    let b = generate(&recipe)?;
    let params = cfg.occlusion();

    let stage = Staging::new(out)?;
    io::save_json(&stage.path("recipe.json"), &b.recipe)?;
    io::save_json(&stage.path("taxonomy.json"), &b.taxonomy)?;
    io::save_cuboids(&stage.path("cuboids.json"), &b.cuboids)?;
    io::save_ground(&stage.path("ground.json"), &b.ground)?;
    io::save_patch_db(&stage.path("patches"), &b.patches)?;
    io::save_scans(&stage.path("survey"), &b.survey)?;
    io::save_scene(&stage.path("p_out.pcmv"), &b.p_out)?;
    io::save_scene(&stage.path("p_star_upd.pcmv"), &b.p_star_upd)?;
    io::save_delta(&stage.path("delta.json"), &b.delta)?;
    io::save_json(&stage.path("edit_script.json"), &outdating_script(&b)?)?;
    let changes = b.changes();
    io::save_changes(&stage.path("changes"), &changes)?;

    let mut batches = 0;
    for (n, v) in b.views.iter().enumerate() {
        let dir = stage.path(format!("views/view_{n:04}"));
        fs::create_dir_all(&dir)?;
        io::save_json(&dir.join("camera.json"), &CameraRecord::from_camera(&v.camera))?;
        io::save_scans(&dir.join("scan"), std::slice::from_ref(&v.scan))?;
        io::save_json(&dir.join("view.json"), &json!({ "object": v.object, "kind": v.kind, "clear": v.clear }))?;
        if v.kind != ChangeKind::Added {
            continue;
        }
        // a pixel-perfect predictor in its own frame, correspondences
        // drawn outside the change mask
        let (_, mask) = build_change_mask(&changes, &v.camera, &v.scan, &params)?;
        let (pred, corr) = b.oracle_prediction(n, &mask.raster, &b.predictor_frame(n), ORACLE_SUBSAMPLES, ORACLE_STRIDE)?;
        let dir = stage.path(format!("predictions/batch_{n:04}"));
        fs::create_dir_all(&dir)?;
        io::save_ply(
            &dir.join("prediction.ply"),
            &PlyData {
                points: pred.cloud().points().to_vec(),
                ids: None,
                pixels: Some(pred.pixels().to_vec()),
                image_index: Some(vec![n as u32; pred.cloud().len()]),
            },
        )?;
        fs::write(dir.join("correspondences.txt"), io::format_correspondences(&corr))?;
        batches += 1;
    }
    io::save_json(
        &stage.path("truth.json"),
        &json!({
            "added": b.truth.truth.added.len(),
            "deleted": b.truth.truth.deleted.len(),
            "p_out_fingerprint": fp_hex(&b.p_out),
            "p_star_upd_fingerprint": fp_hex(&b.p_star_upd),
        }),
    )?;
    m.count("voxels", b.p_star_upd.len());
    m.count("views", b.views.len());
    m.count("prediction_batches", batches);
    m.count("truth_added", b.truth.truth.added.len());
    m.count("truth_deleted", b.truth.truth.deleted.len());
    m.write(&stage)?;
    stage.commit()
}
