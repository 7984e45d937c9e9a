//! Deterministic synthetic fixtures: a voxel-aligned world (ground layer,
//! box buildings, poles, signs, parked vehicles), ground-truth edits that
//! turn the current map into an outdated one, camera rigs aimed at every
//! changed object and raycast scans of the current world.
//!
//! Every object is an open-bottom box shell on the voxel grid. For
//! raycasting, a box is the hull of its voxel centers grown by a quarter
//! voxel sideways and upwards and extended down to the ground plane, which
//! runs through the centers of the ground layer (`k = -1`). Surfaces thus
//! stay within a quarter voxel of the voxel centers they stand for.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edit::{apply_delta, delete_by_cuboid, insert_patch, EditDelta, GroundModel, Patch, PatchDatabase};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, Mask, PointCloud, RigidTransform, SimilarityTransform};
use crate::metrics::{diff_sets, DiffResult};
use crate::project::{ChangeKind, ChangeObject, ChangeSet3D};
use crate::scene::{build_scene, Cuboid, LabelTaxonomy, PosedScan, VoxelKey, VoxelScene};
use crate::update::{CorrespondenceSet, PredictedReconstruction};

const STREAM_LAYOUT: u64 = 1;
const STREAM_VIEWS: u64 = 2;
const STREAM_OBSTACLES: u64 = 3;
const STREAM_SURVEY: u64 = 4;
const STREAM_PATCHES: u64 = 5;
const STREAM_FRAMES: u64 = 6;

const EDIT_LABELS: [&str; 5] = ["SIGN", "CONSTRUCTION_BARREL", "MESSAGE_BOARD_TRAILER", "TRAFFIC_LIGHT_TRAILER", "BOLLARD"];
const VEHICLE_LABEL: &str = "REGULAR_VEHICLE";

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal_px: 240.0,
        }
    }
}

/// Generator input. Identical recipes give identical bundles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRecipe {
    pub seed: u64,
    /// Side of the square scene `[0, extent]²`, meters.
    pub extent_m: f64,
    pub resolution: f64,
    pub buildings: usize,
    pub poles: usize,
    pub signs: usize,
    /// Parked vehicles: present in raw scans, filtered from the map.
    pub vehicles: usize,
    /// Objects of the current world missing from the outdated map.
    pub removed_objects: usize,
    /// Patches inserted into the outdated map that no longer exist.
    pub inserted_objects: usize,
    /// Height of an extra inserted structure taller than the cameras see.
    pub tall_structure_m: Option<f64>,
    pub cameras_per_object: usize,
    /// Number of views of inserted objects that get a wall in front.
    pub occluded_views: usize,
    pub image: ImageSpec,
    pub survey_scans: usize,
    pub points_per_voxel: usize,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: 40.0,
            resolution: 0.2,
            buildings: 2,
            poles: 6,
            signs: 4,
            vehicles: 3,
            removed_objects: 2,
            inserted_objects: 2,
            tall_structure_m: None,
            cameras_per_object: 4,
            occluded_views: 0,
            image: ImageSpec::default(),
            survey_scans: 4,
            points_per_voxel: 2,
        }
    }
}

impl SceneRecipe {
    /// A single removed structure far taller than the cameras' vertical
    /// coverage.
    pub fn tall_building(seed: u64) -> Self {
        Self {
            seed,
            extent_m: 30.0,
            buildings: 0,
            poles: 2,
            signs: 2,
            vehicles: 1,
            removed_objects: 0,
            inserted_objects: 0,
            tall_structure_m: Some(12.0),
            cameras_per_object: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("recipe: {m}")));
        if !(self.extent_m.is_finite() && self.extent_m > 0.0) {
            return bad("extent must be positive");
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.extent_m / self.resolution > 4096.0 {
            return bad("extent too large for the resolution");
        }
        if self.image.width == 0 || self.image.height == 0 || !(self.image.focal_px > 0.0) {
            return bad("image size and focal length must be positive");
        }
        if self.points_per_voxel == 0 || self.survey_scans == 0 {
            return bad("need at least one survey scan and one point per voxel");
        }
        if let Some(h) = self.tall_structure_m {
            if !(h.is_finite() && h >= 4.0) {
                return bad("tall structure must be at least 4 m");
            }
        }
        let del_views = (self.inserted_objects + usize::from(self.tall_structure_m.is_some())) * self.cameras_per_object;
        if self.occluded_views > del_views {
            return Err(Error::InfeasibleRecipe(format!(
                "{} occluded views requested but only {del_views} deletion views",
                self.occluded_views
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box used for raycasting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// Entry distance of the ray `o + t d`, `t > 0`.
    pub fn hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut n, mut f) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 1e-9).then_some(t0)
    }
}

/// Raycastable current world: ground plane plus boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub ground_z: f64,
    /// Ground exists over `[0, ground_extent)²`.
    pub ground_extent: f64,
    pub boxes: Vec<Aabb>,
}

impl SynthWorld {
    pub fn raycast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut best = None::<f64>;
        if d.z != 0.0 {
            let t = (self.ground_z - o.z) / d.z;
            let p = o + d * t;
            if t > 1e-9 && (0.0..self.ground_extent).contains(&p.x) && (0.0..self.ground_extent).contains(&p.y) {
                best = Some(t);
            }
        }
        for b in &self.boxes {
            if let Some(t) = b.hit(o, d) {
                if best.is_none_or(|bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }

    /// One ray per pixel center; hits are returned in the camera frame and
    /// posed with the camera pose.
    pub fn render_scan(&self, cam: &CameraModel<f64>, timestamp_ns: i64) -> PosedScan<f64> {
        let pose = cam.pose();
        let origin = Point3::from(*pose.translation());
        let rows: Vec<Vec<Point3<f64>>> = (0..cam.height())
            .into_par_iter()
            .map(|y| {
                (0..cam.width())
                    .filter_map(|x| {
                        let dc = Vector3::new(
                            (x as f64 + 0.5 - cam.cx()) / cam.fx(),
                            (y as f64 + 0.5 - cam.cy()) / cam.fy(),
                            1.0,
                        );
                        let t = self.raycast(&origin, &(pose.rotation() * dc))?;
                        Some(Point3::from(dc * t))
                    })
                    .collect()
            })
            .collect();
        let cloud = PointCloud::new(rows.concat()).expect("finite hits");
        PosedScan::new(cloud, pose, timestamp_ns)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Background,
    Vehicle,
    Removed,
    Inserted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn gap(&self, o: &Rect) -> f64 {
        let dx = (self.x0 - o.x1).max(o.x0 - self.x1).max(0.0);
        let dy = (self.y0 - o.y1).max(o.y0 - self.y1).max(0.0);
        dx.hypot(dy)
    }

    /// Whether segment `a-b` passes through the rect grown by `c`.
    fn near_segment(&self, a: [f64; 2], b: [f64; 2], c: f64) -> bool {
        let lo = [self.x0 - c, self.y0 - c];
        let hi = [self.x1 + c, self.y1 + c];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for ax in 0..2 {
            let d = b[ax] - a[ax];
            if d.abs() < 1e-12 {
                if a[ax] < lo[ax] || a[ax] > hi[ax] {
                    return false;
                }
                continue;
            }
            let (mut n, mut f) = ((lo[ax] - a[ax]) / d, (hi[ax] - a[ax]) / d);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

/// Open-bottom box shell on the voxel grid.
#[derive(Clone, Debug, PartialEq)]
struct Block {
    i0: i32,
    j0: i32,
    ni: i32,
    nj: i32,
    nk: i32,
    label: String,
    role: Role,
}

impl Block {
    fn rect(&self, res: f64) -> Rect {
        Rect {
            x0: self.i0 as f64 * res,
            y0: self.j0 as f64 * res,
            x1: (self.i0 + self.ni) as f64 * res,
            y1: (self.j0 + self.nj) as f64 * res,
        }
    }

    fn local_keys(&self) -> Vec<VoxelKey> {
        let mut v = Vec::new();
        for i in 0..self.ni {
            for j in 0..self.nj {
                for k in 0..self.nk {
                    let side = i == 0 || j == 0 || i == self.ni - 1 || j == self.nj - 1;
                    if side || k == self.nk - 1 {
                        v.push(VoxelKey::new(i, j, k));
                    }
                }
            }
        }
        v
    }

    fn keys(&self) -> Vec<VoxelKey> {
        self.local_keys().into_iter().map(|k| k.offset(self.i0, self.j0, 0)).collect()
    }

    fn aabb(&self, res: f64) -> Aabb {
        let q = 0.25 * res;
        Aabb {
            min: Point3::new(
                (self.i0 as f64 + 0.5) * res - q,
                (self.j0 as f64 + 0.5) * res - q,
                -0.5 * res,
            ),
            max: Point3::new(
                (self.i0 + self.ni) as f64 * res - 0.5 * res + q,
                (self.j0 + self.nj) as f64 * res - 0.5 * res + q,
                (self.nk as f64 - 0.5) * res + q,
            ),
        }
    }

    fn center(&self, res: f64) -> Point3<f64> {
        let r = self.rect(res);
        Point3::new((r.x0 + r.x1) / 2.0, (r.y0 + r.y1) / 2.0, self.nk as f64 * res / 2.0)
    }

    /// Cuboid covering the block's cells (all raw points), above the ground.
    fn cell_cuboid(&self, res: f64) -> Result<Cuboid<f64>> {
        let r = self.rect(res);
        Cuboid::axis_aligned(
            Point3::new(r.x0, r.y0, 0.0),
            Point3::new(r.x1, r.y1, self.nk as f64 * res),
            self.label.clone(),
        )
    }

    /// Cuboid holding exactly this block's voxel centers.
    fn cuboid(&self, res: f64) -> Result<Cuboid<f64>> {
        let b = self.aabb(res);
        Cuboid::axis_aligned(Point3::new(b.min.x, b.min.y, 0.0), b.max, self.label.clone())
    }
}

/// A changed object with its ground-truth voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthObject {
    pub id: String,
    pub kind: ChangeKind,
    pub label: String,
    pub keys: BTreeSet<VoxelKey>,
    pub bounds: Aabb,
    /// Height of the structure, meters.
    pub height: f64,
}

/// One camera aimed at a changed object, with its raycast scan of the
/// current world.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthView {
    pub camera: CameraModel<f64>,
    pub scan: PosedScan<f64>,
    pub object: String,
    pub kind: ChangeKind,
    /// False when a wall was placed between the camera and the object.
    pub clear: bool,
}

#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub recipe: SceneRecipe,
    /// Ground-truth current map.
    pub p_star_upd: VoxelScene<f64>,
    /// Outdated map, `apply_delta(p_star_upd, delta)`.
    pub p_out: VoxelScene<f64>,
    pub delta: EditDelta<f64>,
    pub taxonomy: LabelTaxonomy,
    /// Dynamic vehicle cuboids followed by the static removal cuboids.
    pub cuboids: Vec<Cuboid<f64>>,
    pub survey: Vec<PosedScan<f64>>,
    pub patches: PatchDatabase<f64>,
    pub ground: GroundModel<f64>,
    pub objects: Vec<SynthObject>,
    pub views: Vec<SynthView>,
    pub truth: DiffResult<f64>,
    pub world: SynthWorld,
}

/// Camera at `eye` looking at `target`, +z up in the world.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>, image: &ImageSpec) -> Result<CameraModel<f64>> {
    let z = (target - eye).normalize();
    let x = z.cross(&Vector3::z());
    if x.norm() < 1e-9 {
        return Err(Error::Invalid("camera looks straight up or down".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let ext = RigidTransform::new(r, -(r * eye.coords))?;
    CameraModel::new(
        image.focal_px,
        image.focal_px,
        image.width as f64 / 2.0,
        image.height as f64 / 2.0,
        image.width,
        image.height,
        ext,
    )
}

struct Layout {
    changed: Vec<Block>,
    /// (eye, target, object index, clear)
    views: Vec<(Point3<f64>, Point3<f64>, usize, bool)>,
    obstacles: Vec<Block>,
}

fn random_block(rng: &mut ChaCha8Rng, n: i32, size: (i32, i32, i32), margin: i32) -> Option<(i32, i32)> {
    let (ni, nj, _) = size;
    let hi_i = n - margin - ni;
    let hi_j = n - margin - nj;
    if hi_i < margin || hi_j < margin {
        return None;
    }
    Some((rng.random_range(margin..=hi_i), rng.random_range(margin..=hi_j)))
}

fn infeasible(what: &str) -> Error {
    Error::InfeasibleRecipe(format!("could not place {what} within the extent"))
}

fn layout(recipe: &SceneRecipe) -> Result<Layout> {
    let res = recipe.resolution;
    let n = (recipe.extent_m / res).floor() as i32;
    let vox = |m: f64| (m / res).round().max(1.0) as i32;
    let mut rng = stream(recipe.seed, STREAM_LAYOUT);
    let mut vrng = stream(recipe.seed, STREAM_VIEWS);

    let mut specs: Vec<(Role, (i32, i32, i32), String)> = Vec::new();
    for _ in 0..recipe.removed_objects {
        let size = (rng.random_range(3..=12), rng.random_range(3..=12), rng.random_range(4..=10));
        specs.push((Role::Removed, size, EDIT_LABELS[rng.random_range(0..EDIT_LABELS.len())].into()));
    }
    for _ in 0..recipe.inserted_objects {
        let size = (rng.random_range(3..=12), rng.random_range(3..=12), rng.random_range(4..=10));
        specs.push((Role::Inserted, size, EDIT_LABELS[rng.random_range(0..EDIT_LABELS.len())].into()));
    }
    if let Some(h) = recipe.tall_structure_m {
        specs.push((Role::Inserted, (vox(3.0), vox(3.0), vox(h)), "BUILDING".into()));
    }

    'attempt: for _ in 0..200 {
        let mut changed: Vec<Block> = Vec::new();
        for (role, size, label) in &specs {
            let mut placed = false;
            for _ in 0..200 {
                let Some((i0, j0)) = random_block(&mut rng, n, *size, vox(1.0)) else {
                    return Err(infeasible("changed objects"));
                };
                let b = Block {
                    i0,
                    j0,
                    ni: size.0,
                    nj: size.1,
                    nk: size.2,
                    label: label.clone(),
                    role: *role,
                };
                if changed.iter().all(|c| c.rect(res).gap(&b.rect(res)) >= 9.0) {
                    changed.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }

        let mut views = Vec::new();
        for (idx, b) in changed.iter().enumerate() {
            let c = b.center(res);
            let r = b.rect(res);
            let half = (r.x1 - r.x0).max(r.y1 - r.y0) / 2.0;
            let top = b.nk as f64 * res;
            let mut ok = false;
            for _ in 0..30 {
                // added objects are viewed face-on: oblique faces change
                // depth faster than the occlusion tolerance across pixels
                let base = if b.role == Role::Removed { 0.0 } else { vrng.random_range(0.0..TAU) };
                let mut cand = Vec::new();
                for m in 0..recipe.cameras_per_object {
                    let az = base + m as f64 * TAU / recipe.cameras_per_object as f64 + vrng.random_range(-0.17..0.17);
                    let (eye, target) = if b.role == Role::Removed {
                        let d = 6.0;
                        (
                            Point3::new(c.x + d * az.cos(), c.y + d * az.sin(), top + 5.0),
                            c,
                        )
                    } else {
                        let d = vrng.random_range(8.0..9.0) + (half - 1.2).max(0.0);
                        let tz = if top > 2.5 { 1.5 } else { top / 2.0 };
                        (
                            Point3::new(c.x + d * az.cos(), c.y + d * az.sin(), 2.5),
                            Point3::new(c.x, c.y, tz),
                        )
                    };
                    cand.push((eye, target, idx, true));
                }
                let blocked = cand.iter().any(|(eye, _, _, _)| {
                    changed
                        .iter()
                        .enumerate()
                        .any(|(o, ob)| o != idx && ob.rect(res).near_segment([eye.x, eye.y], [c.x, c.y], 1.5))
                });
                if !blocked {
                    views.extend(cand);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'attempt;
            }
        }

        // walls in front of some deletion views
        let mut obstacles: Vec<Block> = Vec::new();
        let del_views: Vec<usize> = (0..views.len()).filter(|&v| changed[views[v].2].role == Role::Inserted).collect();
        let mut walls = 0;
        for &v in &del_views {
            if walls == recipe.occluded_views {
                break;
            }
            let (eye, _, idx, _) = views[v];
            let c = changed[idx].center(res);
            let p = c + (Point3::new(eye.x, eye.y, c.z) - c) * 0.45;
            let along_x = (eye.x - c.x).abs() > (eye.y - c.y).abs();
            let (ni, nj) = if along_x { (2, 16) } else { (16, 2) };
            let w = Block {
                i0: (p.x / res).floor() as i32 - ni / 2,
                j0: (p.y / res).floor() as i32 - nj / 2,
                ni,
                nj,
                nk: 15,
                label: "WALL".into(),
                role: Role::Background,
            };
            let wr = w.rect(res);
            let inside = w.i0 >= 0 && w.j0 >= 0 && w.i0 + ni <= n && w.j0 + nj <= n;
            let clear_of_objects = changed
                .iter()
                .enumerate()
                .all(|(o, ob)| ob.rect(res).gap(&wr) >= if o == idx { 1.0 } else { 4.0 });
            let clear_of_views = views.iter().enumerate().all(|(u, (e, _, o, _))| {
                u == v || {
                    let oc = changed[*o].center(res);
                    !wr.near_segment([e.x, e.y], [oc.x, oc.y], 1.0)
                }
            });
            if inside && clear_of_objects && clear_of_views {
                obstacles.push(w);
                views[v].3 = false;
                walls += 1;
            }
        }
        if walls < recipe.occluded_views {
            continue 'attempt;
        }
        return Ok(Layout {
            changed,
            views,
            obstacles,
        });
    }
    Err(infeasible("changed objects and their cameras"))
}

fn place_obstacles(recipe: &SceneRecipe, lay: &mut Layout) -> Result<()> {
    let res = recipe.resolution;
    let n = (recipe.extent_m / res).floor() as i32;
    let mut rng = stream(recipe.seed, STREAM_OBSTACLES);
    let mut specs: Vec<(Role, (i32, i32, i32), &str)> = Vec::new();
    for _ in 0..recipe.buildings {
        specs.push((
            Role::Background,
            (rng.random_range(20..=40), rng.random_range(20..=40), rng.random_range(20..=40)),
            "BUILDING",
        ));
    }
    for _ in 0..recipe.poles {
        specs.push((Role::Background, (1, 1, rng.random_range(15..=30)), "POLE"));
    }
    for _ in 0..recipe.signs {
        let (a, b) = if rng.random_bool(0.5) { (1, 4) } else { (4, 1) };
        specs.push((Role::Background, (a, b, rng.random_range(10..=15)), "SIGN"));
    }
    for _ in 0..recipe.vehicles {
        let (a, b) = if rng.random_bool(0.5) { (20, 9) } else { (9, 20) };
        specs.push((Role::Vehicle, (a, b, 8), VEHICLE_LABEL));
    }
    let centers: Vec<Point3<f64>> = lay.views.iter().map(|(_, _, o, _)| lay.changed[*o].center(res)).collect();
    for (role, size, label) in specs {
        let mut placed = false;
        for _ in 0..500 {
            let Some((i0, j0)) = random_block(&mut rng, n, size, 0) else {
                return Err(infeasible(label));
            };
            let b = Block {
                i0,
                j0,
                ni: size.0,
                nj: size.1,
                nk: size.2,
                label: label.to_string(),
                role,
            };
            let r = b.rect(res);
            let ok = lay.changed.iter().all(|c| c.rect(res).gap(&r) >= 4.0)
                && lay.obstacles.iter().all(|o| o.rect(res).gap(&r) >= 1.0)
                && lay
                    .views
                    .iter()
                    .zip(&centers)
                    .all(|((e, _, _, _), c)| !r.near_segment([e.x, e.y], [c.x, c.y], 1.5));
            if ok {
                lay.obstacles.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(infeasible(label));
        }
    }
    Ok(())
}

fn jittered(rng: &mut ChaCha8Rng, key: &VoxelKey, res: f64, count: usize, out: &mut Vec<Point3<f64>>) {
    for _ in 0..count {
        out.push(Point3::new(
            (key.i as f64 + rng.random_range(0.1..0.9)) * res,
            (key.j as f64 + rng.random_range(0.1..0.9)) * res,
            (key.k as f64 + rng.random_range(0.1..0.9)) * res,
        ));
    }
}

/// Builds the full fixture for `recipe`.
pub fn generate(recipe: &SceneRecipe) -> Result<SynthBundle> {
    recipe.validate()?;
    let res = recipe.resolution;
    let n = (recipe.extent_m / res).floor() as i32;
    let mut lay = layout(recipe)?;
    place_obstacles(recipe, &mut lay)?;
    let taxonomy = LabelTaxonomy::default();

    // current static world: ground layer, background, removed objects
    let mut static_keys: BTreeSet<VoxelKey> = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            static_keys.insert(VoxelKey::new(i, j, -1));
        }
    }
    for b in lay.obstacles.iter().chain(&lay.changed) {
        if matches!(b.role, Role::Background | Role::Removed) {
            static_keys.extend(b.keys());
        }
    }
    let vehicles: Vec<&Block> = lay.obstacles.iter().filter(|b| b.role == Role::Vehicle).collect();

    // raw survey split over posed scans
    let mut rng = stream(recipe.seed, STREAM_SURVEY);
    let mut world_pts = Vec::new();
    for k in &static_keys {
        jittered(&mut rng, k, res, recipe.points_per_voxel, &mut world_pts);
    }
    for v in &vehicles {
        for k in v.keys() {
            jittered(&mut rng, &k, res, recipe.points_per_voxel, &mut world_pts);
        }
    }
    let poses: Vec<RigidTransform<f64>> = (0..recipe.survey_scans)
        .map(|_| {
            RigidTransform::from_yaw(
                rng.random_range(0.0..TAU),
                Vector3::new(
                    rng.random_range(0.0..recipe.extent_m),
                    rng.random_range(0.0..recipe.extent_m),
                    1.8,
                ),
            )
        })
        .collect();
    let mut per_scan: Vec<Vec<Point3<f64>>> = vec![Vec::new(); poses.len()];
    for p in world_pts {
        let s = rng.random_range(0..poses.len());
        per_scan[s].push(poses[s].inverse().apply(&p));
    }
    let survey: Vec<PosedScan<f64>> = per_scan
        .into_iter()
        .zip(&poses)
        .enumerate()
        .map(|(s, (pts, pose))| Ok(PosedScan::new(PointCloud::new(pts)?, *pose, s as i64 * 100_000_000)))
        .collect::<Result<_>>()?;

    let mut cuboids = vehicles.iter().map(|v| v.cell_cuboid(res)).collect::<Result<Vec<_>>>()?;
    let p_star_upd = build_scene(&survey, &cuboids, &taxonomy, res, Point3::origin())?;
    if !p_star_upd.keys().eq(static_keys.iter()) {
        return Err(Error::Invalid("survey did not reproduce the static world".into()));
    }

    // edits turning the current map into the outdated one
    let ground = GroundModel::flat(1.0, 0.0, (0, recipe.extent_m.ceil() as i32), (0, recipe.extent_m.ceil() as i32))?;
    let mut patches = PatchDatabase::new();
    let mut prng = stream(recipe.seed, STREAM_PATCHES);
    let mut delta = EditDelta::empty(&p_star_upd);
    let mut objects = Vec::new();
    let (mut n_add, mut n_del) = (0, 0);
    for b in &lay.changed {
        let (id, kind, keys) = if b.role == Role::Removed {
            let c = b.cuboid(res)?;
            let d = delete_by_cuboid(&p_star_upd, &c, &taxonomy)?;
            cuboids.push(c);
            let keys = d.removed_keys.clone();
            delta = delta.union(d)?;
            n_add += 1;
            (format!("add-{}", n_add - 1), ChangeKind::Added, keys)
        } else {
            let id = format!("del-{n_del}");
            n_del += 1;
            let mut pts = Vec::new();
            for k in b.local_keys() {
                jittered(&mut prng, &k, res, recipe.points_per_voxel, &mut pts);
            }
            // pin the lowest point to the jitter floor so normalization
            // shifts every point by the same sub-cell amount
            pts[0].z = 0.1 * res;
            patches.add(Patch::normalized(format!("patch-{id}"), PointCloud::new(pts)?, b.label.clone())?)?;
            let d = insert_patch(
                &p_star_upd,
                &patches,
                &format!("patch-{id}"),
                [b.i0 as f64 * res, b.j0 as f64 * res],
                0.0,
                &ground,
            )?;
            let keys = d.inserted_keys();
            delta = delta.union(d)?;
            (id, ChangeKind::Deleted, keys)
        };
        let expected: BTreeSet<VoxelKey> = b.keys().into_iter().collect();
        if keys != expected {
            return Err(Error::Invalid(format!("edit of {id} did not hit its voxels")));
        }
        objects.push(SynthObject {
            id,
            kind,
            label: b.label.clone(),
            keys,
            bounds: b.aabb(res),
            height: b.nk as f64 * res,
        });
    }
    let p_out = apply_delta(&p_star_upd, &delta)?;
    let truth = diff_sets(&p_out, &p_star_upd, &p_star_upd)?;

    let world = SynthWorld {
        ground_z: -0.5 * res,
        ground_extent: n as f64 * res,
        boxes: lay
            .obstacles
            .iter()
            .chain(&lay.changed)
            .filter(|b| b.role != Role::Inserted)
            .map(|b| b.aabb(res))
            .collect(),
    };
    let views = lay
        .views
        .iter()
        .enumerate()
        .map(|(i, (eye, target, o, clear))| {
            let camera = look_at(*eye, *target, &recipe.image)?;
            Ok(SynthView {
                scan: world.render_scan(&camera, i as i64 * 100_000_000),
                camera,
                object: objects[*o].id.clone(),
                kind: objects[*o].kind,
                clear: *clear,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SynthBundle {
        recipe: recipe.clone(),
        p_star_upd,
        p_out,
        delta,
        taxonomy,
        cuboids,
        survey,
        patches,
        ground,
        objects,
        views,
        truth,
        world,
    })
}

impl SynthBundle {
    pub fn object(&self, id: &str) -> Option<&SynthObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Ground-truth 3D changes: added objects from the current map,
    /// deleted ones from the outdated map.
    pub fn changes(&self) -> ChangeSet3D<f64> {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let scene = match o.kind {
                    ChangeKind::Added => &self.p_star_upd,
                    ChangeKind::Deleted => &self.p_out,
                };
                ChangeObject {
                    object_id: o.id.clone(),
                    cloud: PointCloud::new(o.keys.iter().map(|k| scene.center(k)).collect()).expect("finite"),
                    kind: o.kind,
                }
            })
            .collect();
        ChangeSet3D::new(objects).expect("generated objects are non-empty and unique")
    }

    /// Fixed map -> predictor similarity of one view, so predictions come
    /// in an arbitrary frame and scale as a monocular predictor's would.
    pub fn predictor_frame(&self, view: usize) -> SimilarityTransform<f64> {
        random_similarity(&mut stream(self.recipe.seed, STREAM_FRAMES | ((view as u64) << 8)))
    }

    /// A perfect pixel-aligned predictor for one view: `subsamples²` rays
    /// per pixel hit the current world, and hits are expressed in a frame
    /// related to the map by `frame` (map -> predictor). Correspondences
    /// pair every `stride`-th unmasked hit with its map position.
    pub fn oracle_prediction(
        &self,
        view: usize,
        mask: &Mask,
        frame: &SimilarityTransform<f64>,
        subsamples: u32,
        stride: usize,
    ) -> Result<(PredictedReconstruction<f64>, CorrespondenceSet<f64>)> {
        let cam = &self.views.get(view).ok_or_else(|| Error::Invalid(format!("no view {view}")))?.camera;
        if (mask.width(), mask.height()) != (cam.width(), cam.height()) {
            return Err(Error::MaskSize {
                mask_w: mask.width(),
                mask_h: mask.height(),
                cam_w: cam.width(),
                cam_h: cam.height(),
            });
        }
        let s = subsamples.max(1);
        let pose = cam.pose();
        let origin = Point3::from(*pose.translation());
        let rows: Vec<Vec<([f64; 2], Point3<f64>)>> = (0..cam.height())
            .into_par_iter()
            .map(|y| {
                let mut row = Vec::new();
                for x in 0..cam.width() {
                    for a in 0..s {
                        for b in 0..s {
                            let u = x as f64 + (a as f64 + 0.5) / s as f64;
                            let v = y as f64 + (b as f64 + 0.5) / s as f64;
                            let dc = Vector3::new((u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0);
                            let dw = pose.rotation() * dc;
                            if let Some(t) = self.world.raycast(&origin, &dw) {
                                row.push(([u, v], origin + dw * t));
                            }
                        }
                    }
                }
                row
            })
            .collect();
        let hits = rows.concat();
        let pred_pts: Vec<Point3<f64>> = hits.iter().map(|(_, p)| frame.apply(p)).collect();
        let pixels: Vec<[f64; 2]> = hits.iter().map(|(uv, _)| *uv).collect();
        let pred = PredictedReconstruction::new(
            PointCloud::new(pred_pts.clone())?,
            pixels,
            vec![0; hits.len()],
            std::slice::from_ref(mask),
        )?;
        let pairs = hits
            .iter()
            .zip(&pred_pts)
            .zip(pred.in_change_mask())
            .filter(|(_, m)| !**m)
            .map(|((h, p), _)| (*p, h.1))
            .step_by(stride.max(1))
            .collect();
        Ok((pred, CorrespondenceSet::new(pairs)?))
    }
}

/// A random similarity with scale in `[0.1, 10]` (log-uniform).
pub fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform<f64> {
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let s = 10f64.powf(rng.random_range(-1.0..=1.0));
    let t = Vector3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
    );
    SimilarityTransform::new(s, q.to_rotation_matrix().into_inner(), t).expect("valid similarity")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneRecipe {
        SceneRecipe {
            seed,
            extent_m: 30.0,
            buildings: 1,
            poles: 2,
            signs: 1,
            vehicles: 1,
            removed_objects: 1,
            inserted_objects: 1,
            cameras_per_object: 2,
            image: ImageSpec {
                width: 160,
                height: 120,
                focal_px: 120.0,
            },
            ..SceneRecipe::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(7)).unwrap();
        let b = generate(&small(7)).unwrap();
        assert_eq!(a.p_star_upd, b.p_star_upd);
        assert_eq!(a.p_out, b.p_out);
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.views, b.views);
        let c = generate(&small(8)).unwrap();
        assert_ne!(a.p_out.fingerprint(), c.p_out.fingerprint());
    }

    #[test]
    fn truth_matches_edits() {
        let b = generate(&small(3)).unwrap();
        let del = b.object("del-0").unwrap();
        assert_eq!(b.truth.truth.deleted, del.keys);
        assert_eq!(b.truth.truth.added, b.object("add-0").unwrap().keys);
        assert_eq!(b.truth.predicted, b.truth.truth);
    }

    #[test]
    fn infeasible_recipes() {
        let r = SceneRecipe {
            extent_m: 12.0,
            removed_objects: 5,
            ..small(1)
        };
        assert!(matches!(generate(&r), Err(Error::InfeasibleRecipe(_))));
        let r = SceneRecipe {
            occluded_views: 10,
            ..small(1)
        };
        assert!(matches!(generate(&r), Err(Error::InfeasibleRecipe(_))));
    }

    #[test]
    fn ray_box() {
        let b = Aabb {
            min: Point3::new(1.0, -1.0, -1.0),
            max: Point3::new(2.0, 1.0, 1.0),
        };
        assert_eq!(b.hit(&Point3::origin(), &Vector3::x()), Some(1.0));
        assert_eq!(b.hit(&Point3::origin(), &-Vector3::x()), None);
        assert_eq!(b.hit(&Point3::new(0.0, 2.0, 0.0), &Vector3::x()), None);
    }

    #[test]
    fn look_at_centers_target() {
        let cam = look_at(Point3::new(0.0, 0.0, 2.0), Point3::new(10.0, 3.0, 0.5), &ImageSpec::default()).unwrap();
        let px = cam.project(&Point3::new(10.0, 3.0, 0.5)).unwrap();
        assert!((px.u - 160.0).abs() < 1e-9 && (px.v - 120.0).abs() < 1e-9);
        // up in the world is up in the image
        let above = cam.project(&Point3::new(10.0, 3.0, 1.5)).unwrap();
        assert!(above.v < px.v);
    }
}
