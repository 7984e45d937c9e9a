//! On-disk formats: PLY clouds, native voxel scenes, mask PNGs with JSON
//! sidecars, pose lists, camera / cuboid / ground records, patch databases
//! and correspondence lists. Everything here is `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::ImageEncoder;
use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::edit::{EditDelta, GroundModel, Insertion, Patch, PatchDatabase, PatchManifestEntry, SelectionRegion};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, Mask, PointCloud, RigidTransform};
use crate::project::{ChangeKind, ChangeObject, ChangeSet3D, MaskSidecar};
use crate::scene::{Cuboid, PosedScan, VoxelKey, VoxelScene};
use crate::update::CorrespondenceSet;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

// ---------------------------------------------------------------- PLY

/// Vertex data of a PLY file. `pixels` / `image_index` carry the source
/// pixel of predicted points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub points: Vec<Point3<f64>>,
    pub ids: Option<Vec<u64>>,
    pub pixels: Option<Vec<[f64; 2]>>,
    pub image_index: Option<Vec<u32>>,
}

impl PlyData {
    pub fn from_cloud(cloud: &PointCloud<f64>) -> Self {
        Self {
            points: cloud.points().to_vec(),
            ids: cloud.ids().map(<[u64]>::to_vec),
            ..Self::default()
        }
    }

    pub fn to_cloud(&self) -> Result<PointCloud<f64>> {
        match &self.ids {
            Some(ids) => PointCloud::with_ids(self.points.clone(), ids.clone()),
            None => PointCloud::new(self.points.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "int64" => Self::I64,
            "uint64" => Self::U64,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::I64 | Self::U64 | Self::F64 => 8,
        }
    }

    /// Decodes a little-endian value; integers are kept exactly in the
    /// `u64` lane as well.
    fn read_le(self, b: &[u8]) -> (f64, u64) {
        macro_rules! le {
            ($t:ty, $n:expr) => {{
                let v = <$t>::from_le_bytes(b[..$n].try_into().unwrap());
                (v as f64, v as u64)
            }};
        }
        match self {
            Self::I8 => le!(i8, 1),
            Self::U8 => le!(u8, 1),
            Self::I16 => le!(i16, 2),
            Self::U16 => le!(u16, 2),
            Self::I32 => le!(i32, 4),
            Self::U32 => le!(u32, 4),
            Self::I64 => le!(i64, 8),
            Self::U64 => le!(u64, 8),
            Self::F32 => le!(f32, 4),
            Self::F64 => le!(f64, 8),
        }
    }
}

struct Property {
    name: String,
    ty: Scalar,
}

#[derive(PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Writes `data` as `binary_little_endian` PLY.
pub fn write_ply(w: &mut impl Write, data: &PlyData) -> Result<()> {
    let n = data.points.len();
    let check = |len: Option<usize>, what: &str| match len {
        Some(l) if l != n => Err(format_err(format!("{what} count {l} does not match {n} points"))),
        _ => Ok(()),
    };
    check(data.ids.as_ref().map(Vec::len), "id")?;
    check(data.pixels.as_ref().map(Vec::len), "pixel")?;
    check(data.image_index.as_ref().map(Vec::len), "image index")?;

    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {n}\n"));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if data.ids.is_some() {
        header.push_str("property uint64 id\n");
    }
    if data.pixels.is_some() {
        header.push_str("property double u\nproperty double v\n");
    }
    if data.image_index.is_some() {
        header.push_str("property uint image_index\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    for i in 0..n {
        let p = &data.points[i];
        for c in [p.x, p.y, p.z] {
            w.write_all(&c.to_le_bytes())?;
        }
        if let Some(ids) = &data.ids {
            w.write_all(&ids[i].to_le_bytes())?;
        }
        if let Some(px) = &data.pixels {
            w.write_all(&px[i][0].to_le_bytes())?;
            w.write_all(&px[i][1].to_le_bytes())?;
        }
        if let Some(ix) = &data.image_index {
            w.write_all(&ix[i].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the vertex element of an ASCII or binary little-endian PLY file.
/// Unknown vertex properties are skipped; other elements are ignored
/// when they follow the vertices.
pub fn read_ply(r: &mut impl BufRead) -> Result<PlyData> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(format_err("PLY header ended early"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(r)? != "ply" {
        return Err(format_err("not a PLY file"));
    }
    let mut encoding = None;
    let mut count = None;
    let mut props: Vec<Property> = Vec::new();
    let mut in_vertex = false;
    let mut vertex_seen = false;
    loop {
        let l = next_line(r)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", f, _] => return Err(format_err(format!("unsupported PLY format {f}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                if vertex_seen && !in_vertex {
                    continue;
                }
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_seen {
                        return Err(format_err("duplicate vertex element"));
                    }
                    vertex_seen = true;
                    count = Some(n.parse::<usize>().map_err(|_| format_err("bad vertex count"))?);
                } else if !vertex_seen {
                    return Err(format_err("elements before the vertex element are not supported"));
                }
            }
            ["property", "list", ..] if in_vertex => return Err(format_err("list properties on vertices are not supported")),
            ["property", ty, name] if in_vertex => props.push(Property {
                name: name.to_string(),
                ty: Scalar::parse(ty).ok_or_else(|| format_err(format!("unknown PLY type {ty}")))?,
            }),
            ["property", ..] => {}
            _ => return Err(format_err(format!("unexpected PLY header line: {l}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| format_err("PLY format line missing"))?;
    let n = count.ok_or_else(|| format_err("PLY vertex element missing"))?;
    let find = |name: &str| props.iter().position(|p| p.name == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(format_err("PLY vertices need x, y and z")),
    };
    let iid = find("id");
    let (iu, iv) = (find("u"), find("v"));
    let iimg = find("image_index");

    let mut out = PlyData {
        points: Vec::with_capacity(n),
        ids: iid.map(|_| Vec::with_capacity(n)),
        pixels: iu.zip(iv).map(|_| Vec::with_capacity(n)),
        image_index: iimg.map(|_| Vec::with_capacity(n)),
    };
    let mut values = vec![(0.0f64, 0u64); props.len()];
    let stride: usize = props.iter().map(|p| p.ty.size()).sum();
    let mut buf = vec![0u8; stride];
    let mut text = String::new();
    for _ in 0..n {
        match encoding {
            Encoding::BinaryLe => {
                r.read_exact(&mut buf).map_err(|_| format_err("PLY vertex data truncated"))?;
                let mut off = 0;
                for (v, p) in values.iter_mut().zip(&props) {
                    *v = p.ty.read_le(&buf[off..]);
                    off += p.ty.size();
                }
            }
            Encoding::Ascii => {
                text.clear();
                if r.read_line(&mut text)? == 0 {
                    return Err(format_err("PLY vertex data truncated"));
                }
                let toks: Vec<&str> = text.split_whitespace().collect();
                if toks.len() < props.len() {
                    return Err(format_err("short PLY vertex line"));
                }
                for ((v, p), t) in values.iter_mut().zip(&props).zip(toks) {
                    *v = match p.ty {
                        Scalar::F32 | Scalar::F64 => {
                            let f: f64 = t.parse().map_err(|_| format_err(format!("bad PLY value {t}")))?;
                            (f, f as u64)
                        }
                        _ => {
                            let i: i128 = t.parse().map_err(|_| format_err(format!("bad PLY value {t}")))?;
                            (i as f64, i as u64)
                        }
                    };
                }
            }
        }
        out.points.push(Point3::new(values[ix].0, values[iy].0, values[iz].0));
        if let (Some(ids), Some(i)) = (&mut out.ids, iid) {
            ids.push(values[i].1);
        }
        if let (Some(px), Some(u), Some(v)) = (&mut out.pixels, iu, iv) {
            px.push([values[u].0, values[v].0]);
        }
        if let (Some(im), Some(i)) = (&mut out.image_index, iimg) {
            im.push(u32::try_from(values[i].1).map_err(|_| format_err("image index out of range"))?);
        }
    }
    Ok(out)
}

pub fn save_ply(path: &Path, data: &PlyData) -> Result<()> {
    let mut w = create(path)?;
    write_ply(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<PlyData> {
    read_ply(&mut BufReader::new(fs::File::open(path)?))
}

pub fn save_cloud(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    save_ply(path, &PlyData::from_cloud(cloud))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud<f64>> {
    load_ply(path)?.to_cloud()
}

// ------------------------------------------------------- native scenes

pub const SCENE_MAGIC: &[u8; 4] = b"PCMV";

/// Native scene dump: magic, resolution, origin, voxel count, sorted keys
/// (3×i32), then one provenance block per key (u32 count + u64 ids).
pub fn write_scene(w: &mut impl Write, scene: &VoxelScene<f64>) -> Result<()> {
    w.write_all(SCENE_MAGIC)?;
    w.write_all(&scene.resolution().to_le_bytes())?;
    for c in scene.origin().iter() {
        w.write_all(&c.to_le_bytes())?;
    }
    w.write_all(&(scene.len() as u64).to_le_bytes())?;
    for k in scene.keys() {
        for c in [k.i, k.j, k.k] {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for (_, ids) in scene.iter() {
        let n = u32::try_from(ids.len()).map_err(|_| format_err("provenance list too long"))?;
        w.write_all(&n.to_le_bytes())?;
        for id in ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_scene(r: &mut impl Read) -> Result<VoxelScene<f64>> {
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    let mut f64_ = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut b8).map_err(|_| format_err("scene file truncated"))?;
        Ok(f64::from_le_bytes(b8))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| format_err("scene file truncated"))?;
    if &magic != SCENE_MAGIC {
        return Err(format_err("not a native scene file"));
    }
    let res = f64_(r)?;
    let origin = Point3::new(f64_(r)?, f64_(r)?, f64_(r)?);
    let count = f64_(r)?.to_bits() as usize;
    let mut scene = VoxelScene::new(res, origin)?;
    let mut keys = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut k = [0i32; 3];
        for c in &mut k {
            r.read_exact(&mut b4).map_err(|_| format_err("scene file truncated"))?;
            *c = i32::from_le_bytes(b4);
        }
        let key = VoxelKey::new(k[0], k[1], k[2]);
        if keys.last().is_some_and(|p| *p >= key) {
            return Err(format_err("scene keys are not strictly sorted"));
        }
        keys.push(key);
    }
    for key in keys {
        r.read_exact(&mut b4).map_err(|_| format_err("scene file truncated"))?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(|_| format_err("scene file truncated"))?;
            ids.push(u64::from_le_bytes(b8));
        }
        scene.insert(key, ids);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after scene"));
    }
    Ok(scene)
}

pub fn encode_scene(scene: &VoxelScene<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    write_scene(&mut out, scene).expect("writing to memory");
    out
}

pub fn save_scene(path: &Path, scene: &VoxelScene<f64>) -> Result<()> {
    fs::write(path, encode_scene(scene))?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<VoxelScene<f64>> {
    read_scene(&mut BufReader::new(fs::File::open(path)?))
}

// --------------------------------------------------------------- masks

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        &pixels,
        mask.width(),
        mask.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}

/// 8-bit grayscale PNG, 255 = changed.
pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

/// Any nonzero luma counts as set.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::from_bits(w, h, img.pixels().map(|p| p.0[0] != 0).collect()).ok_or_else(|| format_err("mask size mismatch"))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

pub fn load_sidecar(path: &Path) -> Result<MaskSidecar> {
    load_json(path)
}

// --------------------------------------------------------------- poses

/// One `timestamp tx ty tz qw qx qy qz` line (sensor -> world).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRecord {
    pub timestamp_ns: i64,
    pub pose: RigidTransform<f64>,
}

pub fn parse_poses(text: &str) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let bad = || format_err(format!("pose line {}: expected `timestamp tx ty tz qw qx qy qz`", no + 1));
        if tok.len() != 8 {
            return Err(bad());
        }
        let ts: i64 = tok[0].parse().map_err(|_| bad())?;
        let v: Vec<f64> = tok[1..].iter().map(|t| t.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let pose = RigidTransform::from_quaternion([v[3], v[4], v[5], v[6]], Vector3::new(v[0], v[1], v[2]))?;
        out.push(PoseRecord { timestamp_ns: ts, pose });
    }
    Ok(out)
}

pub fn format_poses(poses: &[PoseRecord]) -> String {
    let mut s = String::new();
    for p in poses {
        let t = p.pose.translation();
        let q = UnitQuaternion::from_matrix(p.pose.rotation());
        s.push_str(&format!(
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?}\n",
            p.timestamp_ns, t.x, t.y, t.z, q.w, q.i, q.j, q.k
        ));
    }
    s
}

/// Scan directory: `poses.txt` plus `scan_NNNN.ply` files (sensor frame)
/// in pose order.
pub fn save_scans(dir: &Path, scans: &[PosedScan<f64>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut poses = Vec::new();
    for (i, s) in scans.iter().enumerate() {
        save_cloud(&dir.join(format!("scan_{i:04}.ply")), &s.cloud)?;
        poses.push(PoseRecord {
            timestamp_ns: s.timestamp_ns,
            pose: s.pose,
        });
    }
    fs::write(dir.join("poses.txt"), format_poses(&poses))?;
    Ok(())
}

pub fn load_scans(dir: &Path) -> Result<Vec<PosedScan<f64>>> {
    let poses = parse_poses(&fs::read_to_string(dir.join("poses.txt"))?)?;
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(PosedScan::new(load_cloud(&dir.join(format!("scan_{i:04}.ply")))?, p.pose, p.timestamp_ns)))
        .collect()
}

// -------------------------------------------------------- JSON records

fn matrix_rows(m: &Matrix3<f64>) -> [f64; 9] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

fn matrix_from_rows(r: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(r)
}

/// Pinhole camera; `rotation` (row-major) and `translation` map world to
/// camera coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(c: &CameraModel<f64>) -> Self {
        let e = c.extrinsics();
        let t = e.translation();
        Self {
            fx: c.fx(),
            fy: c.fy(),
            cx: c.cx(),
            cy: c.cy(),
            width: c.width(),
            height: c.height(),
            rotation: matrix_rows(e.rotation()),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_camera(&self) -> Result<CameraModel<f64>> {
        let ext = RigidTransform::new(matrix_from_rows(&self.rotation), Vector3::from(self.translation))?;
        CameraModel::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height, ext)
    }
}

/// Oriented box annotation; `rotation` (row-major) maps local to world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuboidRecord {
    pub label: String,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
}

impl CuboidRecord {
    pub fn from_cuboid(c: &Cuboid<f64>) -> Self {
        Self {
            label: c.label().to_string(),
            center: c.center().coords.into(),
            dims: (*c.dims()).into(),
            yaw: None,
            rotation: Some(matrix_rows(c.rotation())),
        }
    }

    pub fn to_cuboid(&self) -> Result<Cuboid<f64>> {
        let center = Point3::from(self.center);
        let dims = Vector3::from(self.dims);
        match (self.yaw, &self.rotation) {
            (Some(_), Some(_)) => Err(format_err("cuboid has both yaw and rotation")),
            (Some(y), None) => Cuboid::from_yaw(center, dims, y, self.label.clone()),
            (None, Some(r)) => Cuboid::new(center, dims, matrix_from_rows(r), self.label.clone()),
            (None, None) => Cuboid::new(center, dims, Matrix3::identity(), self.label.clone()),
        }
    }
}

pub fn save_cuboids(path: &Path, cuboids: &[Cuboid<f64>]) -> Result<()> {
    save_json(path, &cuboids.iter().map(CuboidRecord::from_cuboid).collect::<Vec<_>>())
}

pub fn load_cuboids(path: &Path) -> Result<Vec<Cuboid<f64>>> {
    load_json::<Vec<CuboidRecord>>(path)?.iter().map(CuboidRecord::to_cuboid).collect()
}

/// Ground heights as JSON: cell size plus `[i, j, height]` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRecord {
    pub cell_size: f64,
    pub cells: Vec<(i32, i32, f64)>,
}

pub const GROUND_MAGIC: &[u8; 4] = b"PCMG";

/// Ground model as JSON (`.json`) or binary grid (anything else).
pub fn save_ground(path: &Path, g: &GroundModel<f64>) -> Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        return save_json(
            path,
            &GroundRecord {
                cell_size: g.cell_size(),
                cells: g.heights().iter().map(|(&(i, j), &h)| (i, j, h)).collect(),
            },
        );
    }
    // dense grid over the bounding cell range; NaN marks missing cells
    let (mut i0, mut j0, mut i1, mut j1) = (0, 0, -1, -1);
    if let Some(&(i, j)) = g.heights().keys().next() {
        (i0, j0, i1, j1) = (i, j, i, j);
        for &(i, j) in g.heights().keys() {
            i0 = i0.min(i);
            i1 = i1.max(i);
            j0 = j0.min(j);
            j1 = j1.max(j);
        }
    }
    let (ni, nj) = ((i1 - i0 + 1) as u32, (j1 - j0 + 1) as u32);
    let mut out = Vec::new();
    out.extend_from_slice(GROUND_MAGIC);
    out.extend_from_slice(&g.cell_size().to_le_bytes());
    out.extend_from_slice(&i0.to_le_bytes());
    out.extend_from_slice(&j0.to_le_bytes());
    out.extend_from_slice(&ni.to_le_bytes());
    out.extend_from_slice(&nj.to_le_bytes());
    for j in 0..nj as i32 {
        for i in 0..ni as i32 {
            let h = g.heights().get(&(i0 + i, j0 + j)).copied().unwrap_or(f64::NAN);
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_ground(path: &Path) -> Result<GroundModel<f64>> {
    let bytes = fs::read(path)?;
    if !bytes.starts_with(GROUND_MAGIC) {
        let rec: GroundRecord = serde_json::from_slice(&bytes).map_err(|e| format_err(format!("{}: {e}", path.display())))?;
        return GroundModel::new(rec.cell_size, rec.cells.into_iter().map(|(i, j, h)| ((i, j), h)).collect());
    }
    let short = || format_err("ground grid truncated");
    let take = |off: usize, n: usize| bytes.get(off..off + n).ok_or_else(short);
    let cell = f64::from_le_bytes(take(4, 8)?.try_into().unwrap());
    let i0 = i32::from_le_bytes(take(12, 4)?.try_into().unwrap());
    let j0 = i32::from_le_bytes(take(16, 4)?.try_into().unwrap());
    let ni = u32::from_le_bytes(take(20, 4)?.try_into().unwrap()) as usize;
    let nj = u32::from_le_bytes(take(24, 4)?.try_into().unwrap()) as usize;
    if bytes.len() != 28 + ni * nj * 8 {
        return Err(format_err("ground grid size does not match its header"));
    }
    let mut heights = BTreeMap::new();
    for j in 0..nj {
        for i in 0..ni {
            let off = 28 + (j * ni + i) * 8;
            let h = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !h.is_nan() {
                heights.insert((i0 + i as i32, j0 + j as i32), h);
            }
        }
    }
    GroundModel::new(cell, heights)
}

// ------------------------------------------------------------- patches

/// Patch database directory: `manifest.json` plus one PLY per patch.
pub fn save_patch_db(dir: &Path, db: &PatchDatabase<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = db.manifest();
    for (p, e) in db.iter().zip(&manifest) {
        if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
            return Err(format_err(format!("patch id {} is not usable as a file name", p.id())));
        }
        save_cloud(&dir.join(&e.file), p.cloud())?;
    }
    save_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_patch_db(dir: &Path) -> Result<PatchDatabase<f64>> {
    let manifest: Vec<PatchManifestEntry> = load_json(&dir.join("manifest.json"))?;
    let mut db = PatchDatabase::new();
    for e in manifest {
        let cloud = load_cloud(&dir.join(&e.file))?;
        if cloud.len() != e.points {
            return Err(format_err(format!("patch {}: manifest lists {} points, file has {}", e.id, e.points, cloud.len())));
        }
        db.add(Patch::new(e.id, cloud, e.label)?)?;
    }
    Ok(db)
}

// ----------------------------------------------------- correspondences

/// Text rows `sx sy sz tx ty tz` (source in the predictor frame, target
/// in the map frame); `#` starts a comment.
pub fn parse_correspondences(text: &str) -> Result<CorrespondenceSet<f64>> {
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(format!("correspondence line {}: not numeric", no + 1)))?;
        if v.len() != 6 {
            return Err(format_err(format!("correspondence line {}: expected 6 values", no + 1)));
        }
        pairs.push((Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5])));
    }
    CorrespondenceSet::new(pairs)
}

pub fn format_correspondences(c: &CorrespondenceSet<f64>) -> String {
    let mut s = String::from("# sx sy sz tx ty tz\n");
    for (a, b) in c.pairs() {
        s.push_str(&format!("{:?} {:?} {:?} {:?} {:?} {:?}\n", a.x, a.y, a.z, b.x, b.y, b.z));
    }
    s
}

// -------------------------------------------------------------- deltas

fn key_triple(k: &VoxelKey) -> [i32; 3] {
    [k.i, k.j, k.k]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertionRecord {
    pub patch_id: String,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub keys: Vec<[i32; 3]>,
}

/// JSON form of an [`EditDelta`]; the fingerprint is hex so it survives
/// JSON number handling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRecord {
    pub scene_fingerprint: String,
    pub removed: Vec<[i32; 3]>,
    pub insertions: Vec<InsertionRecord>,
}

impl DeltaRecord {
    pub fn from_delta(d: &EditDelta<f64>) -> Self {
        Self {
            scene_fingerprint: format!("{:016x}", d.scene_fingerprint),
            removed: d.removed_keys.iter().map(key_triple).collect(),
            insertions: d
                .insertions
                .iter()
                .map(|ins| InsertionRecord {
                    patch_id: ins.patch_id.clone(),
                    rotation: matrix_rows(ins.placement.rotation()),
                    translation: (*ins.placement.translation()).into(),
                    keys: ins.inserted_keys.iter().map(key_triple).collect(),
                })
                .collect(),
        }
    }

    pub fn to_delta(&self) -> Result<EditDelta<f64>> {
        let fp = u64::from_str_radix(&self.scene_fingerprint, 16).map_err(|_| format_err("bad scene fingerprint"))?;
        let key = |t: &[i32; 3]| VoxelKey::new(t[0], t[1], t[2]);
        Ok(EditDelta {
            removed_keys: self.removed.iter().map(key).collect(),
            insertions: self
                .insertions
                .iter()
                .map(|r| {
                    Ok(Insertion {
                        patch_id: r.patch_id.clone(),
                        placement: RigidTransform::new(matrix_from_rows(&r.rotation), Vector3::from(r.translation))?,
                        inserted_keys: r.keys.iter().map(key).collect(),
                    })
                })
                .collect::<Result<_>>()?,
            scene_fingerprint: fp,
        })
    }
}

pub fn save_delta(path: &Path, d: &EditDelta<f64>) -> Result<()> {
    save_json(path, &DeltaRecord::from_delta(d))
}

pub fn load_delta(path: &Path) -> Result<EditDelta<f64>> {
    load_json::<DeltaRecord>(path)?.to_delta()
}

// ---------------------------------------------------------- change sets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeEntry {
    pub object_id: String,
    pub kind: ChangeKind,
    pub file: String,
}

/// Change-set directory: `changes.json` plus one world-frame PLY per
/// object, named by position.
pub fn save_changes(dir: &Path, changes: &ChangeSet3D<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (n, o) in changes.objects().iter().enumerate() {
        let file = format!("object_{n:04}.ply");
        save_cloud(&dir.join(&file), &o.cloud)?;
        entries.push(ChangeEntry {
            object_id: o.object_id.clone(),
            kind: o.kind,
            file,
        });
    }
    save_json(&dir.join("changes.json"), &entries)
}

pub fn load_changes(dir: &Path) -> Result<ChangeSet3D<f64>> {
    let entries: Vec<ChangeEntry> = load_json(&dir.join("changes.json"))?;
    let objects = entries
        .into_iter()
        .map(|e| {
            Ok(ChangeObject {
                cloud: load_cloud(&dir.join(&e.file))?,
                object_id: e.object_id,
                kind: e.kind,
            })
        })
        .collect::<Result<_>>()?;
    ChangeSet3D::new(objects)
}

// --------------------------------------------------------- edit scripts

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionRecord {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    Cuboid(CuboidRecord),
}

impl SelectionRecord {
    pub fn to_region(&self) -> Result<SelectionRegion<f64>> {
        Ok(match self {
            Self::Box { min, max } => SelectionRegion::Box {
                min: Point3::from(*min),
                max: Point3::from(*max),
            },
            Self::Sphere { center, radius } => SelectionRegion::Sphere {
                center: Point3::from(*center),
                radius: *radius,
            },
            Self::Cuboid(c) => SelectionRegion::Oriented(c.to_cuboid()?),
        })
    }
}

/// One edit operation against the base scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    DeleteCuboid(CuboidRecord),
    DeleteSelection(SelectionRecord),
    Insert {
        patch: String,
        xy: [f64; 2],
        #[serde(default)]
        yaw: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditScript {
    pub operations: Vec<EditOp>,
}

/// Collects every regular file below `dir`, sorted.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}
