//! Portable edit archives: a base-scene reference plus delta-encoded edit
//! records, guarded by a CRC32 trailer.
//!
//! Layout (little endian):
//!
//! ```text
//! "PCME" | version u16 | base fingerprint u64 | base ref (varint len + utf8)
//! | delta count (varint)
//! | per delta: removed keys | insertion count (varint)
//!     | per insertion: patch id (varint len + utf8) | rotation 9×f64 row-major
//!       | translation 3×f64 | inserted keys
//! | crc32 u32 over everything before it
//! ```
//!
//! A key set is its count (varint) followed by the lexicographically sorted
//! keys, each stored as zig-zag varint differences from the previous key per
//! component (the first against (0, 0, 0)).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{apply_delta, EditDelta, Insertion};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::scalar::Real;
use crate::scene::{VoxelKey, VoxelScene};

pub const PORTABLE_MAGIC: &[u8; 4] = b"PCME";
pub const PORTABLE_VERSION: u16 = 1;

/// Decoded contents of a portable archive.
#[derive(Clone, Debug, PartialEq)]
pub struct PortableArchive<T: Real> {
    pub base_ref: String,
    pub base_fingerprint: u64,
    pub deltas: Vec<EditDelta<T>>,
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptArchive(msg.to_string())
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

#[inline]
fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

fn put_keys(out: &mut Vec<u8>, keys: &BTreeSet<VoxelKey>) {
    put_varint(out, keys.len() as u64);
    let mut prev = [0i64; 3];
    for k in keys {
        let cur = [k.i as i64, k.j as i64, k.k as i64];
        for a in 0..3 {
            put_varint(out, zigzag(cur[a] - prev[a]));
        }
        prev = cur;
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(corrupt("varint overflow"))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.varint()?;
        // every encoded element takes at least one byte
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(corrupt("length exceeds archive"));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }

    fn keys(&mut self) -> Result<BTreeSet<VoxelKey>> {
        let n = self.len()?;
        let mut prev = [0i64; 3];
        let mut out = BTreeSet::new();
        for _ in 0..n {
            let mut cur = [0i64; 3];
            for a in 0..3 {
                cur[a] = prev[a]
                    .checked_add(unzigzag(self.varint()?))
                    .ok_or_else(|| corrupt("key overflow"))?;
            }
            let cvt = |v: i64| i32::try_from(v).map_err(|_| corrupt("key out of range"));
            let key = VoxelKey::new(cvt(cur[0])?, cvt(cur[1])?, cvt(cur[2])?);
            if out.last().is_some_and(|last| *last >= key) {
                return Err(corrupt("keys not strictly increasing"));
            }
            out.insert(key);
            prev = cur;
        }
        Ok(out)
    }
}

/// Serializes an archive. Every delta must target `base_fingerprint`.
pub fn encode_portable<T: Real>(base_ref: &str, base_fingerprint: u64, deltas: &[EditDelta<T>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PORTABLE_MAGIC);
    out.extend_from_slice(&PORTABLE_VERSION.to_le_bytes());
    out.extend_from_slice(&base_fingerprint.to_le_bytes());
    put_str(&mut out, base_ref);
    put_varint(&mut out, deltas.len() as u64);
    for d in deltas {
        if d.scene_fingerprint != base_fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        put_keys(&mut out, &d.removed_keys);
        put_varint(&mut out, d.insertions.len() as u64);
        for ins in &d.insertions {
            put_str(&mut out, &ins.patch_id);
            let r = ins.placement.rotation();
            for row in 0..3 {
                for col in 0..3 {
                    out.extend_from_slice(&r[(row, col)].to_f64_lossy().to_le_bytes());
                }
            }
            for c in ins.placement.translation().iter() {
                out.extend_from_slice(&c.to_f64_lossy().to_le_bytes());
            }
            put_keys(&mut out, &ins.inserted_keys);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_portable<T: Real>(bytes: &[u8]) -> Result<PortableArchive<T>> {
    if bytes.len() < 4 + 2 + 8 + 4 {
        return Err(corrupt("too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(corrupt("crc mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != PORTABLE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u16()?;
    if version != PORTABLE_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let base_fingerprint = r.u64()?;
    let base_ref = r.string()?;
    let n = r.len()?;
    let mut deltas = Vec::with_capacity(n);
    for _ in 0..n {
        let removed_keys = r.keys()?;
        let m = r.len()?;
        let mut insertions = Vec::with_capacity(m);
        for _ in 0..m {
            let patch_id = r.string()?;
            let mut rot = [0.0; 9];
            for v in &mut rot {
                *v = r.f64()?;
            }
            let t = [r.f64()?, r.f64()?, r.f64()?];
            let placement = RigidTransform::new(
                Matrix3::from_row_slice(&rot.map(T::lit)),
                Vector3::new(T::lit(t[0]), T::lit(t[1]), T::lit(t[2])),
            )
            .map_err(|_| corrupt("invalid placement"))?;
            insertions.push(Insertion {
                patch_id,
                placement,
                inserted_keys: r.keys()?,
            });
        }
        deltas.push(EditDelta {
            removed_keys,
            insertions,
            scene_fingerprint: base_fingerprint,
        });
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(PortableArchive {
        base_ref,
        base_fingerprint,
        deltas,
    })
}

/// Writes a portable archive to `path`.
pub fn export_portable<T: Real>(
    base_ref: &str,
    base_fingerprint: u64,
    deltas: &[EditDelta<T>],
    path: &Path,
) -> Result<usize> {
    let bytes = encode_portable(base_ref, base_fingerprint, deltas)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}

pub fn read_portable<T: Real>(path: &Path) -> Result<PortableArchive<T>> {
    decode_portable(&fs::read(path)?)
}

/// Reads an archive and reconstructs one edited scene per delta from `base`.
pub fn import_portable<T: Real>(path: &Path, base: &VoxelScene<T>) -> Result<Vec<VoxelScene<T>>> {
    let archive = read_portable::<T>(path)?;
    if archive.base_fingerprint != base.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    archive.deltas.iter().map(|d| apply_delta(base, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn varint_and_zigzag() {
        for v in [0i64, 1, -1, 63, -64, 64, i32::MAX as i64, i32::MIN as i64, i64::MAX, i64::MIN] {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
        let mut out = Vec::new();
        put_varint(&mut out, 300);
        assert_eq!(out, [0xac, 0x02]);
        let mut r = Reader { buf: &out, pos: 0 };
        assert_eq!(r.varint().unwrap(), 300);
    }

    fn sample_delta(fp: u64) -> EditDelta<f64> {
        EditDelta {
            removed_keys: [VoxelKey::new(-3, 7, 0), VoxelKey::new(0, 0, 1), VoxelKey::new(i32::MAX, i32::MIN, 5)]
                .into_iter()
                .collect(),
            insertions: vec![Insertion {
                patch_id: "cone-01".into(),
                placement: RigidTransform::from_yaw(0.3, Vector3::new(1.0, 2.0, 0.25)),
                inserted_keys: [VoxelKey::new(5, 10, 1), VoxelKey::new(5, 10, 2)].into_iter().collect(),
            }],
            scene_fingerprint: fp,
        }
    }

    #[test]
    fn round_trip_bytes() {
        let d = sample_delta(42);
        let bytes = encode_portable("scene-a", 42, std::slice::from_ref(&d)).unwrap();
        let a = decode_portable::<f64>(&bytes).unwrap();
        assert_eq!(a.base_ref, "scene-a");
        assert_eq!(a.deltas, vec![d]);
        assert_eq!(encode_portable(&a.base_ref, a.base_fingerprint, &a.deltas).unwrap(), bytes);
    }

    #[test]
    fn zero_deltas() {
        let bytes = encode_portable::<f64>("base", 7, &[]).unwrap();
        let a = decode_portable::<f64>(&bytes).unwrap();
        assert!(a.deltas.is_empty());
        assert_eq!(a.base_ref, "base");
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode_portable("s", 42, &[sample_delta(42)]).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode_portable::<f64>(&bytes), Err(Error::CorruptArchive(_))));
        assert!(matches!(decode_portable::<f64>(b"PCME"), Err(Error::CorruptArchive(_))));
        let mut wrong_magic = encode_portable::<f64>("s", 1, &[]).unwrap();
        wrong_magic[0] = b'X';
        let n = wrong_magic.len() - 4;
        let crc = crc32fast::hash(&wrong_magic[..n]);
        wrong_magic[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_portable::<f64>(&wrong_magic), Err(Error::CorruptArchive(_))));
    }

    #[test]
    fn mismatched_delta_rejected() {
        assert!(matches!(
            encode_portable("s", 1, &[sample_delta(2)]),
            Err(Error::FingerprintMismatch)
        ));
    }

    #[test]
    fn import_applies_to_base() {
        let mut base = VoxelScene::new(0.2, Point3::origin()).unwrap();
        base.insert(VoxelKey::new(0, 0, 0), [1]);
        base.insert(VoxelKey::new(0, 0, 1), [2]);
        let mut d = EditDelta::empty(&base);
        d.removed_keys.insert(VoxelKey::new(0, 0, 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pcme");
        export_portable("b", base.fingerprint(), std::slice::from_ref(&d), &path).unwrap();
        let scenes = import_portable(&path, &base).unwrap();
        assert_eq!(scenes, vec![apply_delta(&base, &d).unwrap()]);
        let other = base.empty_like();
        assert!(matches!(import_portable(&path, &other), Err(Error::FingerprintMismatch)));
    }
}
