use nalgebra::Point3;

use super::RigidTransform;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Projected image location; `depth` is the camera-frame z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel<T: Real> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

impl<T: Real> Pixel<T> {
    /// Integer (column, row) of the pixel cell containing `(u, v)`.
    #[inline]
    pub fn cell(&self) -> (u32, u32) {
        (
            self.u.floor().to_u32().unwrap_or(0),
            self.v.floor().to_u32().unwrap_or(0),
        )
    }
}

/// Distortion-free pinhole camera. `extrinsics` maps world to camera frame
/// (x right, y down, z forward).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel<T: Real> {
    fx: T,
    fy: T,
    cx: T,
    cy: T,
    width: u32,
    height: u32,
    extrinsics: RigidTransform<T>,
}

impl<T: Real> CameraModel<T> {
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: u32,
        height: u32,
        extrinsics: RigidTransform<T>,
    ) -> Result<Self> {
        let zero = T::zero();
        if !(fx > zero && fy > zero) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        let (w, h) = (T::lit(width as f64), T::lit(height as f64));
        if !(cx >= zero && cx < w && cy >= zero && cy < h) {
            return Err(Error::Invalid("principal point outside image".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsics,
        })
    }

    pub fn fx(&self) -> T {
        self.fx
    }
    pub fn fy(&self) -> T {
        self.fy
    }
    pub fn cx(&self) -> T {
        self.cx
    }
    pub fn cy(&self) -> T {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn extrinsics(&self) -> &RigidTransform<T> {
        &self.extrinsics
    }

    /// Camera-to-world pose.
    pub fn pose(&self) -> RigidTransform<T> {
        self.extrinsics.inverse()
    }

    /// Projects a camera-frame point; `None` behind the camera or out of frame.
    #[inline]
    pub fn project_camera_frame(&self, pc: &Point3<T>) -> Option<Pixel<T>> {
        if !(pc.z > T::zero()) {
            return None;
        }
        let u = self.fx * (pc.x / pc.z) + self.cx;
        let v = self.fy * (pc.y / pc.z) + self.cy;
        let (w, h) = (T::lit(self.width as f64), T::lit(self.height as f64));
        if u >= T::zero() && u < w && v >= T::zero() && v < h {
            Some(Pixel { u, v, depth: pc.z })
        } else {
            None
        }
    }

    /// Projects a world point.
    #[inline]
    pub fn project(&self, p: &Point3<T>) -> Option<Pixel<T>> {
        self.project_camera_frame(&self.extrinsics.apply(p))
    }

    /// Back-projects a pixel with depth into the world frame.
    pub fn unproject(&self, px: &Pixel<T>) -> Point3<T> {
        let x = (px.u - self.cx) / self.fx * px.depth;
        let y = (px.v - self.cy) / self.fy * px.depth;
        self.extrinsics.inverse().apply(&Point3::new(x, y, px.depth))
    }

    /// Row-major index of a pixel cell.
    #[inline]
    pub fn cell_index(&self, cell: (u32, u32)) -> usize {
        cell.1 as usize * self.width as usize + cell.0 as usize
    }
}

/// Projects `p` through `cam`. Out-of-view points yield `None`.
pub fn project_point<T: Real>(p: &Point3<T>, cam: &CameraModel<T>) -> Option<Pixel<T>> {
    cam.project(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cam() -> CameraModel<f64> {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, RigidTransform::identity()).unwrap()
    }

    #[test]
    fn principal_axis_point() {
        let px = project_point(&Point3::new(0.0, 0.0, 10.0), &cam()).unwrap();
        assert_eq!((px.u, px.v, px.depth), (50.0, 50.0, 10.0));
    }

    #[test]
    fn offset_point() {
        // u = 100 * (1 / 10) + 50
        let px = project_point(&Point3::new(1.0, 0.0, 10.0), &cam()).unwrap();
        assert_eq!((px.u, px.v, px.depth), (60.0, 50.0, 10.0));
    }

    #[test]
    fn behind_and_outside() {
        assert!(project_point(&Point3::new(0.0, 0.0, -1.0), &cam()).is_none());
        assert!(project_point(&Point3::new(0.0, 0.0, 0.0), &cam()).is_none());
        // u = 100 * 0.5 + 50 = 100 is outside [0, 100)
        assert!(project_point(&Point3::new(5.0, 0.0, 10.0), &cam()).is_none());
    }

    #[test]
    fn extrinsics_applied() {
        let ext = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let c = CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, ext).unwrap();
        let px = c.project(&Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(px.depth, 10.0);
    }

    #[test]
    fn invalid_intrinsics() {
        let id = RigidTransform::identity();
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, 10, 10, id).is_err());
        assert!(CameraModel::new(1.0, 1.0, 10.0, 0.0, 10, 10, id).is_err());
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, 0, 10, id).is_err());
    }
}
