use std::cmp::Ordering;

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Convex polygon with counter-clockwise vertices. One or two vertices denote
/// a degenerate point or segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon<T: Real> {
    vertices: Vec<Point2<T>>,
}

#[inline]
fn cross<T: Real>(o: &Point2<T>, a: &Point2<T>, b: &Point2<T>) -> T {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn lex<T: Real>(a: &Point2<T>, b: &Point2<T>) -> Ordering {
    a.x.partial_cmp(&b.x)
        .unwrap_or(Ordering::Equal)
        .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
}

impl<T: Real> Polygon<T> {
    /// Wraps vertices assumed to already be convex and counter-clockwise.
    pub fn from_ccw(vertices: Vec<Point2<T>>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point2<T>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn tolerance(scale: T) -> T {
        T::default_epsilon() * T::lit(64.0) * (T::one() + scale)
    }

    /// Inclusive containment: boundary points count as inside.
    pub fn contains(&self, p: &Point2<T>) -> bool {
        match self.vertices.len() {
            0 => false,
            1 => {
                let v = &self.vertices[0];
                let tol = Self::tolerance(v.coords.amax());
                (p.x - v.x).abs() <= tol && (p.y - v.y).abs() <= tol
            }
            2 => {
                let (a, b) = (&self.vertices[0], &self.vertices[1]);
                let len = (b - a).norm();
                let tol = Self::tolerance(a.coords.amax().max(b.coords.amax()));
                if cross(a, b, p).abs() > tol * len {
                    return false;
                }
                let t = (p - a).dot(&(b - a));
                t >= -tol * len && t <= len * len + tol * len
            }
            n => (0..n).all(|i| {
                let a = &self.vertices[i];
                let b = &self.vertices[(i + 1) % n];
                let scale = a.coords.amax().max(b.coords.amax()).max(p.coords.amax());
                cross(a, b, p) >= -Self::tolerance(scale) * (b - a).norm()
            }),
        }
    }
}

/// Convex hull by monotone chain. Collinear boundary points are dropped and
/// vertices come out counter-clockwise starting from the lowest (x, y).
pub fn convex_hull_2d<T: Real>(pixels: &[Point2<T>]) -> Result<Polygon<T>> {
    if pixels.is_empty() {
        return Err(Error::NoChangePixels);
    }
    let mut pts = pixels.to_vec();
    pts.sort_by(lex);
    pts.dedup();
    if pts.len() <= 2 {
        return Ok(Polygon { vertices: pts });
    }
    let mut hull: Vec<Point2<T>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero()
        {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero()
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        // all points collinear: keep the two extremes
        hull = vec![pts[0], pts[pts.len() - 1]];
    }
    Ok(Polygon { vertices: hull })
}
