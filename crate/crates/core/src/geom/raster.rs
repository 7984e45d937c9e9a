use nalgebra::Point2;

use super::Polygon;
use crate::scalar::Real;

/// Binary single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, data: Vec<bool>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        if x < self.width && y < self.height {
            self.data[(y * self.width + x) as usize] = true;
        }
    }

    /// Sets the cell containing `(u, v)` when it lies in frame.
    pub fn set_at<T: Real>(&mut self, u: T, v: T) {
        if let (Some(x), Some(y)) = (cell_coord(u), cell_coord(v)) {
            self.set(x, y);
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }
}

fn cell_coord<T: Real>(c: T) -> Option<u32> {
    let f = c.floor();
    if f < T::zero() {
        None
    } else {
        f.to_u32()
    }
}

fn half<T: Real>() -> T {
    T::lit(0.5)
}

/// Rasterizes a convex polygon. A pixel is set when its center
/// `(x + 0.5, y + 0.5)` lies inside or on the polygon. One- and two-vertex
/// polygons set the pixels they pass through.
pub fn rasterize_polygon<T: Real>(polygon: &Polygon<T>, width: u32, height: u32) -> Mask {
    let mut mask = Mask::new(width, height);
    let v = polygon.vertices();
    match v.len() {
        0 => {}
        1 => mask.set_at(v[0].x, v[0].y),
        2 => rasterize_segment(&mut mask, &v[0], &v[1]),
        _ => scanline_fill(&mut mask, polygon),
    }
    mask
}

fn rasterize_segment<T: Real>(mask: &mut Mask, a: &Point2<T>, b: &Point2<T>) {
    let d = b - a;
    let mut breaks: Vec<(T, Option<(usize, T)>)> = vec![(T::zero(), None), (T::one(), None)];
    for axis in 0..2 {
        if d[axis] == T::zero() {
            continue;
        }
        let (lo, hi) = if a[axis] < b[axis] {
            (a[axis], b[axis])
        } else {
            (b[axis], a[axis])
        };
        let mut k = lo.floor() + T::one();
        while k < hi {
            breaks.push(((k - a[axis]) / d[axis], Some((axis, k))));
            k += T::one();
        }
    }
    breaks.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let at = |t: T| a + d * t;
    for i in 0..breaks.len() {
        let (t, snap) = breaks[i];
        let mut p = at(t);
        if let Some((axis, k)) = snap {
            p[axis] = k;
        }
        if i == 0 {
            p = *a;
        } else if i == breaks.len() - 1 {
            p = *b;
        }
        mask.set_at(p.x, p.y);
        if i + 1 < breaks.len() {
            let m = at((t + breaks[i + 1].0) * half());
            mask.set_at(m.x, m.y);
        }
    }
}

fn scanline_fill<T: Real>(mask: &mut Mask, polygon: &Polygon<T>) {
    let v = polygon.vertices();
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut min_y = v[0].y;
    let mut max_y = v[0].y;
    for p in v {
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let to_i = |x: T| x.to_i64().unwrap_or(i64::MIN);
    let row_lo = to_i((min_y - half()).floor()).max(0);
    let row_hi = to_i((max_y - half()).ceil()).min(h - 1);
    for row in row_lo..=row_hi {
        let c = T::lit(row as f64) + half();
        // horizontal span of the polygon at the row's center line
        let mut span: Option<(T, T)> = None;
        for i in 0..v.len() {
            let (a, b) = (&v[i], &v[(i + 1) % v.len()]);
            let (ylo, yhi) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
            if c < ylo || c > yhi {
                continue;
            }
            let xs = if a.y == b.y {
                [a.x, b.x]
            } else {
                let x = a.x + (c - a.y) * (b.x - a.x) / (b.y - a.y);
                [x, x]
            };
            for x in xs {
                span = Some(match span {
                    None => (x, x),
                    Some((l, r)) => (l.min(x), r.max(x)),
                });
            }
        }
        // rows grazing a vertex may miss due to rounding; the per-pixel test
        // below decides, so fall back to the full x range
        let (l, r) = span.unwrap_or_else(|| {
            let mut l = v[0].x;
            let mut r = v[0].x;
            for p in v {
                l = l.min(p.x);
                r = r.max(p.x);
            }
            (l, r)
        });
        let first = to_i((l - half()).floor()) - 1;
        let last = to_i((r - half()).ceil()) + 1;
        let inner_lo = to_i((l - half()).ceil()) + 1;
        let inner_hi = to_i((r - half()).floor()) - 1;
        for col in first.max(0)..=last.min(w - 1) {
            let inside = if span.is_some() && col >= inner_lo && col <= inner_hi {
                true
            } else {
                polygon.contains(&Point2::new(T::lit(col as f64) + half(), c))
            };
            if inside {
                mask.set(col as u32, row as u32);
            }
        }
    }
}
