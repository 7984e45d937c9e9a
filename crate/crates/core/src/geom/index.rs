use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

/// Immutable kd-tree over a point set answering exact nearest-neighbour
/// queries. Ties resolve to the lowest point index.
#[derive(Debug, Clone)]
pub struct SpatialIndex<T: Real> {
    points: Vec<Point3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[inline]
pub(crate) fn squared_distance<T: Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl<T: Real> SpatialIndex<T> {
    pub fn build(points: &[Point3<T>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis]
                .partial_cmp(&pts[b][axis])
                .expect("finite coordinates")
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = self.points[self.order[start]];
        let mut hi = lo;
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for a in 0..3 {
                if p[a] < lo[a] {
                    lo[a] = p[a];
                }
                if p[a] > hi[a] {
                    hi[a] = p[a];
                }
            }
        }
        let ext = hi - lo;
        let mut axis = 0;
        for a in 1..3 {
            if ext[a] > ext[axis] {
                axis = a;
            }
        }
        axis
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, q: &Point3<T>) -> (usize, T) {
        let mut best = (usize::MAX, T::max_value().expect("bounded real"));
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Point3<T>, best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates reachable for the index tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Euclidean distance from `q` to the closest indexed point.
    pub fn nearest_distance(&self, q: &Point3<T>) -> T {
        self.nearest(q).1.sqrt()
    }

    /// Nearest distances for many queries, computed in parallel; output order
    /// matches `queries`.
    pub fn nearest_distances(&self, queries: &[Point3<T>]) -> Vec<T> {
        queries.par_iter().map(|q| self.nearest_distance(q)).collect()
    }
}

/// Builds a [`SpatialIndex`]; fails on an empty cloud.
pub fn build_index<T: Real>(cloud: &super::PointCloud<T>) -> Result<SpatialIndex<T>> {
    SpatialIndex::build(cloud.points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exhaustive(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2)).sqrt();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(
            SpatialIndex::<f64>::build(&[]),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn small_cases() {
        let idx = SpatialIndex::build(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(idx.nearest_distance(&Point3::new(1.0, 2.0, 3.0)), 0.0);
        let idx = SpatialIndex::build(&[Point3::origin(), Point3::new(3.0, 0.0, 0.0)]).unwrap();
        assert_eq!(idx.nearest_distance(&Point3::new(1.0, 0.0, 0.0)), 1.0);
        // equidistant: tie goes to the lower index
        let (i, d): (usize, f64) = idx.nearest(&Point3::new(1.5, 0.0, 0.0));
        assert_eq!((i, d.sqrt()), (0, 1.5));
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3<f64>> = (0..1000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = SpatialIndex::build(&pts).unwrap();
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(-0.5..1.5),
                rng.random_range(-0.5..1.5),
                rng.random_range(-0.5..1.5),
            );
            let (oi, od) = exhaustive(&pts, &q);
            let (i, d) = idx.nearest(&q);
            assert_eq!(i, oi);
            assert_eq!(d.sqrt(), od);
        }
    }

    #[test]
    fn duplicate_points_tie_break() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 40];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.nearest(&Point3::origin()).0, 0);
    }
}
