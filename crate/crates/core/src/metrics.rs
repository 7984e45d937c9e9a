//! Map-update scoring: voxel-key set differences between outdated, updated
//! and ground-truth scenes, and four point-set distances (Chamfer, Hausdorff,
//! modified Hausdorff, median point distance).
//!
//! All distances use `d(a, B) = min_b |a - b|`. Chamfer sums squared
//! distances, so it is reported in m²; the other three are in meters.
//! Every metric is undefined when either side is empty.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{squared_distance, PointCloud, SpatialIndex};
use crate::scalar::Real;
use crate::scene::{VoxelKey, VoxelScene};

/// How nearest distances are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBackend {
    /// kd-tree queries.
    #[default]
    Indexed,
    /// O(N·M) scan, for cross-validation runs.
    Exhaustive,
}

/// Added / deleted key sets of one update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetDiff {
    pub added: BTreeSet<VoxelKey>,
    pub deleted: BTreeSet<VoxelKey>,
}

/// `P_add = P_upd − P_out`, `P_del = P_out − P_upd` and the starred
/// counterparts against the ground-truth map, on a shared voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffResult<T: Real> {
    grid: VoxelScene<T>,
    pub predicted: SetDiff,
    pub truth: SetDiff,
}

fn key_set<T: Real>(s: &VoxelScene<T>) -> BTreeSet<VoxelKey> {
    s.keys().copied().collect()
}

impl<T: Real> DiffResult<T> {
    fn cloud(&self, keys: &BTreeSet<VoxelKey>) -> PointCloud<T> {
        PointCloud::new(keys.iter().map(|k| self.grid.center(k)).collect()).expect("finite centers")
    }

    pub fn p_add(&self) -> PointCloud<T> {
        self.cloud(&self.predicted.added)
    }
    pub fn p_del(&self) -> PointCloud<T> {
        self.cloud(&self.predicted.deleted)
    }
    pub fn p_star_add(&self) -> PointCloud<T> {
        self.cloud(&self.truth.added)
    }
    pub fn p_star_del(&self) -> PointCloud<T> {
        self.cloud(&self.truth.deleted)
    }
}

/// Set differences of `p_out`, `p_upd` (estimate) and `p_star_upd`
/// (ground truth). All scenes must share resolution and origin.
pub fn diff_sets<T: Real>(
    p_out: &VoxelScene<T>,
    p_upd: &VoxelScene<T>,
    p_star_upd: &VoxelScene<T>,
) -> Result<DiffResult<T>> {
    if !p_out.same_grid(p_upd) || !p_out.same_grid(p_star_upd) {
        return Err(Error::IncompatibleGrids);
    }
    let out = key_set(p_out);
    let upd = key_set(p_upd);
    let star = key_set(p_star_upd);
    Ok(DiffResult {
        grid: p_out.empty_like(),
        predicted: SetDiff {
            added: upd.difference(&out).copied().collect(),
            deleted: out.difference(&upd).copied().collect(),
        },
        truth: SetDiff {
            added: star.difference(&out).copied().collect(),
            deleted: out.difference(&star).copied().collect(),
        },
    })
}

/// Squared nearest distances from each point of `from` to the set `to`, in
/// the order of `from`.
pub fn directed_squared<T: Real>(
    from: &[Point3<T>],
    to: &[Point3<T>],
    backend: DistanceBackend,
) -> Result<Vec<T>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::UndefinedOnEmptySet);
    }
    Ok(match backend {
        DistanceBackend::Indexed => {
            let index = SpatialIndex::build(to)?;
            from.par_iter().map(|q| index.nearest(q).1).collect()
        }
        DistanceBackend::Exhaustive => from
            .par_iter()
            .map(|q| {
                to.iter()
                    .map(|p| squared_distance(q, p))
                    .fold(T::max_value().unwrap(), |a, b| if b < a { b } else { a })
            })
            .collect(),
    })
}

/// Summary of one direction's nearest distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedStats<T> {
    pub count: usize,
    pub max: T,
    pub mean: T,
    pub median: T,
    pub mean_squared: T,
}

fn median_sorted<T: Real>(sorted: &[T]) -> T {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) * T::lit(0.5)
    }
}

impl<T: Real> DirectedStats<T> {
    pub fn from_squared(sq: &[T]) -> Self {
        let n = T::lit(sq.len() as f64);
        let mut dist: Vec<T> = sq.iter().map(|d| d.sqrt()).collect();
        let sum_sq = sq.iter().fold(T::zero(), |a, b| a + *b);
        let sum = dist.iter().fold(T::zero(), |a, b| a + *b);
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Self {
            count: sq.len(),
            max: *dist.last().expect("non-empty"),
            mean: sum / n,
            median: median_sorted(&dist),
            mean_squared: sum_sq / n,
        }
    }
}

/// Both directions of nearest-distance statistics for a pair of sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairStats<T> {
    pub forward: DirectedStats<T>,
    pub backward: DirectedStats<T>,
}

impl<T: Real> PairStats<T> {
    pub fn compute(p: &[Point3<T>], q: &[Point3<T>], backend: DistanceBackend) -> Result<Self> {
        Ok(Self {
            forward: DirectedStats::from_squared(&directed_squared(p, q, backend)?),
            backward: DirectedStats::from_squared(&directed_squared(q, p, backend)?),
        })
    }

    pub fn chamfer(&self) -> T {
        self.forward.mean_squared + self.backward.mean_squared
    }
    pub fn hausdorff(&self) -> T {
        self.forward.max.max(self.backward.max)
    }
    pub fn modified_hausdorff(&self) -> T {
        self.forward.mean.max(self.backward.mean)
    }
    pub fn median_point(&self) -> T {
        self.forward.median.max(self.backward.median)
    }
}

/// Mean squared nearest distance in both directions, summed (m²).
pub fn chamfer<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T> {
    Ok(PairStats::compute(p.points(), q.points(), DistanceBackend::Indexed)?.chamfer())
}

/// Larger of the two directed maximum nearest distances.
pub fn hausdorff<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T> {
    Ok(PairStats::compute(p.points(), q.points(), DistanceBackend::Indexed)?.hausdorff())
}

/// Larger of the two directed mean nearest distances.
pub fn modified_hausdorff<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T> {
    Ok(PairStats::compute(p.points(), q.points(), DistanceBackend::Indexed)?.modified_hausdorff())
}

/// Larger of the two directed median nearest distances; an even count
/// takes the mean of the two central values.
pub fn median_point<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T> {
    Ok(PairStats::compute(p.points(), q.points(), DistanceBackend::Indexed)?.median_point())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedReport {
    pub max_m: f64,
    pub mean_m: f64,
    pub median_m: f64,
    pub mean_squared_m2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectedPair {
    pub forward: Option<DirectedReport>,
    pub backward: Option<DirectedReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub predicted: usize,
    pub ground_truth: usize,
}

/// Metric values for one (predicted, ground truth) pair. Undefined metrics
/// are `null` and listed in `undefined`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer_m2: Option<f64>,
    pub hausdorff_m: Option<f64>,
    pub modified_hausdorff_m: Option<f64>,
    pub median_point_m: Option<f64>,
    pub directed: DirectedPair,
    pub counts: PairCounts,
    pub undefined: Vec<String>,
}

fn directed_report<T: Real>(s: &DirectedStats<T>) -> DirectedReport {
    DirectedReport {
        max_m: s.max.to_f64_lossy(),
        mean_m: s.mean.to_f64_lossy(),
        median_m: s.median.to_f64_lossy(),
        mean_squared_m2: s.mean_squared.to_f64_lossy(),
    }
}

impl MetricReport {
    pub const METRICS: [&'static str; 4] = ["chamfer_m2", "hausdorff_m", "modified_hausdorff_m", "median_point_m"];

    pub fn compute<T: Real>(predicted: &[Point3<T>], truth: &[Point3<T>], backend: DistanceBackend) -> Self {
        let counts = PairCounts {
            predicted: predicted.len(),
            ground_truth: truth.len(),
        };
        match PairStats::compute(predicted, truth, backend) {
            Ok(s) => Self {
                chamfer_m2: Some(s.chamfer().to_f64_lossy()),
                hausdorff_m: Some(s.hausdorff().to_f64_lossy()),
                modified_hausdorff_m: Some(s.modified_hausdorff().to_f64_lossy()),
                median_point_m: Some(s.median_point().to_f64_lossy()),
                directed: DirectedPair {
                    forward: Some(directed_report(&s.forward)),
                    backward: Some(directed_report(&s.backward)),
                },
                counts,
                undefined: Vec::new(),
            },
            Err(_) => Self {
                counts,
                undefined: Self::METRICS.iter().map(|s| s.to_string()).collect(),
                ..Self::default()
            },
        }
    }

    /// Defined metric values in a fixed order.
    pub fn defined_values(&self) -> Vec<f64> {
        [self.chamfer_m2, self.hausdorff_m, self.modified_hausdorff_m, self.median_point_m]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Addition (`P_add` vs `P*_add`) and deletion (`P_del` vs `P*_del`)
/// reports of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub addition: MetricReport,
    pub deletion: MetricReport,
}

pub fn evaluate_update<T: Real>(diff: &DiffResult<T>, backend: DistanceBackend) -> UpdateReport {
    UpdateReport {
        addition: MetricReport::compute(diff.p_add().points(), diff.p_star_add().points(), backend),
        deletion: MetricReport::compute(diff.p_del().points(), diff.p_star_del().points(), backend),
    }
}
