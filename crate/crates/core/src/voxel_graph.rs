//! Voxel downsampling and the micro-structure graphs built over a
//! correspondence set.
//!
//! Voxels are keyed by `floor(x / l)` per axis and stored in an ordered map,
//! so every traversal is deterministic. Graph edges are never materialized:
//! the graph is complete and edge quantities are computed on demand by the
//! outlier filter.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::outlier_removal::CorrespondenceSet;

/// An ordered list of 3D points in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Fails on the first non-finite coordinate.
    pub fn validate(&self) -> Result<()> {
        match self
            .points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            Some(i) => Err(Error::InvalidCloud(format!(
                "point {i} has a non-finite coordinate"
            ))),
            None => Ok(()),
        }
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self { points }
    }
}

/// Integer voxel coordinates at a fixed resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelIndex {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelIndex {
    pub fn of(p: &Point3, ell: f64) -> Self {
        Self {
            i: (p.x / ell).floor() as i64,
            j: (p.y / ell).floor() as i64,
            k: (p.z / ell).floor() as i64,
        }
    }

    pub fn lower_corner(&self, ell: f64) -> Point3 {
        Vector3::new(self.i as f64, self.j as f64, self.k as f64) * ell
    }

    pub fn center(&self, ell: f64) -> Point3 {
        self.lower_corner(ell) + Vector3::repeat(0.5 * ell)
    }

    /// Whether `p` lies in this voxel's closed cube, padded by `slack`.
    pub fn contains(&self, p: &Point3, ell: f64, slack: f64) -> bool {
        let lo = self.lower_corner(ell);
        (0..3).all(|a| p[a] >= lo[a] - slack && p[a] <= lo[a] + ell + slack)
    }
}

pub type VoxelMap = BTreeMap<VoxelIndex, Vec<usize>>;

fn check_resolution(ell: f64) -> Result<()> {
    if ell > 0.0 && ell.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveResolution(ell))
    }
}

fn bucket(cloud: &PointCloud, ell: f64) -> VoxelMap {
    let mut map = VoxelMap::new();
    for (idx, p) in cloud.points.iter().enumerate() {
        map.entry(VoxelIndex::of(p, ell)).or_default().push(idx);
    }
    map
}

fn centroid_of(cloud: &PointCloud, members: &[usize]) -> Point3 {
    let sum = members
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + cloud.points[i]);
    sum / members.len() as f64
}

/// One representative (the member centroid) per occupied voxel, in voxel-key
/// order, together with the voxel-to-members map.
pub fn octree_downsample(cloud: &PointCloud, ell: f64) -> Result<(PointCloud, VoxelMap)> {
    check_resolution(ell)?;
    let map = bucket(cloud, ell);
    let reps = map
        .values()
        .map(|members| centroid_of(cloud, members))
        .collect();
    Ok((PointCloud::new(reps), map))
}

/// Spatial index of a raw cloud at resolution `l`.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: f64,
    cells: BTreeMap<VoxelIndex, Arc<[usize]>>,
}

impl VoxelGrid {
    pub fn new(cloud: &PointCloud, ell: f64) -> Result<Self> {
        check_resolution(ell)?;
        let cells = bucket(cloud, ell)
            .into_iter()
            .map(|(k, v)| (k, Arc::from(v)))
            .collect();
        Ok(Self {
            resolution: ell,
            cells,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &VoxelIndex) -> Option<&Arc<[usize]>> {
        self.cells.get(key)
    }

    /// Raw-point indices within Euclidean distance `radius` of `center`,
    /// ascending.
    pub fn points_within(&self, cloud: &PointCloud, center: &Point3, radius: f64) -> Vec<usize> {
        let ell = self.resolution;
        let lo = VoxelIndex::of(&(center - Vector3::repeat(radius)), ell);
        let hi = VoxelIndex::of(&(center + Vector3::repeat(radius)), ell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for i in lo.i..=hi.i {
            for j in lo.j..=hi.j {
                let from = VoxelIndex { i, j, k: lo.k };
                let to = VoxelIndex { i, j, k: hi.k };
                for members in self.cells.range(from..=to).map(|(_, m)| m) {
                    out.extend(
                        members
                            .iter()
                            .copied()
                            .filter(|&m| (cloud.points[m] - center).norm_squared() <= r2),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The voxel holding `p`, or the voxel of the closest raw point when
    /// `p`'s own voxel is empty.
    fn locate(&self, cloud: &PointCloud, p: &Point3) -> Option<VoxelIndex> {
        let key = VoxelIndex::of(p, self.resolution);
        if self.cells.contains_key(&key) {
            return Some(key);
        }
        let nearest = cloud.points.iter().min_by(|a, b| {
            (*a - p)
                .norm_squared()
                .total_cmp(&(*b - p).norm_squared())
        })?;
        Some(VoxelIndex::of(nearest, self.resolution))
    }
}

/// The raw points sharing a voxel with a graph node.
#[derive(Debug, Clone)]
pub struct MicroStructure {
    pub voxel: VoxelIndex,
    /// Center of the voxel cube.
    pub center: Point3,
    pub member_points: Arc<[usize]>,
}

/// Nodes are correspondence endpoints in one cloud; each carries its
/// micro-structure.
#[derive(Debug, Clone)]
pub struct MicroStructuresGraph {
    pub nodes: Vec<Point3>,
    pub micro: Vec<MicroStructure>,
    pub resolution: f64,
    grid: VoxelGrid,
}

impl MicroStructuresGraph {
    pub fn build(cloud: &PointCloud, endpoints: Vec<Point3>, ell: f64) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::InvalidCloud("cloud is empty".into()));
        }
        let grid = VoxelGrid::new(cloud, ell)?;
        let micro = endpoints
            .iter()
            .map(|p| {
                // `locate` only fails on an empty cloud, rejected above.
                let voxel = grid.locate(cloud, p).expect("non-empty cloud");
                MicroStructure {
                    voxel,
                    center: voxel.center(ell),
                    member_points: Arc::clone(&grid.cells[&voxel]),
                }
            })
            .collect();
        Ok(Self {
            nodes: endpoints,
            micro,
            resolution: ell,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// Node `i`'s micro-structure grown by every raw point within `radius`
    /// of the node. Sorted, no duplicates.
    pub fn expanded_members(&self, cloud: &PointCloud, node: usize, radius: f64) -> Vec<usize> {
        let mut out = self.grid.points_within(cloud, &self.nodes[node], radius);
        out.extend(self.micro[node].member_points.iter().copied());
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Builds `G^P` over the `p` endpoints and `G^Q` over the `q` endpoints of
/// `corr`. Node `i` of each graph belongs to `corr.pairs[i]`.
pub fn build_graphs(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    corr: &CorrespondenceSet,
    ell: f64,
) -> Result<(MicroStructuresGraph, MicroStructuresGraph)> {
    check_resolution(ell)?;
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let ps = corr.pairs.iter().map(|c| c.p).collect();
    let qs = corr.pairs.iter().map(|c| c.q).collect();
    let (gp, gq) = rayon::join(
        || MicroStructuresGraph::build(cloud_p, ps, ell),
        || MicroStructuresGraph::build(cloud_q, qs, ell),
    );
    Ok((gp?, gq?))
}
