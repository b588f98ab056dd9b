//! Plane feature groups and their covariance statistics, plus the adaptive
//! octree that finds them inside a pair of micro-structures.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{exp_se3, Point3, RigidTransform, Twist};

/// Feature points of one plane seen from both clouds.
///
/// `points_ref` come from `P` and keep the identity pose. `points_mov` come
/// from `Q`, already carried into `P`'s frame by the coarse pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFeatureGroup {
    pub points_ref: Vec<Point3>,
    pub points_mov: Vec<Point3>,
    /// Raw-cloud index of each reference point.
    pub ref_ids: Vec<usize>,
    /// Raw-cloud index of each moving point.
    pub mov_ids: Vec<usize>,
}

impl PlaneFeatureGroup {
    pub fn new(points_ref: Vec<Point3>, points_mov: Vec<Point3>) -> Self {
        let ref_ids = (0..points_ref.len()).collect();
        let mov_ids = (0..points_mov.len()).collect();
        Self {
            points_ref,
            points_mov,
            ref_ids,
            mov_ids,
        }
    }

    /// Number of reference points, `a_K`.
    pub fn a_k(&self) -> usize {
        self.points_ref.len()
    }

    /// Total number of points, `N_fK`.
    pub fn n_fk(&self) -> usize {
        self.points_ref.len() + self.points_mov.len()
    }

    /// At least three points from each cloud.
    pub fn is_admissible(&self) -> bool {
        self.a_k() >= 3 && self.points_mov.len() >= 3
    }

    /// Moving points under an extra pose `t`.
    pub fn moved(&self, t: &RigidTransform) -> impl Iterator<Item = Point3> + '_ {
        let t = *t;
        self.points_mov.iter().map(move |p| t.transform_point(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneStatistics {
    pub centroid: Point3,
    /// `1/N`-normalized scatter matrix.
    pub covariance: Matrix3<f64>,
    /// Eigenvalues in ascending order.
    pub eigenvalues: [f64; 3],
    pub lambda_min: f64,
    /// Unit eigenvector of `lambda_min`, first nonzero component positive.
    pub u_min: Vector3<f64>,
}

impl PlaneStatistics {
    /// Distance from `lambda_min` to the next eigenvalue.
    pub fn gap(&self) -> f64 {
        self.eigenvalues[1] - self.eigenvalues[0]
    }

    /// `lambda_min / (lambda_1 + lambda_2 + lambda_3)`; zero for a
    /// degenerate (single-point) set.
    pub fn planarity(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total > 0.0 {
            self.lambda_min / total
        } else {
            0.0
        }
    }

    /// Root-mean-square distance to the best-fit plane.
    pub fn rms(&self) -> f64 {
        self.lambda_min.max(0.0).sqrt()
    }
}

/// Flips `u` so that its first component with magnitude above `1e-12` is
/// positive.
pub fn canonical_sign(u: Vector3<f64>) -> Vector3<f64> {
    match u.iter().find(|c| c.abs() > 1e-12) {
        Some(&c) if c < 0.0 => -u,
        _ => u,
    }
}

/// Centroid, covariance and eigen-decomposition of a point set.
pub fn statistics_of<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> PlaneStatistics {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    let centroid = if n > 0 { sum / n as f64 } else { sum };
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    if n > 0 {
        cov /= n as f64;
    }
    decompose(centroid, cov)
}

fn decompose(centroid: Point3, covariance: Matrix3<f64>) -> PlaneStatistics {
    let eig = covariance.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i]);
    let u_min = canonical_sign(eig.eigenvectors.column(order[0]).normalize());
    PlaneStatistics {
        centroid,
        covariance,
        eigenvalues,
        // Round-off can push the smallest eigenvalue of a PSD matrix below
        // zero.
        lambda_min: eigenvalues[0].max(0.0),
        u_min,
    }
}

/// Statistics of `points_ref` together with `t * points_mov`.
pub fn statistics_under(group: &PlaneFeatureGroup, t: &RigidTransform) -> PlaneStatistics {
    let moved: Vec<Point3> = group.moved(t).collect();
    statistics_of(group.points_ref.iter().chain(moved.iter()))
}

/// Statistics of the group with the moving points carried by `exp(xi)`.
pub fn plane_statistics(group: &PlaneFeatureGroup, xi: &Twist) -> PlaneStatistics {
    statistics_under(group, &exp_se3(xi))
}

/// Thresholds of the adaptive plane search.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneDetectParams {
    /// Cubes with fewer merged points are not examined.
    pub min_points: usize,
    /// Upper bound on `lambda_min / sum(lambda)` of the merged points.
    pub planarity_ratio: f64,
    /// Upper bound on each cloud's RMS distance to its own fitted plane.
    pub rms_tol: f64,
    /// Micro-structure capture radius `L` (meters).
    pub capture_radius: f64,
    /// Subdivision depth limit.
    pub max_depth: usize,
}

impl PlaneDetectParams {
    /// Defaults for resolution `l`: ratio 0.01, RMS `l/10`, 30 points,
    /// `L = 2 l`.
    pub fn for_resolution(ell: f64) -> Self {
        Self {
            min_points: 30,
            planarity_ratio: 0.01,
            rms_tol: ell / 10.0,
            capture_radius: 2.0 * ell,
            max_depth: 8,
        }
    }

    pub fn validate(&self, ell: f64) -> crate::Result<()> {
        let bad = |m: String| Err(crate::Error::InvalidParameter(m));
        if self.min_points < 6 {
            return bad(format!("min_points must be at least 6, got {}", self.min_points));
        }
        if !(self.planarity_ratio > 0.0 && self.planarity_ratio < 1.0) {
            return bad(format!("planarity_ratio must lie in (0, 1), got {}", self.planarity_ratio));
        }
        if !(self.rms_tol > 0.0) {
            return bad(format!("rms_tol must be positive, got {}", self.rms_tol));
        }
        if !(self.capture_radius >= ell) {
            return bad(format!(
                "capture radius {} is below the resolution {ell}",
                self.capture_radius
            ));
        }
        Ok(())
    }
}

/// One merged point: which cloud it came from and its index in that
/// cloud's input slice.
#[derive(Debug, Clone, Copy)]
struct Tagged {
    from_ref: bool,
    index: usize,
}

struct Detector<'a> {
    reference: &'a [Point3],
    moving: &'a [Point3],
    params: &'a PlaneDetectParams,
    out: Vec<PlaneFeatureGroup>,
}

impl Detector<'_> {
    fn point(&self, t: &Tagged) -> &Point3 {
        if t.from_ref {
            &self.reference[t.index]
        } else {
            &self.moving[t.index]
        }
    }

    fn side_is_flat(&self, pts: &[Tagged], from_ref: bool) -> bool {
        let side: Vec<&Point3> = pts
            .iter()
            .filter(|t| t.from_ref == from_ref)
            .map(|t| self.point(t))
            .collect();
        side.len() >= 3 && statistics_of(side.iter().copied()).rms() <= self.params.rms_tol
    }

    fn visit(&mut self, center: Point3, half: f64, pts: Vec<Tagged>, depth: usize) {
        if pts.len() < self.params.min_points {
            return;
        }
        let stats = statistics_of(pts.iter().map(|t| self.point(t)));
        if stats.planarity() <= self.params.planarity_ratio
            && self.side_is_flat(&pts, true)
            && self.side_is_flat(&pts, false)
        {
            let mut group = PlaneFeatureGroup {
                points_ref: Vec::new(),
                points_mov: Vec::new(),
                ref_ids: Vec::new(),
                mov_ids: Vec::new(),
            };
            for t in &pts {
                if t.from_ref {
                    group.points_ref.push(self.reference[t.index]);
                    group.ref_ids.push(t.index);
                } else {
                    group.points_mov.push(self.moving[t.index]);
                    group.mov_ids.push(t.index);
                }
            }
            if group.is_admissible() {
                self.out.push(group);
            }
            return;
        }
        if depth >= self.params.max_depth {
            return;
        }
        let mut children: [Vec<Tagged>; 8] = Default::default();
        for t in pts {
            let p = self.point(&t);
            let octant = usize::from(p.x >= center.x)
                | usize::from(p.y >= center.y) << 1
                | usize::from(p.z >= center.z) << 2;
            children[octant].push(t);
        }
        let q = 0.5 * half;
        for (octant, child) in children.into_iter().enumerate() {
            let offset = Vector3::new(
                if octant & 1 != 0 { q } else { -q },
                if octant & 2 != 0 { q } else { -q },
                if octant & 4 != 0 { q } else { -q },
            );
            self.visit(center + offset, q, child, depth + 1);
        }
    }
}

/// Recursive octree search for shared planes in a pair of micro-structures.
///
/// `moving` is carried into the reference frame by `t_c` first. A cube is a
/// plane when the merged points pass the eigenvalue-ratio test and each
/// cloud's points lie within `rms_tol` of their own fitted plane; otherwise
/// it splits into eight children until it holds fewer than `min_points`.
pub fn detect_planes(
    reference: &[Point3],
    moving: &[Point3],
    t_c: &RigidTransform,
    params: &PlaneDetectParams,
) -> Vec<PlaneFeatureGroup> {
    let moving: Vec<Point3> = moving.iter().map(|p| t_c.transform_point(p)).collect();
    let all = reference.iter().chain(moving.iter());
    let Some(first) = all.clone().next() else {
        return Vec::new();
    };
    let (lo, hi) = all.fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo).max() * (1.0 + 1e-9) + f64::EPSILON;

    let pts: Vec<Tagged> = (0..reference.len())
        .map(|index| Tagged {
            from_ref: true,
            index,
        })
        .chain((0..moving.len()).map(|index| Tagged {
            from_ref: false,
            index,
        }))
        .collect();
    let mut detector = Detector {
        reference,
        moving: &moving,
        params,
        out: Vec::new(),
    };
    detector.visit(center, half, pts, 0);
    detector.out
}

/// Folds groups lying on the same plane (normals within `max_angle` rad and
/// centroid offset along the normal within `max_offset`) into one, dropping
/// points that appear twice.
pub fn merge_duplicate_planes(
    groups: Vec<PlaneFeatureGroup>,
    max_angle: f64,
    max_offset: f64,
) -> Vec<PlaneFeatureGroup> {
    let cos_limit = max_angle.cos();
    let mut merged: Vec<(PlaneFeatureGroup, PlaneStatistics)> = Vec::new();
    for g in groups {
        let s = statistics_under(&g, &RigidTransform::identity());
        let target = merged.iter().position(|(_, m)| {
            m.u_min.dot(&s.u_min).abs() >= cos_limit
                && m.u_min.dot(&(s.centroid - m.centroid)).abs() <= max_offset
        });
        match target {
            Some(i) => {
                let (into, stats) = &mut merged[i];
                absorb(into, g);
                *stats = statistics_under(into, &RigidTransform::identity());
            }
            None => merged.push((g, s)),
        }
    }
    merged.into_iter().map(|(g, _)| g).collect()
}

fn absorb(into: &mut PlaneFeatureGroup, from: PlaneFeatureGroup) {
    let mut seen: std::collections::BTreeSet<usize> = into.ref_ids.iter().copied().collect();
    for (p, id) in from.points_ref.into_iter().zip(from.ref_ids) {
        if seen.insert(id) {
            into.points_ref.push(p);
            into.ref_ids.push(id);
        }
    }
    let mut seen: std::collections::BTreeSet<usize> = into.mov_ids.iter().copied().collect();
    for (p, id) in from.points_mov.into_iter().zip(from.mov_ids) {
        if seen.insert(id) {
            into.points_mov.push(p);
            into.mov_ids.push(id);
        }
    }
}
