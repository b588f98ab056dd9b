//! Seeded synthetic registration problems with labelled correspondences.
//!
//! The target cloud `P` samples a scene in world coordinates. The source
//! cloud `Q` samples the same scene independently and is expressed in its
//! own frame, so the ground truth `T` maps source points onto the target.

use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, Point3, RigidTransform};
use crate::io;
use crate::outlier_removal::{Correspondence, CorrespondenceSet};
use crate::voxel_graph::PointCloud;

/// Cloud noise relative to the correspondence noise.
const CLOUD_NOISE_FACTOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// Floor and two walls meeting in a corner, 3 m x 3 m x 2.5 m.
    ThreePlanes,
    /// Floor and one wall.
    LShape,
    /// Trunks and crowns over undulating ground; few planar patches.
    TreesLike,
}

impl std::str::FromStr for Scene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_planes" => Ok(Scene::ThreePlanes),
            "l_shape" => Ok(Scene::LShape),
            "trees_like" => Ok(Scene::TreesLike),
            other => Err(Error::InvalidParameter(format!("unknown scene {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    /// Uniform axis, angle up to `max_angle` radians, translation up to
    /// `max_translation` meters per axis; drawn from the scene seed.
    Random { max_angle: f64, max_translation: f64 },
    Explicit(RigidTransform),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scene: Scene,
    /// Points per cloud.
    pub n_points: usize,
    pub inliers: usize,
    pub outlier_rate: f64,
    /// Standard deviation of the inlier correspondence noise, meters.
    pub noise_sigma: f64,
    pub transform: TransformSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            scene: Scene::ThreePlanes,
            n_points: 30_000,
            inliers: 86,
            outlier_rate: 0.957,
            noise_sigma: 0.01,
            transform: TransformSpec::Random {
                max_angle: std::f64::consts::PI * 0.9,
                max_translation: 2.0,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate must lie in [0, 1), got {}", self.outlier_rate));
        }
        if self.inliers < 3 {
            return bad(format!("need at least 3 inliers, got {}", self.inliers));
        }
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// `round(inliers / (1 - outlier_rate))`, never fewer than `inliers`.
    pub fn total_correspondences(&self) -> usize {
        ((self.inliers as f64 / (1.0 - self.outlier_rate)).round() as usize).max(self.inliers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    /// Moving cloud `Q`.
    pub source: PointCloud,
    /// Reference cloud `P`.
    pub target: PointCloud,
    pub correspondences: CorrespondenceSet,
    /// `true` for inlier correspondences, aligned with `correspondences`.
    pub labels: Vec<bool>,
    /// Maps source coordinates to target coordinates.
    pub truth: RigidTransform,
}

impl SyntheticProblem {
    /// Writes `source.ply`, `target.ply`, `corr.txt`, `gt.txt` and
    /// `labels.txt` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_ply(dir.join("source.ply"), &self.source)?;
        io::write_ply(dir.join("target.ply"), &self.target)?;
        io::write_correspondences(dir.join("corr.txt"), &self.correspondences)?;
        io::write_transform(dir.join("gt.txt"), &self.truth)?;
        io::write_labels(dir.join("labels.txt"), &self.labels)
    }
}

fn sample_rect(rng: &mut impl Rng, origin: Point3, a: Vector3<f64>, b: Vector3<f64>) -> Point3 {
    origin + a * rng.random::<f64>() + b * rng.random::<f64>()
}

/// One noise-free surface sample of the scene.
fn sample_scene(scene: Scene, rng: &mut impl Rng) -> Point3 {
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    match scene {
        Scene::ThreePlanes => {
            // Areas 9, 7.5 and 7.5 square meters.
            let u: f64 = rng.random_range(0.0..24.0);
            if u < 9.0 {
                sample_rect(rng, Vector3::zeros(), x * 3.0, y * 3.0)
            } else if u < 16.5 {
                sample_rect(rng, Vector3::zeros(), x * 3.0, z * 2.5)
            } else {
                sample_rect(rng, Vector3::zeros(), y * 3.0, z * 2.5)
            }
        }
        Scene::LShape => {
            if rng.random_range(0.0..16.5) < 9.0 {
                sample_rect(rng, Vector3::zeros(), x * 3.0, y * 3.0)
            } else {
                sample_rect(rng, Vector3::zeros(), x * 3.0, z * 2.5)
            }
        }
        Scene::TreesLike => sample_trees(rng),
    }
}

const TREES: [(f64, f64, f64); 5] = [
    (0.6, 0.7, 1.6),
    (2.2, 0.5, 2.0),
    (1.4, 1.8, 1.8),
    (2.5, 2.4, 1.5),
    (0.5, 2.6, 2.2),
];

fn ground_height(x: f64, y: f64) -> f64 {
    0.15 * (2.1 * x).sin() * (1.7 * y).cos() + 0.05 * (5.3 * x + 3.1 * y).sin()
}

fn sample_trees(rng: &mut impl Rng) -> Point3 {
    let u: f64 = rng.random();
    if u < 0.3 {
        let (x, y) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        return Vector3::new(x, y, ground_height(x, y));
    }
    let (cx, cy, h) = TREES[rng.random_range(0..TREES.len())];
    let base = ground_height(cx, cy);
    if u < 0.5 {
        // Trunk: cylinder of radius 0.08.
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let zt = rng.random_range(0.0..h);
        return Vector3::new(cx + 0.08 * a.cos(), cy + 0.08 * a.sin(), base + zt);
    }
    // Crown: lumpy sphere of radius about 0.5 around the trunk top.
    let d = unit_vector(rng);
    let r = 0.5 * (1.0 + 0.2 * (7.0 * d.x).sin() * (5.0 * d.y).cos() + 0.1 * rng.random_range(-1.0..1.0f64));
    Vector3::new(cx, cy, base + h) + d * r
}

/// Uniform direction by rejection sampling in the unit ball.
fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_transform(rng: &mut impl Rng, max_angle: f64, max_translation: f64) -> RigidTransform {
    let axis = unit_vector(rng);
    let angle = rng.random_range(0.0..=max_angle);
    let t = Vector3::new(
        rng.random_range(-max_translation..=max_translation),
        rng.random_range(-max_translation..=max_translation),
        rng.random_range(-max_translation..=max_translation),
    );
    RigidTransform::new(exp_so3(&(axis * angle)), t)
}

fn gaussian(rng: &mut impl Rng, normal: &Normal<f64>) -> Vector3<f64> {
    Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
}

/// Builds a problem from `spec`. Identical specs give identical problems.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = match spec.transform {
        TransformSpec::Random {
            max_angle,
            max_translation,
        } => random_transform(&mut rng, max_angle, max_translation),
        TransformSpec::Explicit(t) => t,
    };
    let to_source = truth.inverse();
    let corr_noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let cloud_noise = Normal::new(0.0, spec.noise_sigma * CLOUD_NOISE_FACTOR).expect("validated sigma");

    let target: Vec<Point3> = (0..spec.n_points)
        .map(|_| sample_scene(spec.scene, &mut rng) + gaussian(&mut rng, &cloud_noise))
        .collect();
    let source: Vec<Point3> = (0..spec.n_points)
        .map(|_| {
            let world = sample_scene(spec.scene, &mut rng) + gaussian(&mut rng, &cloud_noise);
            to_source.transform_point(&world)
        })
        .collect();

    let total = spec.total_correspondences();
    let mut pairs: Vec<(Point3, Point3, bool)> = Vec::with_capacity(total);
    for _ in 0..spec.inliers {
        let q = source[rng.random_range(0..source.len())];
        let p = truth.transform_point(&q) + gaussian(&mut rng, &corr_noise);
        pairs.push((p, q, true));
    }
    for _ in spec.inliers..total {
        let p = target[rng.random_range(0..target.len())];
        let q = source[rng.random_range(0..source.len())];
        pairs.push((p, q, false));
    }
    pairs.shuffle(&mut rng);

    let labels = pairs.iter().map(|&(_, _, l)| l).collect();
    let correspondences = CorrespondenceSet::initial(
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(p, q, _))| Correspondence::new(p, q, i))
            .collect(),
    );
    Ok(SyntheticProblem {
        source: PointCloud::new(source),
        target: PointCloud::new(target),
        correspondences,
        labels,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_points: 2000,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts_match_rate() {
        let s = small(1);
        assert_eq!(s.total_correspondences(), 2000);
        let p = generate(&s).unwrap();
        assert_eq!(p.correspondences.len(), 2000);
        assert_eq!(p.labels.iter().filter(|&&l| l).count(), 86);
        let rate = p.labels.iter().filter(|&&l| !l).count() as f64 / 2000.0;
        assert!((rate - 0.957).abs() < 1e-12);
        assert_eq!(p.source.len(), 2000);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(7)).unwrap(), generate(&small(7)).unwrap());
        assert_ne!(generate(&small(7)).unwrap().truth, generate(&small(8)).unwrap().truth);
    }

    #[test]
    fn inliers_within_four_sigma() {
        let s = SyntheticSpec {
            inliers: 100,
            outlier_rate: 0.5,
            ..small(3)
        };
        let p = generate(&s).unwrap();
        let inl: Vec<_> = p
            .correspondences
            .pairs
            .iter()
            .zip(&p.labels)
            .filter(|(_, &l)| l)
            .map(|(c, _)| (c.p - p.truth.transform_point(&c.q)).norm())
            .collect();
        assert_eq!(inl.len(), 100);
        let ok = inl.iter().filter(|&&d| d <= 0.04).count();
        assert!(ok >= 99);
    }

    #[test]
    fn source_is_scene_in_source_frame() {
        let s = SyntheticSpec {
            noise_sigma: 0.0,
            ..small(4)
        };
        let p = generate(&s).unwrap();
        for q in p.source.iter().take(200) {
            let w = p.truth.transform_point(q);
            let on_plane = w.x.abs() < 1e-9 || w.y.abs() < 1e-9 || w.z.abs() < 1e-9;
            assert!(on_plane, "{w:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&SyntheticSpec { outlier_rate: 1.0, ..small(0) }).is_err());
        assert!(generate(&SyntheticSpec { inliers: 2, ..small(0) }).is_err());
        assert!("pyramid".parse::<Scene>().is_err());
        assert_eq!("l_shape".parse::<Scene>().unwrap(), Scene::LShape);
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = generate(&small(5)).unwrap();
        p.write_to_dir(dir.path()).unwrap();
        for f in ["source.ply", "target.ply", "corr.txt", "gt.txt", "labels.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let corr = io::read_correspondences(dir.path().join("corr.txt")).unwrap();
        assert_eq!(corr, p.correspondences);
        let gt = io::read_transform(dir.path().join("gt.txt")).unwrap();
        assert!((gt.to_homogeneous() - p.truth.to_homogeneous()).abs().max() < 1e-15);
    }
}
