//! Planar adjustment: the sum of smallest covariance eigenvalues as a cost,
//! its gradient, and a Levenberg-Marquardt step on the frozen-plane
//! residuals.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;

use super::planes::{statistics_under, PlaneFeatureGroup};
use crate::error::{Error, Result};
use crate::geometry::{exp_se3, RigidTransform, Twist};

/// Eigenvalue gap below which `lambda_min` is treated as repeated.
pub const MIN_EIGEN_GAP: f64 = 1e-10;

/// Relative eigenvalue floor used to count the rank of the normal matrix.
const RANK_TOL: f64 = 1e-12;

/// Sum of `lambda_min` over all groups with the moving points under `t`.
pub fn pa_cost_at(groups: &[PlaneFeatureGroup], t: &RigidTransform) -> f64 {
    let per_group: Vec<f64> = groups
        .par_iter()
        .map(|g| statistics_under(g, t).lambda_min)
        .collect();
    per_group.iter().sum()
}

pub fn pa_cost(groups: &[PlaneFeatureGroup], xi: &Twist) -> f64 {
    pa_cost_at(groups, &exp_se3(xi))
}

/// Gradient of one group's `lambda_min` with respect to a left perturbation
/// of the moving points. Reference points contribute nothing.
pub fn lambda_min_gradient(group: &PlaneFeatureGroup, xi: &Twist) -> Result<Vector6<f64>> {
    let t = exp_se3(xi);
    let stats = statistics_under(group, &t);
    if stats.gap() <= MIN_EIGEN_GAP {
        return Err(Error::RepeatedEigenvalue { gap: stats.gap() });
    }
    let u = stats.u_min;
    let scale = 2.0 / group.n_fk() as f64;
    let mut grad = Vector6::zeros();
    for p in group.moved(&t) {
        let s = u.dot(&(p - stats.centroid));
        let row = jacobian_row(&u, &p);
        grad += row * (scale * s);
    }
    Ok(grad)
}

/// `[u; p x u]`: derivative of `u . p` under a left perturbation of `p`.
fn jacobian_row(u: &nalgebra::Vector3<f64>, p: &nalgebra::Vector3<f64>) -> Vector6<f64> {
    let w = p.cross(u);
    Vector6::new(u.x, u.y, u.z, w.x, w.y, w.z)
}

/// Normal equations of the frozen-plane residuals
/// `u . (p_i - centroid) / sqrt(N)` at one pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEquations {
    pub hessian: Matrix6<f64>,
    pub gradient: Vector6<f64>,
    /// Sum of squared residuals, equal to the plane cost at the pose.
    pub cost: f64,
}

impl NormalEquations {
    /// Number of eigenvalues of the Gauss-Newton matrix above `1e-12` times
    /// the largest.
    pub fn rank(&self) -> usize {
        let eig = self.hessian.symmetric_eigenvalues();
        let max = eig.amax();
        if max <= 0.0 {
            return 0;
        }
        eig.iter().filter(|&&e| e > RANK_TOL * max).count()
    }
}

fn group_normal_equations(group: &PlaneFeatureGroup, t: &RigidTransform) -> NormalEquations {
    let stats = statistics_under(group, t);
    let u = stats.u_min;
    let inv_n = 1.0 / group.n_fk() as f64;
    let mut hessian = Matrix6::zeros();
    let mut gradient = Vector6::zeros();
    for p in group.moved(t) {
        let j = jacobian_row(&u, &p);
        let r = u.dot(&(p - stats.centroid));
        hessian += j * j.transpose() * inv_n;
        gradient += j * (r * inv_n);
    }
    NormalEquations {
        hessian,
        gradient,
        cost: stats.lambda_min,
    }
}

/// Normal equations summed over all groups, accumulated per group in
/// parallel and reduced in group order.
pub fn normal_equations(groups: &[PlaneFeatureGroup], t: &RigidTransform) -> NormalEquations {
    let parts: Vec<NormalEquations> = groups
        .par_iter()
        .map(|g| group_normal_equations(g, t))
        .collect();
    parts.iter().fold(
        NormalEquations {
            hessian: Matrix6::zeros(),
            gradient: Vector6::zeros(),
            cost: 0.0,
        },
        |acc, p| NormalEquations {
            hessian: acc.hessian + p.hessian,
            gradient: acc.gradient + p.gradient,
            cost: acc.cost + p.cost,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmStep {
    /// Left increment: the new pose is `exp(dxi) * exp(xi)`.
    pub dxi: Twist,
    /// Frozen-plane cost after the increment under the linear model.
    pub predicted_cost: f64,
    /// Rank of the undamped Gauss-Newton matrix.
    pub rank: usize,
    /// Set when the rank is below 6; `dxi` is then the damped
    /// pseudo-solution that leaves the unobservable directions alone.
    pub singular: bool,
}

/// One damped Gauss-Newton step `(H + damping * diag(H)) dxi = -g`, solved
/// within the range of `H`.
pub fn lm_step(groups: &[PlaneFeatureGroup], xi: &Twist, damping: f64) -> LmStep {
    lm_step_at(groups, &exp_se3(xi), damping)
}

pub fn lm_step_at(groups: &[PlaneFeatureGroup], t: &RigidTransform, damping: f64) -> LmStep {
    let ne = normal_equations(groups, t);
    let eig = ne.hessian.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    // Directions the planes cannot see are left out of the solve, so the
    // diagonal scaling cannot drag the pose along them.
    let range: Vec<usize> = (0..6).filter(|&k| eig.eigenvalues[k] > RANK_TOL * max).collect();
    let rank = range.len();
    let dx = if rank == 0 {
        Vector6::zeros()
    } else {
        let basis = DMatrix::from_fn(6, rank, |r, c| eig.eigenvectors[(r, range[c])]);
        let mut a = ne.hessian;
        for k in 0..6 {
            a[(k, k)] += damping * ne.hessian[(k, k)];
        }
        let a = DMatrix::from_column_slice(6, 6, a.as_slice());
        let reduced = basis.transpose() * &a * &basis;
        let rhs = -(basis.transpose() * DVector::from_column_slice(ne.gradient.as_slice()));
        match reduced.cholesky() {
            Some(ch) => Vector6::from_column_slice((&basis * ch.solve(&rhs)).as_slice()),
            None => Vector6::zeros(),
        }
    };
    let predicted_cost = ne.cost + 2.0 * ne.gradient.dot(&dx) + dx.dot(&(ne.hessian * dx));
    LmStep {
        dxi: Twist::from_vector(&dx),
        predicted_cost: predicted_cost.max(0.0),
        rank,
        singular: rank < 6,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine_registration::planes::plane_statistics;
    use crate::geometry::Point3;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_plane(rng: &mut impl Rng, n: usize, origin: Point3, a: Point3, b: Point3) -> Vec<Point3> {
        (0..n)
            .map(|_| origin + a * rng.random_range(-0.5..0.5) + b * rng.random_range(-0.5..0.5))
            .collect()
    }

    fn three_planes(rng: &mut impl Rng, n: usize, offset: &RigidTransform) -> Vec<PlaneFeatureGroup> {
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        let specs = [
            (Vector3::new(0.5, 0.5, 0.0), x, y),
            (Vector3::new(0.5, 0.0, 0.5), x, z),
            (Vector3::new(0.0, 0.5, 0.5), y, z),
        ];
        specs
            .iter()
            .map(|&(o, a, b)| {
                let r = sample_plane(rng, n, o, a, b);
                let m = sample_plane(rng, n, o, a, b)
                    .iter()
                    .map(|p| offset.transform_point(p))
                    .collect();
                PlaneFeatureGroup::new(r, m)
            })
            .collect()
    }

    fn random_twist(rng: &mut impl Rng, t: f64, r: f64) -> Twist {
        let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Twist::new(v() * t, v() * r)
    }

    #[test]
    fn two_cluster_offset_cost() {
        // Reference on z = 0, moving on z = 0.1, both centered in xy so the
        // offset is uncorrelated with the in-plane spread: the between-
        // cluster variance is f_ref * f_mov * 0.1^2.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let centered = |pts: Vec<Point3>| {
            let mean = pts.iter().sum::<Point3>() / pts.len() as f64;
            pts.iter().map(|p| p - mean).collect::<Vec<_>>()
        };
        let r = centered(sample_plane(&mut rng, 30, Vector3::zeros(), Vector3::x(), Vector3::y()));
        let m: Vec<Point3> = centered(sample_plane(&mut rng, 70, Vector3::zeros(), Vector3::x(), Vector3::y()))
            .iter()
            .map(|p| p + Vector3::new(0.0, 0.0, 0.1))
            .collect();
        let g = vec![PlaneFeatureGroup::new(r, m)];
        let expected = 0.3 * 0.7 * 0.01;
        assert!((pa_cost(&g, &Twist::zero()) - expected).abs() < 1e-12);
    }

    #[test]
    fn cost_equals_plane_distance_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let offset = exp_se3(&random_twist(&mut rng, 0.05, 0.05));
        let groups = three_planes(&mut rng, 40, &offset);
        for _ in 0..20 {
            let xi = random_twist(&mut rng, 0.1, 0.1);
            let t = exp_se3(&xi);
            let mut direct = 0.0;
            for g in &groups {
                let s = plane_statistics(g, &xi);
                let pts: Vec<Point3> = g.points_ref.iter().copied().chain(g.moved(&t)).collect();
                let d: f64 = pts.iter().map(|p| s.u_min.dot(&(p - s.centroid)).powi(2)).sum();
                direct += d / pts.len() as f64;
                assert!(s.lambda_min <= s.covariance.trace() / 3.0 + 1e-15);
            }
            assert!((pa_cost(&groups, &xi) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cost_and_gradient_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gt = random_twist(&mut rng, 0.05, 0.05);
        let groups = three_planes(&mut rng, 40, &exp_se3(&gt).inverse());
        assert!(pa_cost(&groups, &gt) < 1e-12);
        for g in &groups {
            assert!(lambda_min_gradient(g, &gt).unwrap().norm() < 1e-12);
        }
        let step = lm_step(&groups, &gt, 1e-4);
        assert!(step.dxi.to_vector().norm() < 1e-10);
    }

    #[test]
    fn reference_only_group_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = sample_plane(&mut rng, 20, Vector3::zeros(), Vector3::x(), Vector3::y());
        let mut r: Vec<Point3> = r;
        r.iter_mut().for_each(|p| p.z += rng.random_range(-0.01..0.01));
        let g = PlaneFeatureGroup::new(r, Vec::new());
        assert_eq!(lambda_min_gradient(&g, &random_twist(&mut rng, 0.1, 0.1)).unwrap(), Vector6::zeros());
    }

    /// Central differences of `lambda_min` under `exp(h e_k) * exp(xi)`.
    fn fd_gradient(g: &PlaneFeatureGroup, xi: &Twist, h: f64) -> Vector6<f64> {
        let base = exp_se3(xi);
        let mut out = Vector6::zeros();
        for k in 0..6 {
            let mut e = Vector6::zeros();
            e[k] = h;
            let plus = exp_se3(&Twist::from_vector(&e)) * base;
            let minus = exp_se3(&Twist::from_vector(&-e)) * base;
            out[k] = (statistics_under(g, &plus).lambda_min - statistics_under(g, &minus).lambda_min) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let offset = exp_se3(&random_twist(&mut rng, 0.05, 0.1));
            let mut groups = three_planes(&mut rng, 15, &offset);
            let g = groups.swap_remove(rng.random_range(0..3));
            let xi = random_twist(&mut rng, 0.05, 0.05);
            let analytic = lambda_min_gradient(&g, &xi).unwrap();
            let numeric = fd_gradient(&g, &xi, 1e-6);
            let rel = (analytic - numeric).norm() / analytic.norm().max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn lm_gradient_is_half_the_cost_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let offset = exp_se3(&random_twist(&mut rng, 0.05, 0.05));
        let groups = three_planes(&mut rng, 30, &offset);
        let ne = normal_equations(&groups, &RigidTransform::identity());
        let total: Vector6<f64> = groups
            .iter()
            .map(|g| lambda_min_gradient(g, &Twist::zero()).unwrap())
            .sum();
        assert!((ne.gradient * 2.0 - total).norm() < 1e-12);
        assert!((ne.cost - pa_cost(&groups, &Twist::zero())).abs() < 1e-15);
    }

    #[test]
    fn isotropic_group_reports_repeated_eigenvalue() {
        let mut pts = Vec::new();
        for a in 0..3 {
            for s in [1.0, -1.0] {
                let mut v = Vector3::zeros();
                v[a] = s;
                pts.push(v);
            }
        }
        let g = PlaneFeatureGroup::new(pts[..3].to_vec(), pts[3..].to_vec());
        assert!(matches!(
            lambda_min_gradient(&g, &Twist::zero()),
            Err(Error::RepeatedEigenvalue { .. })
        ));
    }

    #[test]
    fn single_plane_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut groups = three_planes(&mut rng, 50, &RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.02)));
        groups.truncate(1);
        let ne = normal_equations(&groups, &RigidTransform::identity());
        assert!(ne.rank() <= 3);
        let step = lm_step(&groups, &Twist::zero(), 1e-3);
        assert!(step.singular);
        assert_eq!(step.rank, ne.rank());
        // The step stays out of the unobservable directions and still
        // lowers the cost.
        let eig = ne.hessian.symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let dx = step.dxi.to_vector();
        for k in 0..6 {
            if eig.eigenvalues[k] <= 1e-12 * max {
                assert!(eig.eigenvectors.column(k).dot(&dx).abs() < 1e-9);
            }
        }
        assert!(pa_cost(&groups, &step.dxi) < 0.5 * pa_cost(&groups, &Twist::zero()));
    }

    #[test]
    fn one_step_halves_three_plane_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let offset = exp_se3(&random_twist(&mut rng, 0.02, 0.02));
        let groups = three_planes(&mut rng, 60, &offset);
        let before = pa_cost(&groups, &Twist::zero());
        let step = lm_step(&groups, &Twist::zero(), 1e-4);
        assert!(!step.singular);
        let after = pa_cost(&groups, &step.dxi);
        assert!(after <= 0.5 * before, "{before} -> {after}");
    }
}
