//! Robust pose estimation with the Welsch kernel under graduated
//! non-convexity.
//!
//! The Welsch cost is minimized through its outlier-process form: for a fixed
//! pose the per-pair weights have the closed form `z = exp(-r^2 / (2 s^2))`,
//! and for fixed weights one Gauss-Newton step is taken in se(3) with a left
//! perturbation. The shape parameter `s` starts wide and shrinks every second
//! iteration.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{exp_se3, skew, HomogeneousPoint, RigidTransform, Twist};
use crate::outlier_removal::{Correspondence, CorrespondenceSet};

/// Normal matrices above this condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Lower bound on the annealing rate.
pub const MIN_ANNEAL_RATE: f64 = 1.1;

const MAX_STEP_HALVINGS: usize = 8;
const CHUNK: usize = 256;

/// Welsch loss `1 - exp(-r^2 / (2 s^2))`.
pub fn welsch_rho(r: f64, sigma: f64) -> f64 {
    -(-(r * r) / (2.0 * sigma * sigma)).exp_m1()
}

/// Closed-form minimizer of `r^2/(2 s^2) z + z log z - z + 1` over `z`.
pub fn outlier_process_z(r: f64, sigma: f64) -> f64 {
    (-(r * r) / (2.0 * sigma * sigma)).exp()
}

/// Outlier-process penalty `z log z - z + 1`.
pub fn psi(z: f64) -> Result<f64> {
    if !(z > 0.0 && z <= 1.0) {
        return Err(Error::DomainError(z));
    }
    Ok(z * z.ln() - z + 1.0)
}

/// Outlier-process energy of one residual: `r^2/(2 s^2) z + psi(z)`.
///
/// `z = 0` is accepted here and takes the limit `psi(0+) = 1`, since the
/// closed-form weight underflows for residuals far beyond `sigma`.
pub fn outlier_process_energy(r: f64, sigma: f64, z: f64) -> Result<f64> {
    let penalty = if z == 0.0 { 1.0 } else { psi(z)? };
    Ok(r * r / (2.0 * sigma * sigma) * z + penalty)
}

/// Jacobian of `e = p - T q` with respect to a left perturbation of `T`,
/// columns ordered `(rho, phi)`.
pub fn residual_jacobian(t: &RigidTransform, q: &HomogeneousPoint) -> Matrix3x6<f64> {
    let tq = t.transform_point(&q.xyz);
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&tq));
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct GncParams {
    /// Explicit initial shape parameter. When `None` it is
    /// `sigma_scale * mean ||p - q||` over the input set.
    pub sigma_init: Option<f64>,
    pub sigma_scale: f64,
    /// Floor of the annealing schedule, `0.5 l` by default.
    pub sigma_min: f64,
    /// Annealing rate. When `None` it is `sigma_init / 20`, clamped to at
    /// least [`MIN_ANNEAL_RATE`].
    pub mu: Option<f64>,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// Keep `sigma` at its initial value.
    pub freeze_sigma: bool,
}

impl GncParams {
    pub fn for_resolution(ell: f64) -> Self {
        Self {
            sigma_init: None,
            sigma_scale: 10.0,
            sigma_min: 0.5 * ell,
            mu: None,
            max_iterations: 100,
            convergence_tol: 1e-8,
            freeze_sigma: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.sigma_min > 0.0) {
            return bad(format!("sigma_min must be positive, got {}", self.sigma_min));
        }
        if let Some(s) = self.sigma_init {
            if !(s >= self.sigma_min) {
                return bad(format!("sigma_init {s} is below sigma_min {}", self.sigma_min));
            }
        }
        if let Some(mu) = self.mu {
            if !(mu > 1.0) {
                return bad(format!("annealing rate must exceed 1, got {mu}"));
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GncOutcome {
    pub transform: RigidTransform,
    /// Final outlier-process weight of each input pair.
    pub weights: Vec<f64>,
    /// Final residual norm of each input pair.
    pub residuals: Vec<f64>,
    /// `sigma` used at each iteration.
    pub sigma_schedule: Vec<f64>,
    pub mu: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before the increment test
    /// passed.
    pub converged: bool,
}

struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
}

fn accumulate(pairs: &[Correspondence], t: &RigidTransform, z: &[f64]) -> Normal {
    let partial = |(chunk, zs): (&[Correspondence], &[f64])| {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (c, &w) in chunk.iter().zip(zs) {
            if w == 0.0 {
                continue;
            }
            let j = residual_jacobian(t, &HomogeneousPoint::new(c.q));
            let e = c.p - t.transform_point(&c.q);
            let jt = j.transpose();
            h += jt * j * w;
            g += jt * e * w;
        }
        Normal { h, g }
    };
    // Fixed chunking and an in-order sum keep the result independent of
    // the thread count.
    let parts: Vec<Normal> = pairs
        .par_chunks(CHUNK)
        .zip(z.par_chunks(CHUNK))
        .map(partial)
        .collect();
    parts.into_iter().fold(
        Normal {
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
        },
        |acc, p| Normal {
            h: acc.h + p.h,
            g: acc.g + p.g,
        },
    )
}

fn weighted_cost(pairs: &[Correspondence], t: &RigidTransform, z: &[f64]) -> f64 {
    pairs
        .iter()
        .zip(z)
        .map(|(c, w)| w * (c.p - t.transform_point(&c.q)).norm_squared())
        .sum()
}

fn solve_normal(n: &Normal) -> Result<Vector6<f64>> {
    let eig = n.h.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::RankDeficient { condition });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let q = &eig.eigenvectors;
    Ok(-(q * Matrix6::from_diagonal(&inv_diag) * q.transpose() * n.g))
}

/// Mean of `||p - q||` over the set.
pub fn mean_distance(corr: &CorrespondenceSet) -> f64 {
    let sum: f64 = corr.pairs.iter().map(|c| (c.p - c.q).norm()).sum();
    sum / corr.len() as f64
}

/// Robust pose `T` with `p ~ T q` over the consensus set.
pub fn estimate(corr: &CorrespondenceSet, params: &GncParams) -> Result<GncOutcome> {
    params.validate()?;
    if corr.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: corr.len(),
        });
    }
    corr.validate()?;
    let pairs = &corr.pairs;

    let sigma0 = params
        .sigma_init
        .unwrap_or_else(|| params.sigma_scale * mean_distance(corr))
        .max(params.sigma_min);
    let mu = params
        .mu
        .unwrap_or_else(|| (sigma0 / 20.0).max(MIN_ANNEAL_RATE));
    let mut sigma = sigma0;

    let mut t = RigidTransform::identity();
    let mut last_trans: Option<RigidTransform> = None;
    let mut schedule = Vec::with_capacity(params.max_iterations);
    let mut converged = false;
    let mut iterations = 0;
    let mut z = vec![1.0; pairs.len()];

    for it in 0..params.max_iterations {
        iterations = it + 1;
        if !params.freeze_sigma && sigma > params.sigma_min && it % 2 == 0 {
            sigma = (sigma / mu).max(params.sigma_min);
        }
        schedule.push(sigma);
        for (w, c) in z.iter_mut().zip(pairs) {
            *w = outlier_process_z((c.p - t.transform_point(&c.q)).norm(), sigma);
        }
        let normal = accumulate(pairs, &t, &z);
        let step = solve_normal(&normal)?;

        // Halve the step until the weighted objective does not increase.
        let before = weighted_cost(pairs, &t, &z);
        let mut dxi = Twist::from_vector(&step);
        let mut trans = exp_se3(&dxi);
        for _ in 0..MAX_STEP_HALVINGS {
            if weighted_cost(pairs, &(trans * t), &z) <= before {
                break;
            }
            dxi = dxi.scaled(0.5);
            trans = exp_se3(&dxi);
        }
        t = trans * t;

        if let Some(last) = last_trans {
            let delta = (last.to_homogeneous() - trans.to_homogeneous()).norm();
            if delta < params.convergence_tol {
                converged = true;
                break;
            }
        }
        last_trans = Some(trans);
    }

    if t.rigidity_error() > 1e-9 {
        t = t.orthonormalized();
    }
    let residuals: Vec<f64> = pairs
        .iter()
        .map(|c| (c.p - t.transform_point(&c.q)).norm())
        .collect();
    let weights = residuals
        .iter()
        .map(|&r| outlier_process_z(r, sigma))
        .collect();
    Ok(GncOutcome {
        transform: t,
        weights,
        residuals,
        sigma_schedule: schedule,
        mu,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, Point3};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as Gaussian};
    use std::f64::consts::E;

    fn random_point(rng: &mut impl Rng, half: f64) -> Point3 {
        Vector3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        )
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = random_point(rng, 1.0).normalize();
        exp_se3(&Twist::new(
            random_point(rng, 1.0),
            axis * rng.random_range(0.0..1.5),
        ))
    }

    fn rotation_error_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
        (a.inverse() * *b).rotation_angle().to_degrees()
    }

    #[test]
    fn rho_values() {
        assert_eq!(welsch_rho(0.0, 1.0), 0.0);
        let s = 0.7;
        assert!((welsch_rho(s * 2f64.sqrt(), s) - (1.0 - 1.0 / E)).abs() < 1e-15);
        assert!((welsch_rho(s * 2f64.sqrt(), s) - 0.6321205588285577).abs() < 1e-15);
        assert!(welsch_rho(1e3, 0.1) <= 1.0 && welsch_rho(1e3, 0.1) > 1.0 - 1e-12);
        assert!(welsch_rho(5.0, 1.0) < 1.0 && welsch_rho(50.0, 1.0) == 1.0);
    }

    #[test]
    fn z_values() {
        assert_eq!(outlier_process_z(0.0, 0.3), 1.0);
        let s = 0.3;
        assert!((outlier_process_z(s * 2f64.sqrt(), s) - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn psi_values_and_domain() {
        assert_eq!(psi(1.0).unwrap(), 0.0);
        assert!((psi(1.0 / E).unwrap() - (1.0 - 2.0 / E)).abs() < 1e-15);
        assert!((psi(1.0 / E).unwrap() - 0.26424111765711533).abs() < 1e-15);
        assert!((psi(1e-300).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(psi(0.0), Err(Error::DomainError(_))));
        assert!(psi(-0.5).is_err());
        assert!(psi(1.5).is_err());
    }

    #[test]
    fn jacobian_at_identity() {
        let j = residual_jacobian(&RigidTransform::identity(), &Vector3::zeros().into());
        assert_eq!(j.fixed_view::<3, 3>(0, 0).into_owned(), -Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
    }

    fn fd_jacobian(t: &RigidTransform, p: &Point3, q: &Point3, h: f64) -> Matrix3x6<f64> {
        let mut j = Matrix3x6::zeros();
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = exp_se3(&Twist::from_vector(&d)) * *t;
            let minus = exp_se3(&Twist::from_vector(&-d)) * *t;
            let e_plus = p - plus.transform_point(q);
            let e_minus = p - minus.transform_point(q);
            j.set_column(k, &((e_plus - e_minus) / (2.0 * h)));
        }
        j
    }

    #[test]
    fn jacobian_unit_x_matches_skew() {
        let q = Vector3::x();
        let j = residual_jacobian(&RigidTransform::identity(), &q.into());
        let fd = fd_jacobian(&RigidTransform::identity(), &Vector3::zeros(), &q, 1e-6);
        assert!((j - fd).abs().max() < 1e-8);
        assert_eq!(j.fixed_view::<3, 3>(0, 3).into_owned(), skew(&q));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let q = random_point(&mut rng, 3.0);
            let p = random_point(&mut rng, 3.0);
            let j = residual_jacobian(&t, &q.into());
            let fd = fd_jacobian(&t, &p, &q, 1e-6);
            let rel = (j - fd).norm() / j.norm();
            assert!(rel < 1e-6, "{rel}");
        }
    }

    fn exact_set(n: usize, t: &RigidTransform, rng: &mut impl Rng) -> CorrespondenceSet {
        CorrespondenceSet::from_pairs((0..n).map(|_| {
            let q = random_point(rng, 2.0);
            (t.transform_point(&q), q)
        }))
    }

    #[test]
    fn three_exact_pairs_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let gt = random_transform(&mut rng);
            let corr = exact_set(3, &gt, &mut rng);
            let out = estimate(&corr, &GncParams::for_resolution(0.05)).unwrap();
            assert!(rotation_error_deg(&out.transform, &gt) < 1e-6);
            assert!((out.transform.translation - gt.translation).norm() < 1e-8);
        }
    }

    #[test]
    fn weights_separate_inliers_from_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Gaussian::new(0.0, 0.01).unwrap();
        let gt = random_transform(&mut rng);
        let mut pairs = Vec::new();
        for _ in 0..100 {
            let q = random_point(&mut rng, 2.0);
            let n = Vector3::from_fn(|_, _| noise.sample(&mut rng));
            pairs.push((gt.transform_point(&q) + n, q));
        }
        for _ in 0..100 {
            pairs.push((random_point(&mut rng, 2.0), random_point(&mut rng, 2.0)));
        }
        let corr = CorrespondenceSet::from_pairs(pairs);
        let out = estimate(&corr, &GncParams::for_resolution(0.05)).unwrap();
        let inl = out.weights[..100].iter().filter(|&&z| z > 0.5).count();
        let outl = out.weights[100..].iter().filter(|&&z| z < 0.01).count();
        assert!(inl >= 95, "inliers kept: {inl}");
        assert!(outl >= 95, "outliers suppressed: {outl}");
        assert!(rotation_error_deg(&out.transform, &gt) < 0.5);
    }

    /// Closed-form least squares via SVD of the cross-covariance.
    fn kabsch(corr: &CorrespondenceSet) -> RigidTransform {
        let n = corr.len() as f64;
        let cp = corr.pairs.iter().fold(Vector3::zeros(), |a, c| a + c.p) / n;
        let cq = corr.pairs.iter().fold(Vector3::zeros(), |a, c| a + c.q) / n;
        let mut h = Matrix3::zeros();
        for c in &corr.pairs {
            h += (c.q - cq) * (c.p - cp).transpose();
        }
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (vt.transpose() * u.transpose()).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = vt.transpose() * d * u.transpose();
        RigidTransform::new(r, cp - r * cq)
    }

    #[test]
    fn frozen_sigma_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = Gaussian::new(0.0, 0.01).unwrap();
        let gt = random_transform(&mut rng);
        let corr = CorrespondenceSet::from_pairs((0..60).map(|_| {
            let q = random_point(&mut rng, 2.0);
            let n = Vector3::from_fn(|_, _| noise.sample(&mut rng));
            (gt.transform_point(&q) + n, q)
        }));
        let mut params = GncParams::for_resolution(0.05);
        params.freeze_sigma = true;
        params.sigma_init = Some(1e6);
        let out = estimate(&corr, &params).unwrap();
        let svd = kabsch(&corr);
        assert!(rotation_error_deg(&out.transform, &svd) < 1e-4);
        assert!((out.transform.translation - svd.translation).norm() < 1e-6);
    }

    #[test]
    fn collinear_input_is_rank_deficient() {
        let corr = CorrespondenceSet::from_pairs(
            (0..5).map(|i| (Vector3::new(i as f64, 0.0, 0.0), Vector3::new(i as f64, 0.0, 0.0))),
        );
        assert!(matches!(
            estimate(&corr, &GncParams::for_resolution(0.05)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn schedule_is_monotone_and_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_transform(&mut rng);
        let mut corr = exact_set(50, &gt, &mut rng);
        for c in corr.pairs.iter_mut().take(10) {
            c.p += Vector3::new(3.0, 0.0, 0.0);
        }
        let mut params = GncParams::for_resolution(0.05);
        params.mu = Some(1.4);
        let out = estimate(&corr, &params).unwrap();
        assert!(out.sigma_schedule.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.sigma_schedule.iter().all(|&s| s >= params.sigma_min));
    }

    #[test]
    fn anneal_rate_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corr = exact_set(10, &random_transform(&mut rng), &mut rng);
        let out = estimate(&corr, &GncParams::for_resolution(0.05)).unwrap();
        assert!(out.mu >= MIN_ANNEAL_RATE);
    }

    #[test]
    fn bad_params_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let corr = exact_set(10, &random_transform(&mut rng), &mut rng);
        let mut p = GncParams::for_resolution(0.05);
        p.mu = Some(0.9);
        assert!(estimate(&corr, &p).is_err());
        let mut p = GncParams::for_resolution(0.05);
        p.max_iterations = 0;
        assert!(estimate(&corr, &p).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn duality_identity(r in 0.0f64..10.0, sigma in 0.01f64..10.0) {
                let z = outlier_process_z(r, sigma);
                let e = outlier_process_energy(r, sigma, z).unwrap();
                prop_assert!((e - welsch_rho(r, sigma)).abs() <= 1e-12);
            }

            #[test]
            fn z_monotonicity(r in 0.01f64..3.0, dr in 0.001f64..1.0, sigma in 0.1f64..3.0, ds in 0.001f64..1.0) {
                prop_assert!(outlier_process_z(r + dr, sigma) < outlier_process_z(r, sigma));
                prop_assert!(outlier_process_z(r, sigma + ds) > outlier_process_z(r, sigma));
            }

            #[test]
            fn psi_is_nonnegative(z in 1e-12f64..=1.0) {
                prop_assert!(psi(z).unwrap() >= 0.0);
            }
        }
    }
}
