//! Independent oracles shared by the integration tests. Nothing here calls
//! the algorithms under test.

#![allow(dead_code)]

use microreg::{Correspondence, CorrespondenceSet, Point3, RigidTransform};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
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

/// Rotation by `angle` about a random axis plus a translation of length
/// up to `max_t`, built with nalgebra's own axis-angle constructor.
pub fn random_pose(rng: &mut impl Rng, max_angle: f64, max_t: f64) -> RigidTransform {
    let axis = Unit::new_normalize(random_unit(rng));
    let angle = rng.random_range(0.0..max_angle);
    let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
    let t = random_unit(rng) * rng.random_range(0.0..max_t);
    RigidTransform::new(r, t)
}

pub fn random_point(rng: &mut impl Rng, half: f64) -> Point3 {
    Vector3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

/// `n_in` noisy inliers of `t` followed by `n_out` unrelated pairs.
pub fn mixed_set(
    rng: &mut impl Rng,
    t: &RigidTransform,
    n_in: usize,
    n_out: usize,
    half: f64,
    sigma: f64,
) -> CorrespondenceSet {
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut pairs = Vec::with_capacity(n_in + n_out);
    for _ in 0..n_in {
        let q = random_point(rng, half);
        let n = if sigma > 0.0 {
            Vector3::from_fn(|_, _| noise.sample(rng))
        } else {
            Vector3::zeros()
        };
        pairs.push((t.rotation * q + t.translation + n, q));
    }
    for _ in 0..n_out {
        let q = random_point(rng, half);
        let p = t.rotation * random_point(rng, half) + t.translation;
        pairs.push((p, q));
    }
    CorrespondenceSet::from_pairs(pairs)
}

/// Weighted least-squares rigid fit `p ~ R q + t` by SVD of the weighted
/// cross-covariance.
pub fn weighted_kabsch(pairs: &[Correspondence], w: &[f64]) -> RigidTransform {
    let total: f64 = w.iter().sum();
    let mut cp = Vector3::zeros();
    let mut cq = Vector3::zeros();
    for (c, &wi) in pairs.iter().zip(w) {
        cp += c.p * wi;
        cq += c.q * wi;
    }
    cp /= total;
    cq /= total;
    let mut h = Matrix3::zeros();
    for (c, &wi) in pairs.iter().zip(w) {
        h += (c.q - cq) * (c.p - cp).transpose() * wi;
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform::new(r, cp - r * cq)
}

pub fn kabsch(pairs: &[Correspondence]) -> RigidTransform {
    weighted_kabsch(pairs, &vec![1.0; pairs.len()])
}

/// Iteratively reweighted least squares from the SVD solution.
pub fn irls(pairs: &[Correspondence], weight: impl Fn(f64) -> f64, iterations: usize) -> RigidTransform {
    let mut t = kabsch(pairs);
    for _ in 0..iterations {
        let w: Vec<f64> = pairs
            .iter()
            .map(|c| weight((c.p - t.rotation * c.q - t.translation).norm()))
            .collect();
        if w.iter().sum::<f64>() <= 0.0 {
            break;
        }
        t = weighted_kabsch(pairs, &w);
    }
    t
}

pub fn geman_mcclure_weight(c: f64) -> impl Fn(f64) -> f64 {
    move |r| {
        let d = c * c + r * r;
        c.powi(4) / (d * d)
    }
}

pub fn tukey_weight(c: f64) -> impl Fn(f64) -> f64 {
    move |r| {
        if r < c {
            let u = 1.0 - (r / c).powi(2);
            u * u
        } else {
            0.0
        }
    }
}

/// Row sums of the thresholded adjacency, written as a plain double loop.
pub fn brute_force_reliabilities(pairs: &[Correspondence], ell: f64, eps: f64) -> Vec<f64> {
    let n = pairs.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let lp = (pairs[i].p - pairs[j].p).norm();
            let lq = (pairs[i].q - pairs[j].q).norm();
            let dd = (lp - lq).abs();
            if dd <= eps {
                out[i] += (-(dd * dd) / (0.6 * ell)).exp();
            }
        }
    }
    out
}

/// Rotation taking unit `a` onto unit `b` via Rodrigues' formula.
fn align(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let c = a.dot(b);
    if c < -1.0 + 1e-12 {
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let axis = Unit::new_normalize(a.cross(&helper));
        return Rotation3::from_axis_angle(&axis, std::f64::consts::PI).into_inner();
    }
    let v = a.cross(b);
    let k = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    Matrix3::identity() + k + k * k / (1.0 + c)
}

/// Largest number of candidates within `eps` of the rolled edge frame over
/// a uniform grid of roll angles with the given spacing.
pub fn theta_grid_consensus(
    i: &Correspondence,
    j: &Correspondence,
    candidates: &[Correspondence],
    eps: f64,
    step: f64,
) -> usize {
    let ep = (j.p - i.p).normalize();
    let eq = (j.q - i.q).normalize();
    let a = align(&eq, &ep);
    let axis = Unit::new_normalize(ep);
    let steps = (std::f64::consts::TAU / step).ceil() as usize;
    let local: Vec<(Vector3<f64>, Vector3<f64>)> = candidates
        .iter()
        .map(|k| (k.p - i.p, a * (k.q - i.q)))
        .collect();
    (0..steps)
        .map(|s| {
            let r = Rotation3::from_axis_angle(&axis, s as f64 * step);
            local.iter().filter(|(xp, xq)| (xp - r * xq).norm() <= eps).count()
        })
        .max()
        .unwrap_or(0)
}

/// Sign of `f(z1) - f(z2)` for `f(z) = a z + z ln z - z + 1`, evaluated
/// without cancelling the constant parts.
fn summand_difference(a: f64, z1: f64, z2: f64) -> f64 {
    (z1 - z2) * (a - 1.0 + z2.ln()) - z1 * ((z2 - z1) / z1).ln_1p()
}

/// Golden-section minimizer of the outlier-process summand over `(0, 1]`.
pub fn golden_section_z(r: f64, sigma: f64) -> f64 {
    let a = r * r / (2.0 * sigma * sigma);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    while hi - lo > 1e-13 {
        if summand_difference(a, x1, x2) <= 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - g * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + g * (hi - lo);
        }
        if x1 <= 0.0 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `lambda_min` of the merged covariance of `reference` and `moving`,
/// via nalgebra's symmetric eigen solver.
pub fn smallest_eigenvalue(reference: &[Point3], moving: &[Point3]) -> f64 {
    let n = (reference.len() + moving.len()) as f64;
    let mean = reference.iter().chain(moving).sum::<Vector3<f64>>() / n;
    let mut c = Matrix3::zeros();
    for p in reference.iter().chain(moving) {
        let d = p - mean;
        c += d * d.transpose();
    }
    (c / n).symmetric_eigen().eigenvalues.min()
}
