//! Rigid-body algebra: SE(3) poses, se(3) twists and their exponential and
//! logarithm maps.
//!
//! Twists are ordered `(rho, phi)`: translational part first, rotational part
//! second. Every Jacobian in the crate follows that column order.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// The logarithm refuses rotations this close to a half turn.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

pub type Point3 = Vector3<f64>;

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// An element of se(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    /// Translational part (meters).
    pub rho: Vector3<f64>,
    /// Rotational part (radians, axis times angle).
    pub phi: Vector3<f64>,
}

impl Default for Twist {
    fn default() -> Self {
        Self::zero()
    }
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self {
            rho: Vector3::zeros(),
            phi: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: v.fixed_rows::<3>(0).into_owned(),
            phi: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rho: self.rho * s,
            phi: self.phi * s,
        }
    }

    /// The 4x4 matrix `xi^` whose exponential is [`exp_se3`].
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.rho);
        m
    }
}

/// A point in homogeneous coordinates. The weight is always one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint {
    pub xyz: Point3,
}

impl HomogeneousPoint {
    pub fn new(xyz: Point3) -> Self {
        Self { xyz }
    }

    pub fn w(&self) -> f64 {
        1.0
    }

    pub fn to_vector4(&self) -> nalgebra::Vector4<f64> {
        self.xyz.push(1.0)
    }
}

impl From<Point3> for HomogeneousPoint {
    fn from(xyz: Point3) -> Self {
        Self { xyz }
    }
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform without validating the rotation block.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Accepts a homogeneous matrix whose rotation block is orthonormal with
    /// unit determinant within `tol`, then projects it onto SO(3) unless it
    /// is already rigid to round-off.
    pub fn from_homogeneous(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonRigidMatrix("non-finite entry".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        let expected = [0.0, 0.0, 0.0, 1.0];
        if bottom.iter().zip(expected).any(|(a, b)| (a - b).abs() > tol) {
            return Err(Error::NonRigidMatrix(format!(
                "bottom row {bottom:?} is not [0, 0, 0, 1]"
            )));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > tol {
            return Err(Error::NonRigidMatrix(format!(
                "rotation block deviates from orthonormal by {ortho:e}"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::NonRigidMatrix(format!("rotation determinant is {det}")));
        }
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        // Blocks that are rigid to round-off keep their exact bits.
        let r = if ortho.max((det - 1.0).abs()) <= 1e-14 { r } else { project_to_so3(&r) };
        Ok(Self::new(r, t))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 16 entries of the homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16], tol: f64) -> Result<Self> {
        Self::from_homogeneous(&Matrix4::from_row_slice(v), tol)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let v = vee(&self.rotation).norm();
        let c = 0.5 * (self.rotation.trace() - 1.0);
        v.atan2(c)
    }

    /// Max element-wise deviation of `R^T R` from identity and of `det R`
    /// from one.
    pub fn rigidity_error(&self) -> f64 {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        ortho.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Snaps the rotation block back onto SO(3).
    pub fn orthonormalized(&self) -> Self {
        Self {
            rotation: project_to_so3(&self.rotation),
            translation: self.translation,
        }
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        *self * *rhs
    }
}

/// Nearest rotation in the Frobenius sense.
pub fn project_to_so3(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return *r,
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rodrigues rotation and the left Jacobian of SO(3) for `phi`.
fn so3_exp_and_left_jacobian(phi: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let id = Matrix3::identity();
    if theta < SMALL_ANGLE {
        return (id + k + k2 * 0.5, id + k * 0.5 + k2 / 6.0);
    }
    let (s, c) = theta.sin_cos();
    let t2 = theta * theta;
    let r = id + k * (s / theta) + k2 * ((1.0 - c) / t2);
    let jl = id + k * ((1.0 - c) / t2) + k2 * ((theta - s) / (t2 * theta));
    (r, jl)
}

pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_exp_and_left_jacobian(phi).0
}

/// Matrix exponential of the twist hat-matrix.
pub fn exp_se3(xi: &Twist) -> RigidTransform {
    let (r, jl) = so3_exp_and_left_jacobian(&xi.phi);
    RigidTransform::new(r, jl * xi.rho)
}

/// Inverse of [`exp_se3`] for rotations below `pi - 1e-6`.
pub fn log_se3(t: &RigidTransform) -> Result<Twist> {
    let v = vee(&t.rotation);
    let sin_theta = v.norm();
    let cos_theta = 0.5 * (t.rotation.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(Error::AngleNearPi { angle: theta });
    }
    let id = Matrix3::identity();
    let (phi, jl_inv) = if theta < SMALL_ANGLE {
        let phi = v * (1.0 + theta * theta / 6.0);
        let k = skew(&phi);
        (phi, id - k * 0.5 + k * k / 12.0)
    } else {
        let phi = v * (theta / sin_theta);
        let k = skew(&phi);
        let t2 = theta * theta;
        let coeff = 1.0 / t2 - (1.0 + cos_theta) / (2.0 * theta * sin_theta);
        (phi, id - k * 0.5 + k * k * coeff)
    };
    Ok(Twist::new(jl_inv * t.translation, phi))
}

/// `exp(dxi) * t`.
pub fn apply_left_perturbation(t: &RigidTransform, dxi: &Twist) -> RigidTransform {
    exp_se3(dxi) * *t
}

/// Rodrigues rotation by `theta` about a unit `axis`.
pub fn rotation_about_axis(theta: f64, axis: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = axis.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitAxis { norm });
    }
    let k = skew(axis);
    let (s, c) = theta.sin_cos();
    Ok(Matrix3::identity() + k * s + k * k * (1.0 - c))
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-12 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // Half turn about any axis orthogonal to `from`.
        let helper = if from.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = from.cross(&helper).normalize();
        return 2.0 * perp * perp.transpose() - Matrix3::identity();
    }
    exp_so3(&(axis / s * s.atan2(c)))
}
