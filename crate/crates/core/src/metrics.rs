//! Registration error metrics and success classification.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error(r_hat: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let c = ((r_gt * r_hat.transpose()).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Euclidean distance between two translations, in meters.
pub fn translation_error(t_hat: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_hat - t_gt).norm()
}

/// Success thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// 15 degrees, 30 cm.
    ThreeDMatch,
    /// 5 degrees, 50 cm.
    Eth,
    Custom { re_max_deg: f64, te_max_m: f64 },
}

impl Profile {
    /// `(re_max` degrees, `te_max` meters`)`.
    pub fn thresholds(&self) -> (f64, f64) {
        match *self {
            Profile::ThreeDMatch => (15.0, 0.30),
            Profile::Eth => (5.0, 0.50),
            Profile::Custom {
                re_max_deg,
                te_max_m,
            } => (re_max_deg, te_max_m),
        }
    }
}

/// Both errors within the profile's thresholds, boundaries included.
pub fn classify_success(re_deg: f64, te_m: f64, profile: Profile) -> bool {
    let (re_max, te_max) = profile.thresholds();
    re_deg <= re_max && te_m <= te_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub re_deg: f64,
    pub te_m: f64,
    pub success: bool,
    pub thresholds: (f64, f64),
}

impl EvalResult {
    pub fn te_cm(&self) -> f64 {
        self.te_m * 100.0
    }
}

pub fn evaluate(estimate: &RigidTransform, truth: &RigidTransform, profile: Profile) -> EvalResult {
    let re_deg = rotation_error(&estimate.rotation, &truth.rotation);
    let te_m = translation_error(&estimate.translation, &truth.translation);
    EvalResult {
        re_deg,
        te_m,
        success: classify_success(re_deg, te_m, profile),
        thresholds: profile.thresholds(),
    }
}

/// Fraction of successful records; `None` for an empty batch.
pub fn success_rate(results: &[EvalResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    let ok = results.iter().filter(|r| r.success).count();
    Some(ok as f64 / results.len() as f64)
}
