//! Coarse-to-fine rigid registration of two point clouds from putative
//! correspondences.
//!
//! The coarse stage builds a micro-structure graph over each cloud, prunes
//! the correspondences with a node tier (pairwise length consistency) and an
//! edge tier (loose and tight geometric constraints plus a rotation-angle
//! consensus), and estimates the pose with a graduated non-convexity Welsch
//! estimator. The fine stage detects planes shared by both clouds around the
//! surviving matches and minimizes their thickness with Levenberg-Marquardt
//! and Anderson acceleration.
//!
//! Conventions: `P` is the reference (target) cloud and `Q` the moving
//! (source) cloud; every pose maps `Q` coordinates into `P`. Twists are
//! ordered `(rho, phi)`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fine_registration;
pub mod geometry;
pub mod gnc_welsch;
pub mod io;
pub mod metrics;
pub mod outlier_removal;
pub mod pipeline;
pub mod synth;
pub mod voxel_graph;

pub use error::{Error, Location, ParseErrorKind, Result};
pub use fine_registration::{FineOutcome, FineParams, FineStatus, PlaneDetectParams, PlaneFeatureGroup};
pub use geometry::{exp_se3, log_se3, HomogeneousPoint, Point3, RigidTransform, Twist};
pub use gnc_welsch::{GncOutcome, GncParams};
pub use io::ResultReport;
pub use metrics::{EvalResult, Profile};
pub use outlier_removal::{Correspondence, CorrespondenceSet, RemovalOutcome, RemovalParams, Stage};
pub use pipeline::{register, KOpt, PipelineConfig, PipelineResult, RunStatus};
pub use synth::{Scene, SyntheticProblem, SyntheticSpec, TransformSpec};
pub use voxel_graph::{MicroStructuresGraph, PointCloud};
