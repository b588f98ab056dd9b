//! Fine registration: inlier refinement at the coarse pose, plane detection
//! around the surviving matches, and planar adjustment driven by
//! Levenberg-Marquardt with Anderson acceleration.

mod adjustment;
mod anderson;
mod planes;

pub use adjustment::{
    lambda_min_gradient, lm_step, lm_step_at, normal_equations, pa_cost, pa_cost_at, LmStep,
    NormalEquations, MIN_EIGEN_GAP,
};
pub use anderson::{AndersonState, AndersonStep, DEFAULT_WINDOW, MAX_HISTORY_CONDITION};
pub use planes::{
    canonical_sign, detect_planes, merge_duplicate_planes, plane_statistics, statistics_of,
    statistics_under, PlaneDetectParams, PlaneFeatureGroup, PlaneStatistics,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{exp_se3, log_se3, Point3, RigidTransform, Twist};
use crate::outlier_removal::{CorrespondenceSet, Stage};
use crate::voxel_graph::{MicroStructuresGraph, PointCloud};

/// Keeps the pairs of `corr` that lie closer than `2 * epsilon` under `t_c`.
pub fn refine_inliers(
    corr: &CorrespondenceSet,
    t_c: &RigidTransform,
    epsilon: f64,
) -> Result<CorrespondenceSet> {
    let limit = 2.0 * epsilon;
    let pairs: Vec<_> = corr
        .pairs
        .iter()
        .filter(|c| (c.p - t_c.transform_point(&c.q)).norm() < limit)
        .copied()
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInliers);
    }
    Ok(CorrespondenceSet {
        pairs,
        stage: Stage::C3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineParams {
    pub detect: PlaneDetectParams,
    /// Outer iteration cap.
    pub max_iterations: usize,
    /// Stop once `|cost_prev - cost| / cost_prev` falls below this.
    pub relative_tol: f64,
    /// Anderson window; `0` disables acceleration.
    pub anderson_window: usize,
    pub initial_damping: f64,
    /// Normal-angle tolerance (radians) for merging duplicate planes.
    pub merge_angle: f64,
    /// Offset tolerance along the normal (meters) for merging.
    pub merge_offset: f64,
}

impl FineParams {
    pub fn for_resolution(ell: f64) -> Self {
        Self {
            detect: PlaneDetectParams::for_resolution(ell),
            max_iterations: 50,
            relative_tol: 1e-9,
            anderson_window: DEFAULT_WINDOW,
            initial_damping: 1e-4,
            merge_angle: 2f64.to_radians(),
            merge_offset: ell / 2.0,
        }
    }

    pub fn validate(&self, ell: f64) -> Result<()> {
        self.detect.validate(ell)?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        if !(self.relative_tol >= 0.0) || !(self.initial_damping > 0.0) {
            return Err(Error::InvalidParameter(
                "relative_tol must be nonnegative and initial_damping positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineStatus {
    /// Relative cost change fell below the tolerance.
    Converged,
    /// Iteration cap reached.
    MaxIterations,
    /// No damped step lowered the cost any further.
    Stalled,
    /// No plane groups were found; the coarse pose is returned.
    NoPlanesDetected,
}

#[derive(Debug, Clone)]
pub struct FineOutcome {
    /// `exp(xi) * T_c`.
    pub transform: RigidTransform,
    /// Correction applied on top of the coarse pose.
    pub xi: Twist,
    pub planes: usize,
    /// Cost after every accepted iterate, starting with the cost at `T_c`.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose Anderson extrapolation was kept.
    pub anderson_accepted: usize,
    /// Some step saw a rank-deficient normal matrix.
    pub singular: bool,
    pub status: FineStatus,
}

impl FineOutcome {
    pub fn initial_cost(&self) -> f64 {
        self.cost_history.first().copied().unwrap_or(0.0)
    }

    pub fn final_cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(0.0)
    }
}

/// Detects plane groups around every `C3` pair.
///
/// Each pair contributes its `P` micro-structure and its `Q` micro-structure,
/// both grown by the capture radius. Groups from all pairs are merged when
/// they describe the same plane. The moving points of every group are
/// expressed in `P`'s frame through `t_c`.
pub fn gather_plane_groups(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    c3: &CorrespondenceSet,
    t_c: &RigidTransform,
    graphs: (&MicroStructuresGraph, &MicroStructuresGraph),
    params: &FineParams,
) -> Vec<PlaneFeatureGroup> {
    let (gp, gq) = graphs;
    let radius = params.detect.capture_radius;
    let per_pair: Vec<Vec<PlaneFeatureGroup>> = c3
        .pairs
        .par_iter()
        .map(|c| {
            let ref_ids = gp.expanded_members(cloud_p, c.source_index, radius);
            let mov_ids = gq.expanded_members(cloud_q, c.source_index, radius);
            let reference: Vec<Point3> = ref_ids.iter().map(|&i| cloud_p.points[i]).collect();
            let moving: Vec<Point3> = mov_ids.iter().map(|&i| cloud_q.points[i]).collect();
            let mut groups = detect_planes(&reference, &moving, t_c, &params.detect);
            for g in &mut groups {
                g.ref_ids.iter_mut().for_each(|i| *i = ref_ids[*i]);
                g.mov_ids.iter_mut().for_each(|i| *i = mov_ids[*i]);
            }
            groups
        })
        .collect();
    merge_duplicate_planes(
        per_pair.into_iter().flatten().collect(),
        params.merge_angle,
        params.merge_offset,
    )
}

/// Minimizes the plane cost over a left correction of the moving points.
///
/// Each iteration takes the first damped step that lowers the cost (damping
/// grows tenfold on rejection, shrinks tenfold on acceptance). That step is
/// the fixed-point map fed to Anderson acceleration, whose extrapolation is
/// kept only when it is cheaper still.
pub fn optimize_planes(groups: &[PlaneFeatureGroup], params: &FineParams) -> FineOutcome {
    let mut xi = Twist::zero();
    let mut cost = pa_cost(groups, &xi);
    let mut out = FineOutcome {
        transform: RigidTransform::identity(),
        xi,
        planes: groups.len(),
        cost_history: vec![cost],
        iterations: 0,
        anderson_accepted: 0,
        singular: false,
        status: FineStatus::MaxIterations,
    };
    if groups.is_empty() {
        out.status = FineStatus::NoPlanesDetected;
        return out;
    }
    let mut anderson = AndersonState::new(params.anderson_window);
    let mut damping = params.initial_damping;

    for _ in 0..params.max_iterations {
        if cost == 0.0 {
            out.status = FineStatus::Converged;
            break;
        }
        let pose = exp_se3(&xi);
        let mut accepted = None;
        while damping <= 1e10 {
            let step = lm_step_at(groups, &pose, damping);
            out.singular |= step.singular;
            let candidate = exp_se3(&step.dxi) * pose;
            let c = pa_cost_at(groups, &candidate);
            if c < cost {
                damping = (damping / 10.0).max(1e-15);
                accepted = log_se3(&candidate).ok().map(|g| (g, c));
                break;
            }
            damping *= 10.0;
        }
        let Some((g_xi, g_cost)) = accepted else {
            out.status = FineStatus::Stalled;
            break;
        };
        out.iterations += 1;

        let (mut next, mut next_cost) = (g_xi, g_cost);
        let aa = anderson.accelerate(&xi, &g_xi);
        if aa.accelerated {
            let c = pa_cost(groups, &aa.xi);
            if c < g_cost {
                next = aa.xi;
                next_cost = c;
                out.anderson_accepted += 1;
            }
        }
        let change = (cost - next_cost) / cost;
        xi = next;
        cost = next_cost;
        out.cost_history.push(cost);
        if change < params.relative_tol {
            out.status = FineStatus::Converged;
            break;
        }
    }
    out.xi = xi;
    out.transform = exp_se3(&xi);
    out
}

/// Refines the coarse pose `t_c` by planar adjustment.
///
/// `graphs` are the micro-structure graphs over `C1`, indexed by source
/// index. Without any plane group the result keeps `t_c` and reports
/// [`FineStatus::NoPlanesDetected`].
pub fn fine_register(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    c3: &CorrespondenceSet,
    t_c: &RigidTransform,
    graphs: (&MicroStructuresGraph, &MicroStructuresGraph),
    params: &FineParams,
) -> Result<FineOutcome> {
    params.validate(graphs.0.resolution)?;
    let groups = gather_plane_groups(cloud_p, cloud_q, c3, t_c, graphs, params);
    log::debug!("fine stage: {} plane groups from {} pairs", groups.len(), c3.len());
    let mut out = optimize_planes(&groups, params);
    out.transform = (out.transform * *t_c).orthonormalized();
    Ok(out)
}
