//! End-to-end registration: graphs, outlier removal, robust coarse pose,
//! planar fine adjustment.

use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fine_registration::{fine_register, refine_inliers, FineOutcome, FineParams, FineStatus};
use crate::geometry::RigidTransform;
use crate::gnc_welsch::{estimate, GncOutcome, GncParams};
use crate::io::{Counts, EvalRecord, ResultReport, Timings};
use crate::metrics::{evaluate, EvalResult, Profile};
use crate::outlier_removal::{remove_outliers, CorrespondenceSet, RemovalOutcome, RemovalParams};
use crate::voxel_graph::{build_graphs, PointCloud};

/// Node-tier size: a count, or a fraction of `|C1|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KOpt {
    Absolute(usize),
    Fraction(f64),
}

impl KOpt {
    /// Number of nodes for a `C1` of size `k1`, at least 3.
    pub fn resolve(&self, k1: usize) -> usize {
        let k = match *self {
            KOpt::Absolute(k) => k,
            KOpt::Fraction(f) => (f * k1 as f64).round() as usize,
        };
        k.max(3)
    }
}

impl FromStr for KOpt {
    type Err = Error;

    /// `"800"` is a count, `"0.7"` a fraction.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("invalid k_opt {s:?}"));
        if s.contains('.') {
            let f: f64 = s.parse().map_err(|_| bad())?;
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad());
            }
            Ok(KOpt::Fraction(f))
        } else {
            let k: usize = s.parse().map_err(|_| bad())?;
            if k < 3 {
                return Err(bad());
            }
            Ok(KOpt::Absolute(k))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Voxel resolution `l`, meters.
    pub resolution: f64,
    pub k_opt: KOpt,
    /// Top nodes tried as edge anchors.
    pub anchors: usize,
    /// Capture radius as a multiple of `l`.
    pub capture_multiple: f64,
    /// Initial `sigma` as a multiple of the mean correspondence distance.
    pub gnc_sigma_scale: f64,
    pub gnc_mu: Option<f64>,
    /// Defaults to `0.5 l`.
    pub gnc_sigma_min: Option<f64>,
    pub gnc_max_iterations: usize,
    pub planarity_ratio: Option<f64>,
    pub rms_tol: Option<f64>,
    pub min_points: Option<usize>,
    pub fine_max_iterations: Option<usize>,
    /// `0` turns Anderson acceleration off.
    pub anderson_window: usize,
    pub skip_fine: bool,
    /// Node reliabilities from this many random partners instead of all.
    pub sampled_partners: Option<usize>,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    /// `l = 0.05`, `K_opt = 0.7 |C1|`, `L = 2 l`.
    fn default() -> Self {
        Self {
            resolution: 0.05,
            k_opt: KOpt::Fraction(0.7),
            anchors: crate::outlier_removal::DEFAULT_ANCHORS,
            capture_multiple: 2.0,
            gnc_sigma_scale: 10.0,
            gnc_mu: None,
            gnc_sigma_min: None,
            gnc_max_iterations: 100,
            planarity_ratio: None,
            rms_tol: None,
            min_points: None,
            fine_max_iterations: None,
            anderson_window: crate::fine_registration::DEFAULT_WINDOW,
            skip_fine: false,
            sampled_partners: None,
            seed: 0,
            threads: None,
        }
    }
}

impl PipelineConfig {
    /// Indoor RGB-D settings: `K_opt = 0.7 |C1|`, `l = 0.05`, `L = 5 l`.
    pub fn threedmatch() -> Self {
        Self {
            capture_multiple: 5.0,
            ..Self::default()
        }
    }

    /// Outdoor lidar settings: `K_opt = 800`, `l = 0.1`, `L = 2 l`.
    pub fn eth() -> Self {
        Self {
            resolution: 0.1,
            k_opt: KOpt::Absolute(800),
            capture_multiple: 2.0,
            ..Self::default()
        }
    }

    pub fn epsilon(&self) -> f64 {
        2.0 * self.resolution
    }

    pub fn removal_params(&self, k1: usize) -> RemovalParams {
        let mut p = RemovalParams::new(self.resolution, self.k_opt.resolve(k1));
        p.sampled_partners = self.sampled_partners;
        p.seed = self.seed;
        p.anchors = self.anchors;
        p
    }

    pub fn gnc_params(&self) -> GncParams {
        let mut p = GncParams::for_resolution(self.resolution);
        p.sigma_scale = self.gnc_sigma_scale;
        p.mu = self.gnc_mu;
        if let Some(s) = self.gnc_sigma_min {
            p.sigma_min = s;
        }
        p.max_iterations = self.gnc_max_iterations;
        p
    }

    pub fn fine_params(&self) -> FineParams {
        let mut p = FineParams::for_resolution(self.resolution);
        p.detect.capture_radius = self.capture_multiple * self.resolution;
        if let Some(v) = self.planarity_ratio {
            p.detect.planarity_ratio = v;
        }
        if let Some(v) = self.rms_tol {
            p.detect.rms_tol = v;
        }
        if let Some(v) = self.min_points {
            p.detect.min_points = v;
        }
        if let Some(v) = self.fine_max_iterations {
            p.max_iterations = v;
        }
        p.anderson_window = self.anderson_window;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::NonPositiveResolution(self.resolution));
        }
        if !(self.capture_multiple >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "capture multiple must be at least 1, got {}",
                self.capture_multiple
            )));
        }
        if self.anchors == 0 {
            return Err(Error::InvalidParameter("anchors must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter("threads must be positive".into()));
        }
        self.fine_params().validate(self.resolution)
    }
}

/// Noteworthy conditions of a run that still produced a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunStatus {
    /// The robust estimator used its whole iteration budget.
    NonConvergence,
    /// No correspondence was within `2 epsilon` of the coarse pose.
    EmptyInliers,
    /// The fine stage found no planes and kept the coarse pose.
    NoPlanesDetected,
    /// Some planar-adjustment step had fewer than six observable
    /// directions.
    SingularNormalMatrix,
    /// The fine stage was switched off.
    FineSkipped,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::NonConvergence => "NonConvergence",
            RunStatus::EmptyInliers => "EmptyInliers",
            RunStatus::NoPlanesDetected => "NoPlanesDetected",
            RunStatus::SingularNormalMatrix => "SingularNormalMatrix",
            RunStatus::FineSkipped => "FineSkipped",
        }
    }

    /// Degraded results are valid poses of reduced quality.
    pub fn is_degraded(&self) -> bool {
        matches!(
            self,
            RunStatus::NonConvergence | RunStatus::EmptyInliers | RunStatus::NoPlanesDetected
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub coarse: RigidTransform,
    pub fine: RigidTransform,
    pub removal: RemovalOutcome,
    pub gnc: GncOutcome,
    pub c3: Option<CorrespondenceSet>,
    pub fine_outcome: Option<FineOutcome>,
    pub counts: Counts,
    pub timings: Timings,
    pub status: Vec<RunStatus>,
}

impl PipelineResult {
    pub fn is_degraded(&self) -> bool {
        self.status.iter().any(RunStatus::is_degraded)
    }

    /// Errors of the fine pose against `truth`.
    pub fn evaluate(&self, truth: &RigidTransform, profile: Profile) -> EvalResult {
        evaluate(&self.fine, truth, profile)
    }

    /// Report with optional evaluation. `omit_timings` writes zero timings
    /// so that reruns produce identical bytes.
    pub fn to_report(&self, eval: Option<&EvalResult>, omit_timings: bool) -> ResultReport {
        ResultReport {
            transform_coarse: self.coarse.to_row_major(),
            transform_fine: self.fine.to_row_major(),
            timings_ms: if omit_timings { Timings::default() } else { self.timings },
            counts: self.counts,
            eval: eval.map(EvalRecord::from),
            status: self.status.iter().map(|s| s.as_str().to_string()).collect(),
        }
    }
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Registers `cloud_q` (moving) onto `cloud_p` (reference) given the
/// putative matches `corr` (`p` in `P`, `q` in `Q`).
pub fn register(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    corr: &CorrespondenceSet,
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(|| run(cloud_p, cloud_q, corr, config)),
        None => run(cloud_p, cloud_q, corr, config),
    }
}

fn run(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    corr: &CorrespondenceSet,
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    let start = Instant::now();
    cloud_p.validate().map_err(|e| e.in_stage("input"))?;
    cloud_q.validate().map_err(|e| e.in_stage("input"))?;
    corr.validate().map_err(|e| e.in_stage("input"))?;
    // C1 positions double as graph node ids.
    let corr = CorrespondenceSet::initial(
        corr.pairs
            .iter()
            .enumerate()
            .map(|(i, c)| crate::outlier_removal::Correspondence::new(c.p, c.q, i))
            .collect(),
    );

    let (gp, gq) = build_graphs(cloud_p, cloud_q, &corr, config.resolution)
        .map_err(|e| e.in_stage("voxel_graph"))?;
    let removal = remove_outliers(&corr, &config.removal_params(corr.len()))
        .map_err(|e| e.in_stage("outlier_removal"))?;
    let gnc = estimate(&removal.consensus, &config.gnc_params()).map_err(|e| e.in_stage("gnc_welsch"))?;
    let coarse = gnc.transform;
    let coarse_ms = millis(start);

    let mut status = Vec::new();
    if !gnc.converged {
        status.push(RunStatus::NonConvergence);
    }
    let mut counts = Counts {
        c1: corr.len(),
        k_opt: removal.k_opt,
        c2: removal.consensus.len(),
        c3: 0,
        planes: 0,
    };

    let fine_start = Instant::now();
    let mut fine = coarse;
    let mut c3 = None;
    let mut fine_outcome = None;
    if config.skip_fine {
        status.push(RunStatus::FineSkipped);
    } else {
        match refine_inliers(&corr, &coarse, config.epsilon()) {
            Err(Error::EmptyInliers) => status.push(RunStatus::EmptyInliers),
            Err(e) => return Err(e.in_stage("fine_registration")),
            Ok(inliers) => {
                counts.c3 = inliers.len();
                let out = fine_register(cloud_p, cloud_q, &inliers, &coarse, (&gp, &gq), &config.fine_params())
                    .map_err(|e| e.in_stage("fine_registration"))?;
                counts.planes = out.planes;
                if out.status == FineStatus::NoPlanesDetected {
                    status.push(RunStatus::NoPlanesDetected);
                }
                if out.singular {
                    status.push(RunStatus::SingularNormalMatrix);
                }
                fine = out.transform;
                c3 = Some(inliers);
                fine_outcome = Some(out);
            }
        }
    }
    let fine_ms = millis(fine_start);
    status.sort();

    Ok(PipelineResult {
        coarse,
        fine,
        removal,
        gnc,
        c3,
        fine_outcome,
        counts,
        timings: Timings {
            coarse: coarse_ms,
            fine: fine_ms,
            total: millis(start),
        },
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_opt_parsing() {
        assert_eq!("800".parse::<KOpt>().unwrap(), KOpt::Absolute(800));
        assert_eq!("0.7".parse::<KOpt>().unwrap(), KOpt::Fraction(0.7));
        assert_eq!("1.0".parse::<KOpt>().unwrap(), KOpt::Fraction(1.0));
        assert!("1.5".parse::<KOpt>().is_err());
        assert!("2".parse::<KOpt>().is_err());
        assert!("abc".parse::<KOpt>().is_err());
        assert_eq!(KOpt::Fraction(0.7).resolve(2000), 1400);
        assert_eq!(KOpt::Fraction(0.7).resolve(2), 3);
    }

    #[test]
    fn presets() {
        let t = PipelineConfig::threedmatch();
        assert_eq!((t.resolution, t.k_opt, t.capture_multiple), (0.05, KOpt::Fraction(0.7), 5.0));
        let e = PipelineConfig::eth();
        assert_eq!((e.resolution, e.k_opt, e.capture_multiple), (0.1, KOpt::Absolute(800), 2.0));
        assert!((e.fine_params().detect.capture_radius - 0.2).abs() < 1e-15);
        assert_eq!(PipelineConfig::default().gnc_params().sigma_min, 0.025);
    }

    #[test]
    fn invalid_config() {
        let c = PipelineConfig {
            resolution: 0.0,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            threads: Some(0),
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn degraded_flags() {
        assert!(RunStatus::NoPlanesDetected.is_degraded());
        assert!(RunStatus::NonConvergence.is_degraded());
        assert!(!RunStatus::FineSkipped.is_degraded());
        assert!(!RunStatus::SingularNormalMatrix.is_degraded());
    }
}
