use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use microreg::io::{read_correspondences, read_ply, read_transform, write_report};
use microreg::{register, KOpt, PipelineConfig, Profile};

use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    /// Indoor RGB-D presets; success at 15 degrees and 30 cm.
    Threedmatch,
    /// Outdoor lidar presets; success at 5 degrees and 50 cm.
    Eth,
}

impl ProfileArg {
    pub fn profile(self) -> Profile {
        match self {
            ProfileArg::Threedmatch => Profile::ThreeDMatch,
            ProfileArg::Eth => Profile::Eth,
        }
    }

    fn config(self) -> PipelineConfig {
        match self {
            ProfileArg::Threedmatch => PipelineConfig::threedmatch(),
            ProfileArg::Eth => PipelineConfig::eth(),
        }
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Moving cloud (PLY).
    #[arg(long)]
    source: PathBuf,
    /// Reference cloud (PLY).
    #[arg(long)]
    target: PathBuf,
    /// Correspondences, one `px py pz qx qy qz` line per pair with `p` in
    /// the target and `q` in the source.
    #[arg(long)]
    corr: PathBuf,
    /// Ground-truth 4x4 transform; adds an evaluation to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter presets and success thresholds.
    #[arg(long, value_enum, default_value = "threedmatch")]
    profile: ProfileArg,

    /// Voxel resolution in meters.
    #[arg(long)]
    resolution: Option<f64>,
    /// Node-tier size: a count such as `800` or a fraction such as `0.7`.
    #[arg(long)]
    k_opt: Option<KOpt>,
    /// Most reliable nodes tried as edge anchors.
    #[arg(long)]
    anchors: Option<usize>,
    /// Micro-structure capture radius as a multiple of the resolution.
    #[arg(long)]
    capture: Option<f64>,
    /// Initial robust scale as a multiple of the mean match distance.
    #[arg(long)]
    gnc_sigma_scale: Option<f64>,
    /// Annealing rate of the robust scale.
    #[arg(long)]
    gnc_mu: Option<f64>,
    /// Floor of the robust scale, meters.
    #[arg(long)]
    gnc_sigma_min: Option<f64>,
    #[arg(long)]
    gnc_max_iters: Option<usize>,
    #[arg(long)]
    planarity_ratio: Option<f64>,
    /// Per-cloud RMS plane thickness limit, meters.
    #[arg(long)]
    rms_tol: Option<f64>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    fine_max_iters: Option<usize>,
    /// Anderson window; 0 disables acceleration.
    #[arg(long)]
    anderson_window: Option<usize>,
    /// Estimate node reliability from this many random partners.
    #[arg(long)]
    sampled_partners: Option<usize>,
    #[arg(long)]
    skip_fine: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Write zero timings so that reruns produce identical reports.
    #[arg(long)]
    omit_timings: bool,
}

impl RegisterArgs {
    fn config(&self) -> PipelineConfig {
        let mut c = self.profile.config();
        if let Some(v) = self.resolution {
            c.resolution = v;
        }
        if let Some(v) = self.k_opt {
            c.k_opt = v;
        }
        if let Some(v) = self.anchors {
            c.anchors = v;
        }
        if let Some(v) = self.capture {
            c.capture_multiple = v;
        }
        if let Some(v) = self.gnc_sigma_scale {
            c.gnc_sigma_scale = v;
        }
        if let Some(v) = self.gnc_max_iters {
            c.gnc_max_iterations = v;
        }
        if let Some(v) = self.anderson_window {
            c.anderson_window = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.gnc_mu = self.gnc_mu.or(c.gnc_mu);
        c.gnc_sigma_min = self.gnc_sigma_min.or(c.gnc_sigma_min);
        c.planarity_ratio = self.planarity_ratio.or(c.planarity_ratio);
        c.rms_tol = self.rms_tol.or(c.rms_tol);
        c.min_points = self.min_points.or(c.min_points);
        c.fine_max_iterations = self.fine_max_iters.or(c.fine_max_iterations);
        c.sampled_partners = self.sampled_partners.or(c.sampled_partners);
        c.threads = self.threads.or(c.threads);
        c.skip_fine |= self.skip_fine;
        c
    }
}

pub fn run(args: RegisterArgs) -> Result<Outcome> {
    let config = args.config();
    let source = read_ply(&args.source)?;
    let target = read_ply(&args.target)?;
    let corr = read_correspondences(&args.corr)?;
    let truth = args.gt.as_ref().map(read_transform).transpose()?;
    log::info!(
        "registering {} source and {} target points with {} matches",
        source.len(),
        target.len(),
        corr.len()
    );

    let result = register(&target, &source, &corr, &config).context("registration failed")?;
    let eval = truth.map(|t| result.evaluate(&t, args.profile.profile()));
    let report = result.to_report(eval.as_ref(), args.omit_timings);
    match &args.out {
        Some(path) => write_report(path, &report)?,
        None => print!("{}", report.to_json()),
    }
    for s in &result.status {
        if s.is_degraded() {
            log::warn!("degraded result: {}", s.as_str());
        }
    }
    Ok(if result.is_degraded() {
        Outcome::Degraded
    } else {
        Outcome::Success
    })
}
