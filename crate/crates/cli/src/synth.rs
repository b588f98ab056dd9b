use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use microreg::io::read_transform;
use microreg::{synth, Scene, SyntheticSpec, TransformSpec};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving source.ply, target.ply, corr.txt, gt.txt and
    /// labels.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// `three_planes`, `l_shape` or `trees_like`.
    #[arg(long, default_value = "three_planes")]
    scene: Scene,
    /// Points per cloud.
    #[arg(long, default_value_t = 30_000)]
    n_points: usize,
    #[arg(long, default_value_t = 86)]
    inliers: usize,
    #[arg(long, default_value_t = 0.957)]
    outlier_rate: f64,
    /// Inlier match noise, meters.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Largest random rotation angle, radians.
    #[arg(long, default_value_t = std::f64::consts::PI * 0.9)]
    max_angle: f64,
    /// Largest random translation per axis, meters.
    #[arg(long, default_value_t = 2.0)]
    max_translation: f64,
    /// Use this 4x4 transform instead of a random one.
    #[arg(long, conflicts_with_all = ["max_angle", "max_translation"])]
    transform: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let transform = match &args.transform {
        Some(path) => TransformSpec::Explicit(read_transform(path)?),
        None => TransformSpec::Random {
            max_angle: args.max_angle,
            max_translation: args.max_translation,
        },
    };
    let spec = SyntheticSpec {
        scene: args.scene,
        n_points: args.n_points,
        inliers: args.inliers,
        outlier_rate: args.outlier_rate,
        noise_sigma: args.noise,
        transform,
        seed: args.seed,
    };
    let problem = synth::generate(&spec).context("invalid synthetic spec")?;
    problem.write_to_dir(&args.out_dir)?;
    log::info!(
        "wrote {} matches ({} inliers) to {}",
        problem.correspondences.len(),
        problem.labels.iter().filter(|&&l| l).count(),
        args.out_dir.display()
    );
    Ok(())
}
