//! Fixtures for the benchmarks in `benches/`.

use microreg::{synth, PipelineConfig, SyntheticProblem, SyntheticSpec};

/// The 95.7%-outlier three-plane scene with 2000 matches.
pub fn corner_problem(seed: u64) -> SyntheticProblem {
    synth::generate(&SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    })
    .expect("default spec is valid")
}

/// Indoor presets pinned to one thread so timings are comparable.
pub fn bench_config() -> PipelineConfig {
    PipelineConfig {
        threads: Some(1),
        ..PipelineConfig::threedmatch()
    }
}
