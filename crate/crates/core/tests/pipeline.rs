mod common;

use microreg::metrics::evaluate;
use microreg::{
    register, synth, CorrespondenceSet, Error, PipelineConfig, PointCloud, Profile, RunStatus, Scene, SyntheticSpec,
};
use nalgebra::Vector3;

fn problem(scene: Scene, seed: u64) -> microreg::SyntheticProblem {
    synth::generate(&SyntheticSpec {
        scene,
        seed,
        n_points: 8000,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn every_scene_registers_coarsely() {
    for scene in [Scene::ThreePlanes, Scene::LShape, Scene::TreesLike] {
        let prob = problem(scene, 3);
        let r = register(&prob.target, &prob.source, &prob.correspondences, &PipelineConfig::threedmatch()).unwrap();
        let e = evaluate(&r.coarse, &prob.truth, Profile::ThreeDMatch);
        assert!(e.success, "{scene:?}: {e:?}");
        let no_planes = r.status.contains(&RunStatus::NoPlanesDetected);
        assert_eq!(no_planes, r.counts.planes == 0, "{scene:?}");
        if no_planes {
            assert_eq!(r.fine, r.coarse);
        }
    }
}

#[test]
fn skip_fine_keeps_coarse_pose() {
    let prob = problem(Scene::ThreePlanes, 1);
    let config = PipelineConfig {
        skip_fine: true,
        ..PipelineConfig::threedmatch()
    };
    let r = register(&prob.target, &prob.source, &prob.correspondences, &config).unwrap();
    assert_eq!(r.fine, r.coarse);
    assert!(r.status.contains(&RunStatus::FineSkipped));
    assert!(r.fine_outcome.is_none());
    let report = r.to_report(None, false);
    assert_eq!(report.transform_fine, report.transform_coarse);
    assert_eq!(report.counts.c3, 0);
}

#[test]
fn thread_count_does_not_change_result() {
    let prob = problem(Scene::ThreePlanes, 2);
    let run = |threads| {
        let config = PipelineConfig {
            threads: Some(threads),
            ..PipelineConfig::threedmatch()
        };
        register(&prob.target, &prob.source, &prob.correspondences, &config).unwrap()
    };
    let (a, b) = (run(1), run(3));
    let ea = evaluate(&a.fine, &prob.truth, Profile::ThreeDMatch);
    let eb = evaluate(&b.fine, &prob.truth, Profile::ThreeDMatch);
    assert!((ea.re_deg - eb.re_deg).abs() < 1e-9);
    assert!((ea.te_m - eb.te_m).abs() < 1e-9);
    assert_eq!(a.counts, b.counts);
}

#[test]
fn counts_follow_the_stages() {
    let prob = problem(Scene::ThreePlanes, 4);
    let r = register(&prob.target, &prob.source, &prob.correspondences, &PipelineConfig::threedmatch()).unwrap();
    let c = r.counts;
    assert_eq!(c.c1, prob.correspondences.len());
    assert_eq!(c.k_opt, (0.7 * c.c1 as f64).round() as usize);
    assert!(c.c2 <= c.k_opt && c.c2 >= 3);
    assert!(c.c3 > 0 && c.c3 <= c.c1);
    let source: Vec<usize> = r.removal.consensus.source_indices();
    assert!(source.windows(2).all(|w| w[0] < w[1]));
    assert!(source.iter().all(|&i| i < c.c1));
}

#[test]
fn omitted_timings_are_zero() {
    let prob = problem(Scene::LShape, 5);
    let r = register(&prob.target, &prob.source, &prob.correspondences, &PipelineConfig::threedmatch()).unwrap();
    let report = r.to_report(None, true);
    assert_eq!(report.timings_ms, Default::default());
    assert!(r.timings.total >= r.timings.coarse);
}

#[test]
fn errors_name_their_stage() {
    let prob = problem(Scene::ThreePlanes, 6);
    let mut bad = prob.source.clone();
    bad.points[0].x = f64::NAN;
    let err = register(&prob.target, &bad, &prob.correspondences, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "input", .. }), "{err}");

    let two = CorrespondenceSet::from_pairs(prob.correspondences.pairs[..2].iter().map(|c| (c.p, c.q)));
    let err = register(&prob.target, &prob.source, &two, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "outlier_removal", .. }), "{err}");
    assert!(err.to_string().starts_with("outlier_removal stage failed"));
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let cloud = PointCloud::new(vec![Vector3::zeros()]);
    let corr = CorrespondenceSet::from_pairs([(Vector3::zeros(), Vector3::zeros())]);
    let config = PipelineConfig {
        resolution: -1.0,
        ..PipelineConfig::default()
    };
    assert!(matches!(
        register(&cloud, &cloud, &corr, &config),
        Err(Error::NonPositiveResolution(_))
    ));
}
