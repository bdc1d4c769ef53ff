//! Small training runs checked against measured targets.

use unrig::mesh::{sample_queries, Vec3, DEFAULT_QUERY_SIGMA};
use unrig::metrics::{part_accuracy, pmd};
use unrig::pose::{train_pose_module, transfer_pose, PoseConfig};
use unrig::seed;
use unrig::shape::{
    fit_shape_code, loss_occupancy, occupancy_accuracy, random_code, segment_mesh, train_shape_module, FitConfig,
    ShapeConfig, ShapeTrainItem,
};
use unrig::synth::character::{HEAD, LEFT_THIGH, LEFT_UPPER_ARM, RIGHT_THIGH, RIGHT_UPPER_ARM};
use unrig::synth::dataset::CharacterKind;
use unrig::synth::{build_character, gen_dataset, stylize, BodyParams, DatasetConfig, StyleParams};

#[test]
fn shape_module_learns_one_character() {
    let mut rng = seed::rng(51);
    let base = build_character(&BodyParams::sample(&mut rng)).unwrap();
    let held_out = stylize(&base, &StyleParams::sample(&mut rng)).unwrap().normalized().unwrap();
    let items = vec![ShapeTrainItem {
        id: "base".into(),
        mesh: base.mesh.clone(),
        vertex_labels: Some(base.part_labels.clone()),
    }];
    let trained = train_shape_module(
        &items,
        &ShapeConfig {
            code_dim: 32,
            steps: 4000,
            learning_rate: 1e-3,
            code_learning_rate: 1e-3,
            surface_per_character: 256,
            seed: 52,
            ..Default::default()
        },
    )
    .unwrap();
    let dec = &trained.decoder;
    let code = &trained.codes[0];

    let fresh = sample_queries(&base.mesh, 4000, DEFAULT_QUERY_SIGMA, 53).unwrap();
    let acc = occupancy_accuracy(dec, code, &fresh).unwrap();
    assert!(acc >= 0.95, "occupancy accuracy {acc}");

    let labels = segment_mesh(&base.mesh, code, dec).unwrap();
    let seg = part_accuracy(&labels, &base.part_labels).unwrap();
    assert!(seg >= 0.9, "part accuracy {seg}");

    // refitting from the trained code keeps L_O where training left it
    let pool = sample_queries(&base.mesh, 10_000, DEFAULT_QUERY_SIGMA, 54).unwrap();
    let points: Vec<Vec3> = pool.iter().map(|q| q.position).collect();
    let truth: Vec<bool> = pool.iter().map(|q| q.occupied).collect();
    let lo = |c: &[f64]| loss_occupancy(&dec.occupancy_batch(&points, c).unwrap(), &truth).unwrap();
    let refit = fit_shape_code(
        &base.mesh,
        dec,
        &FitConfig {
            iterations: 200,
            seed: 55,
            ..Default::default()
        },
        Some(code),
    )
    .unwrap();
    let (before, after) = (lo(code), lo(&refit.code));
    assert!((after - before).abs() <= 0.1 * before, "L_O {before} -> {after}");

    let fitted = fit_shape_code(
        &held_out.mesh,
        dec,
        &FitConfig {
            iterations: 600,
            learning_rate: 1e-3,
            seed: 56,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let queries = sample_queries(&held_out.mesh, 4000, DEFAULT_QUERY_SIGMA, 57).unwrap();
    let acc = occupancy_accuracy(dec, &fitted.code, &queries).unwrap();
    assert!(acc >= 0.9, "stylized occupancy accuracy {acc}");
}

#[test]
fn generated_offsets_stay_within_twice_the_height() {
    let ds = gen_dataset(&DatasetConfig {
        seed: 58,
        ..Default::default()
    })
    .unwrap();
    let max = ds.max_offset().unwrap();
    assert!(max > 0.0 && max <= 2.0, "max offset {max}");
}

#[test]
fn pose_module_learns_the_training_motion() {
    let ds = gen_dataset(&DatasetConfig {
        characters: 2,
        poses: 40,
        prior_poses: 400,
        stylized_train: 0,
        test_characters: 1,
        test_poses: 4,
        seed: 59,
        ..Default::default()
    })
    .unwrap();
    let set = ds.pose_training_set().unwrap();
    let mut rng = seed::rng(60);
    let d = 16;
    let codes: Vec<Vec<f64>> = (0..set.rest.len()).map(|_| random_code(d, &mut rng)).collect();
    let trained = train_pose_module(
        &set,
        &codes,
        ds.config.pose_dim,
        &PoseConfig {
            steps: 600,
            batch: 32,
            points_per_item: 64,
            seed: 61,
            ..Default::default()
        },
    )
    .unwrap();
    let h = &trained.history;
    let head: f64 = h[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = h[h.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
    let net = &trained.net;

    // rest pose: predicted offsets are small relative to a limb
    let base = &ds.characters[0].character;
    let bone_len = |b: usize| (base.rig.rest_tail[b] - base.rig.rest_head[b]).norm();
    let limb = [LEFT_UPPER_ARM, RIGHT_UPPER_ARM, LEFT_THIGH, RIGHT_THIGH]
        .iter()
        .map(|&b| (b..b + 3).map(bone_len).sum::<f64>())
        .sum::<f64>()
        / 4.0;
    let rest_dx = net.deform_batch(&base.mesh.vertices, &codes[0], &ds.train_codes[0]).unwrap();
    let mean_rest = rest_dx.iter().map(|v| v.norm()).sum::<f64>() / rest_dx.len() as f64;
    assert!(mean_rest < 0.1 * limb, "rest offset {mean_rest} vs limb {limb}");

    // training poses on a training character: better than staying at rest
    for p in 1..ds.train_poses.len() {
        let truth = unrig::synth::lbs_deform(base, &ds.train_poses[p]).unwrap();
        let pred = transfer_pose(&base.mesh, &codes[0], &ds.train_codes[p], net).unwrap();
        let moved = pmd(&pred, &truth).unwrap();
        let still = pmd(&base.mesh, &truth).unwrap();
        assert!(moved < still, "pose {p}: {moved} vs rest {still}");
    }

    // a hat on a stylized variant follows the head
    let t = ds.indices(CharacterKind::Test)[0];
    let styled = &ds.characters[t].character;
    let hat = styled.accessory_vertices();
    assert_eq!(hat.len(), 1);
    let head = styled.bone_vertices(HEAD).unwrap();
    let centroid = |v: &[Vec3], r: std::ops::Range<usize>| v[r.clone()].iter().sum::<Vec3>() / r.len() as f64;
    let source = ds.characters[t].base.unwrap();
    let rest_gap = (centroid(&styled.mesh.vertices, hat[0].clone()) - centroid(&styled.mesh.vertices, head.clone())).norm();
    for m in &ds.test_codes {
        let posed = transfer_pose(&styled.mesh, &codes[source], m, net).unwrap();
        let gap = (centroid(&posed.vertices, hat[0].clone()) - centroid(&posed.vertices, head.clone())).norm();
        assert!(gap <= 1.5 * rest_gap, "hat drifted {gap} vs rest {rest_gap}");
    }
}
