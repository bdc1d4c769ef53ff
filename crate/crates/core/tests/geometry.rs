mod common;

use proptest::prelude::*;
use rand::Rng;
use unrig::mesh::{edges, occupancy, primitives, sample_surface, Mesh, Vec3};
use unrig::seed;
use unrig::synth::character::{capsule_mesh, ellipsoid_mesh, Capsule};
use unrig::synth::{build_character, lbs_deform, sample_pose, stylize, BodyParams, PoseSample, StyleParams};

fn max_vertex_gap(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn lbs_matches_matrix_chain_oracle_on_random_poses() {
    let mut rng = seed::rng(11);
    let base = build_character(&BodyParams::sample(&mut rng)).unwrap();
    let styled = stylize(
        &base,
        &StyleParams {
            hat: true,
            ..StyleParams::sample(&mut rng)
        },
    )
    .unwrap();
    for i in 0..100 {
        let c = if i % 2 == 0 { &base } else { &styled };
        // alternate limit-respecting poses with unconstrained rotations
        let pose = if i % 4 < 2 {
            sample_pose(&mut rng)
        } else {
            PoseSample {
                rotations: (0..c.bone_count())
                    .map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
                    .collect(),
            }
        };
        let got = lbs_deform(c, &pose).unwrap();
        let want = common::lbs_oracle(c, &pose);
        let gap = max_vertex_gap(&got.vertices, &want);
        assert!(gap <= 1e-9, "pose {i}: gap {gap:e}");
    }
}

fn watertight_meshes() -> Vec<(&'static str, Mesh)> {
    vec![
        ("cube", primitives::unit_cube()),
        ("icosphere", primitives::icosphere(3)),
        ("jittered sphere", common::jittered_sphere(2, 5)),
        (
            "capsule",
            capsule_mesh(&Capsule {
                a: Vec3::new(-0.3, 0.1, 0.0),
                b: Vec3::new(0.4, -0.2, 0.1),
                radius: 0.2,
            }),
        ),
        (
            "ellipsoid",
            ellipsoid_mesh(&Vec3::new(0.1, 0.2, -0.1), &Vec3::new(0.5, 0.2, 0.3)),
        ),
    ]
}

#[test]
fn occupancy_agrees_with_ray_parity() {
    for (k, (name, mesh)) in watertight_meshes().into_iter().enumerate() {
        let (lo, hi) = mesh.bounds();
        let mut rng = seed::rng(seed::derive_indexed(3, "parity", k as u64));
        let points: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::from_fn(|i, _| rng.random_range(lo[i]..hi[i])))
            .collect();
        let labels = occupancy(&mesh, &points);
        let mut compared = 0;
        let mut agree = 0;
        for (p, l) in points.iter().zip(&labels) {
            if common::distance_to_mesh(&mesh, p) < 1e-4 {
                continue;
            }
            compared += 1;
            if *l == common::ray_parity_inside(&mesh, p) {
                agree += 1;
            }
        }
        let rate = agree as f64 / compared as f64;
        assert!(compared > 900, "{name}: only {compared} points away from the surface");
        assert!(rate >= 0.99, "{name}: agreement {rate}");
    }
}

#[test]
fn icosahedron_satisfies_euler() {
    let m = primitives::icosahedron();
    let e = edges(&m).len();
    assert_eq!(e, 30);
    assert_eq!(m.vertex_count() as i64 - e as i64 + m.face_count() as i64, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edges_match_oracle_and_euler(levels in 0usize..3, s in any::<u64>()) {
        let m = common::jittered_sphere(levels, s);
        let got = edges(&m).edges;
        prop_assert_eq!(&got, &common::edge_list(&m));
        prop_assert_eq!(m.vertex_count() as i64 - got.len() as i64 + m.face_count() as i64, 2);
    }

    #[test]
    fn occupancy_is_rigid_invariant(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-2.0f64..2.0),
        s in any::<u64>(),
    ) {
        let mesh = common::jittered_sphere(1, s);
        let axis = Vec3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = Vec3::from(shift);
        let moved = mesh.with_vertices(mesh.vertices.iter().map(|v| rot * v + t).collect()).unwrap();
        let mut rng = seed::rng(s);
        let points: Vec<Vec3> = (0..200)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.3..1.3)))
            .filter(|p| common::distance_to_mesh(&mesh, p) > 1e-6)
            .collect();
        let a = occupancy(&mesh, &points);
        let moved_points: Vec<Vec3> = points.iter().map(|p| rot * p + t).collect();
        let b = occupancy(&moved, &moved_points);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn surface_samples_reconstruct_from_barycentrics(s in any::<u64>(), n in 0usize..200) {
        let mesh = common::jittered_sphere(1, s);
        for p in sample_surface(&mesh, n, s).unwrap() {
            let [a, b, c] = mesh.triangle(p.face);
            let q = a * p.barycentric[0] + b * p.barycentric[1] + c * p.barycentric[2];
            prop_assert!((q - p.position).norm() < 1e-9);
            prop_assert!(p.barycentric.iter().all(|w| *w >= 0.0));
            prop_assert!((p.barycentric.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pose_leaves_any_character_at_rest(s in any::<u64>()) {
        let c = build_character(&BodyParams::sample(&mut seed::rng(s))).unwrap();
        let posed = lbs_deform(&c, &PoseSample::identity(c.bone_count())).unwrap();
        prop_assert_eq!(posed.vertices, c.mesh.vertices);
    }
}
