mod common;

use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::Rng;
use unrig::mesh::Vec3;
use unrig::pose::{loss_deform, PoseNet};
use unrig::seed;
use unrig::shape::{loss_inverse, loss_occupancy, loss_part, random_code, ShapeDecoder, PROB_CLAMP};
use unrig::ttt::{loss_driving, loss_edge, loss_volume, sample_pairs, PartPair};

fn random_points(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn volume_pair_from_one_to_two_contributes_one() {
    let points = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
    let offsets = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
    let pairs = [PartPair { part: 0, i: 0, j: 1 }];
    assert_eq!(loss_volume(&pairs, &points, &offsets).unwrap(), 1.0);
}

#[test]
fn volume_loss_is_blind_to_per_part_rigid_motion() {
    let mut rng = seed::rng(31);
    for trial in 0..20 {
        let points = random_points(300, &mut rng);
        let labels: Vec<usize> = (0..points.len()).map(|_| rng.random_range(0..5)).collect();
        let pairs = sample_pairs(&labels, 64, trial);
        let shifts: Vec<Vec3> = (0..5).map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0))).collect();
        let translated: Vec<Vec3> = labels.iter().map(|&l| shifts[l]).collect();
        assert_eq!(loss_volume(&pairs, &points, &translated).unwrap(), 0.0);

        let motions: Vec<(Rotation3<f64>, Vec3)> = (0..5)
            .map(|_| {
                let axis = Unit::new_normalize(Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
                (Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)), shifts[0])
            })
            .collect();
        let rotated: Vec<Vec3> = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| motions[l].0 * p + motions[l].1 - p)
            .collect();
        let lv = loss_volume(&pairs, &points, &rotated).unwrap();
        assert!(lv <= 1e-9, "trial {trial}: {lv:e}");
    }
}

#[test]
fn ttt_losses_match_loop_oracles() {
    let mut rng = seed::rng(32);
    for case in 0..100u64 {
        let rest = common::jittered_sphere((case % 3) as usize, case);
        let deformed: Vec<Vec3> = rest
            .vertices
            .iter()
            .map(|v| v + Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2)))
            .collect();
        let le = loss_edge(&rest, &deformed).unwrap();
        assert!(close(le, common::edge_loss_oracle(&rest, &deformed)), "case {case}");

        let offsets: Vec<Vec3> = deformed.iter().zip(&rest.vertices).map(|(d, r)| d - r).collect();
        let labels: Vec<usize> = (0..rest.vertex_count()).map(|_| rng.random_range(0..4)).collect();
        let pairs = sample_pairs(&labels, 16, case);
        let lv = loss_volume(&pairs, &rest.vertices, &offsets).unwrap();
        assert!(close(lv, common::volume_oracle(&pairs, &rest.vertices, &offsets)), "case {case}");

        let truth = random_points(rest.vertex_count(), &mut rng);
        let ld = loss_driving(&deformed, &truth).unwrap();
        assert!(close(ld, common::driving_oracle(&deformed, &truth)), "case {case}");
        assert!(close(loss_deform(&deformed, &truth).unwrap(), ld), "case {case}");
    }
}

#[test]
fn shape_losses_match_loop_oracles() {
    let mut rng = seed::rng(33);
    for case in 0..100 {
        let n = rng.random_range(1..50);
        let pred: Vec<f64> = (0..n)
            .map(|i| if i % 7 == 0 { rng.random_range(0.0..1e-9) } else { rng.random_range(0.0..1.0) })
            .collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let mut want = 0.0;
        for i in 0..n {
            let p = pred[i].max(PROB_CLAMP).min(1.0 - PROB_CLAMP);
            want -= if truth[i] { p.ln() } else { (1.0 - p).ln() };
        }
        assert!(close(loss_occupancy(&pred, &truth).unwrap(), want), "case {case}");

        let k = rng.random_range(1..8);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|r| r / s).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut want = 0.0;
        for i in 0..n {
            want -= probs[i][labels[i]].max(PROB_CLAMP).ln();
        }
        assert!(close(loss_part(&probs, &labels).unwrap(), want), "case {case}");

        let x = random_points(n, &mut rng);
        let x_hat = random_points(n, &mut rng);
        assert!(close(loss_inverse(&x_hat, &x).unwrap(), common::driving_oracle(&x_hat, &x)), "case {case}");
    }
}

#[test]
fn loss_closed_forms() {
    let n = 9;
    let half = vec![0.5; n];
    let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    assert!(close(loss_occupancy(&half, &truth).unwrap(), n as f64 * 2f64.ln()));
    let k = 6;
    let uniform = vec![vec![1.0 / k as f64; k]; n];
    assert!(close(loss_part(&uniform, &vec![2; n]).unwrap(), n as f64 * (k as f64).ln()));
    let x = random_points(n, &mut seed::rng(1));
    let shifted: Vec<Vec3> = x.iter().map(|p| p + Vec3::z()).collect();
    assert!(close(loss_inverse(&shifted, &x).unwrap(), n as f64));
    assert!(close(loss_driving(&shifted, &x).unwrap(), n as f64));
    assert_eq!(loss_deform(&x, &x).unwrap(), 0.0);
}

#[test]
fn networks_match_reevaluation_oracle() {
    let mut rng = seed::rng(34);
    let d = 16;
    let dec = ShapeDecoder::new(d, 6, 3).unwrap();
    let net = {
        let mut n = PoseNet::new(d, 8, 4).unwrap();
        // a nonzero output layer so the comparison is not trivially zero
        let last = n.m.layers_mut().last_mut().unwrap();
        last.weight.iter_mut().for_each(|w| *w = rng.random_range(-0.1..0.1));
        n
    };
    for _ in 0..20 {
        let s = random_code(d, &mut rng);
        let m: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Vec3::from_fn(|_, _| rng.random_range(-0.6..0.6));

        let mut fin = vec![x.x, x.y, x.z];
        fin.extend(&s);
        let e = dec.embed(&x, &s).unwrap();
        assert_vec_close(&e, &common::mlp_oracle(&dec.f, &fin));
        assert_vec_close(&[dec.predict_occupancy(&e).unwrap()], &common::mlp_oracle(&dec.o, &e));
        assert_vec_close(&dec.predict_parts(&e).unwrap(), &common::mlp_oracle(&dec.p, &e));
        let mut qin = s.clone();
        qin.extend(&e);
        let xh = dec.invert(&s, &e).unwrap();
        assert_vec_close(&[xh.x, xh.y, xh.z], &common::mlp_oracle(&dec.q, &qin));

        let mut min = vec![x.x, x.y, x.z];
        min.extend(&s);
        min.extend(&m);
        let dx = net.deform_point(&x, &s, &m).unwrap();
        assert_vec_close(&[dx.x, dx.y, dx.z], &common::mlp_oracle(&net.m, &min));
    }
}

fn assert_vec_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_loss_is_nonnegative_and_zero_at_rest(s in any::<u64>(), n in 2usize..60, parts in 1usize..6) {
        let mut rng = seed::rng(s);
        let points = random_points(n, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..parts)).collect();
        let pairs = sample_pairs(&labels, 8, s);
        for p in &pairs {
            prop_assert!(p.i != p.j);
            prop_assert_eq!(labels[p.i], p.part);
            prop_assert_eq!(labels[p.j], p.part);
        }
        let zero = vec![Vec3::zeros(); n];
        prop_assert_eq!(loss_volume(&pairs, &points, &zero).unwrap(), 0.0);
        let offsets = random_points(n, &mut rng);
        prop_assert!(loss_volume(&pairs, &points, &offsets).unwrap() >= 0.0);
    }

    #[test]
    fn edge_loss_is_zero_exactly_under_rigid_motion(s in any::<u64>(), angle in -3.0f64..3.0) {
        let rest = common::jittered_sphere(1, s);
        let rot = Rotation3::from_axis_angle(&Vec3::x_axis(), angle);
        let moved: Vec<Vec3> = rest.vertices.iter().map(|v| rot * v + Vec3::new(1.0, 2.0, 3.0)).collect();
        prop_assert!(loss_edge(&rest, &moved).unwrap() < 1e-24);
        prop_assert_eq!(loss_edge(&rest, &rest.vertices).unwrap(), 0.0);
    }
}
