mod common;

use echoloc::forward::{ForwardModel, SparseMeasure, Spike};
use echoloc::geometry::{
    enumerate_image_sources, make_em32_array, observable_subset, MicArray, Room, Vec3, EM32_RADIUS,
};
use echoloc::harness::{angular_error, euclidean_error, match_and_score, MatchThresholds, Target};
use echoloc::io::{read_elrir, write_elrir, RawRir};
use echoloc::kernels::{FilterKernel, SamplingSpec};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use common::{brute_force_count, naive_apply, tetrahedral_array};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn room_and_src() -> impl Strategy<Value = (Room, Vec3)> {
    (vec3(2.0, 8.0), proptest::array::uniform6(0.01f64..0.3), (0.05f64..0.95, 0.05f64..0.95, 0.05f64..0.95))
        .prop_map(|(dims, absorption, (u, v, w))| {
            let room = Room::new(dims, absorption).unwrap();
            (room, Vec3::new(u * dims.x, v * dims.y, w * dims.z))
        })
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (vec3(-1.0, 1.0), 0.0f64..std::f64::consts::TAU).prop_filter_map("axis", |(axis, angle)| {
        let a = Vector3::new(axis.x, axis.y, axis.z);
        (a.norm() > 1e-3).then(|| *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(a), angle).matrix())
    })
}

fn kernel() -> impl Strategy<Value = FilterKernel> {
    prop_oneof![
        prop::sample::select(vec![8000.0, 16000.0, 24000.0]).prop_map(|fs| FilterKernel::SincLowpass { fs }),
        (2e-5f64..2e-4).prop_map(|sigma| FilterKernel::Gaussian { sigma }),
    ]
}

fn small_model(kernel: FilterKernel) -> ForwardModel {
    let array = tetrahedral_array(Vec3::new(2.0, 2.0, 1.5), 0.05);
    ForwardModel::new(array, kernel, SamplingSpec::new(8000.0, 64).unwrap(), 343.0).unwrap()
}

fn measure(len: usize) -> impl Strategy<Value = SparseMeasure> {
    prop::collection::vec((0.0f64..1.0, vec3(0.3, 3.7)), 1..=len).prop_map(|v| {
        SparseMeasure::new(v.into_iter().map(|(amplitude, position)| Spike { amplitude, position }).collect()).unwrap()
    })
}

fn far_from(array: &MicArray, p: Vec3, eps: f64) -> bool {
    array.positions.iter().all(|m| m.distance(p) > eps)
}

fn scaled(p: &SparseMeasure, f: f64) -> impl Iterator<Item = Spike> + '_ {
    p.spikes.iter().map(move |s| Spike { amplitude: f * s.amplitude, position: s.position })
}

fn targets(points: &[Vec3]) -> Vec<Target> {
    points.iter().map(|&position| Target { position, amplitude: 1.0, order: None }).collect()
}

#[test]
fn count_identity_for_low_orders() {
    let room = Room::new(Vec3::new(5.0, 4.0, 3.0), [0.1; 6]).unwrap();
    for k in 0..=12 {
        let set = enumerate_image_sources(&room, Vec3::new(1.0, 1.5, 1.2), k).unwrap();
        assert_eq!(set.len(), brute_force_count(k), "order {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn image_positions_follow_the_mirror_formula((room, src) in room_and_src(), k in 0u32..6) {
        let set = enumerate_image_sources(&room, src, k).unwrap();
        let l = room.dims;
        for s in &set.sources {
            for i in 0..3 {
                let expected = s.eps[i] as f64 * src[i] + 2.0 * s.q[i] as f64 * l[i];
                prop_assert!((s.position[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn image_positions_are_distinct((room, src) in room_and_src(), k in 0u32..5) {
        let set = enumerate_image_sources(&room, src, k).unwrap();
        let mut keys: Vec<[i64; 3]> = set.sources.iter()
            .map(|s| [0, 1, 2].map(|i| (s.position[i] * 1e9).round() as i64))
            .collect();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), set.len());
    }

    #[test]
    fn amplitude_is_bounded_by_reflection_powers((room, src) in room_and_src(), k in 0u32..6) {
        let r = room.reflection_coefficients();
        let r_max = r.iter().cloned().fold(0.0, f64::max);
        let r_min = r.iter().cloned().fold(1.0, f64::min);
        let set = enumerate_image_sources(&room, src, k).unwrap();
        for s in &set.sources {
            prop_assert!(s.amplitude > 0.0 && s.amplitude <= 1.0);
            prop_assert_eq!(s.amplitude == 1.0, s.order == 0);
            let o = s.order as i32;
            prop_assert!(s.amplitude <= r_max.powi(o) * (1.0 + 1e-12));
            prop_assert!(s.amplitude >= r_min.powi(o) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn observable_subset_matches_brute_force_and_is_idempotent(
        (room, src) in room_and_src(),
        t1 in 0.0f64..0.03,
        dt in 0.0f64..0.02,
        eps in 0.0f64..0.05,
    ) {
        let array = tetrahedral_array(room.dims * 0.5, 0.05);
        let set = enumerate_image_sources(&room, src, 4).unwrap();
        let c = 343.0;
        let a = observable_subset(&set, &array, t1, c, eps);
        let expected: Vec<_> = set.sources.iter()
            .filter(|s| array.positions.iter().all(|m| {
                let d = s.position.distance(*m);
                d <= c * t1 && d > eps
            }))
            .cloned()
            .collect();
        prop_assert_eq!(&a.sources, &expected);
        prop_assert_eq!(&observable_subset(&a, &array, t1, c, eps).sources, &a.sources);
        let b = observable_subset(&set, &array, t1 + dt, c, eps);
        prop_assert!(a.sources.iter().all(|s| b.sources.contains(s)));
    }

    #[test]
    fn em32_is_rotation_invariant(rot in rotation(), center in vec3(-2.0, 2.0)) {
        let base = make_em32_array(center, EM32_RADIUS, &Matrix3::identity()).unwrap();
        let turned = make_em32_array(center, EM32_RADIUS, &rot).unwrap();
        for i in 0..32 {
            prop_assert!((turned.positions[i].distance(center) - EM32_RADIUS).abs() < 1e-14);
            for j in 0..32 {
                let d0 = base.positions[i].distance(base.positions[j]);
                let d1 = turned.positions[i].distance(turned.positions[j]);
                prop_assert!((d0 - d1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_map_matches_naive_oracle(k in kernel(), psi in measure(6)) {
        let model = small_model(k);
        prop_assume!(psi.spikes.iter().all(|s| far_from(&model.array, s.position, 0.01)));
        let fast = model.apply(&psi).unwrap();
        let naive = naive_apply(&psi, &model.array, &k, model.spec.fs, model.spec.n_samples, model.c);
        for (a, b) in fast.data.iter().zip(&naive) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn forward_map_is_linear(k in kernel(), p1 in measure(4), p2 in measure(4), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let model = small_model(k);
        let all = p1.spikes.iter().chain(&p2.spikes);
        prop_assume!(all.clone().all(|s| far_from(&model.array, s.position, 0.01)));
        let combined = SparseMeasure::new(scaled(&p1, a).chain(scaled(&p2, b)).collect()).unwrap();
        let y = model.apply(&combined).unwrap();
        let y1 = model.apply(&p1).unwrap();
        let y2 = model.apply(&p2).unwrap();
        for i in 0..y.data.len() {
            prop_assert!((y.data[i] - (a * y1.data[i] + b * y2.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_holds(k in kernel(), psi in measure(6), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let model = small_model(k);
        prop_assume!(psi.spikes.iter().all(|s| far_from(&model.array, s.position, 0.01)));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = model.apply(&psi).unwrap();
        let lhs: f64 = y.data.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = psi.spikes.iter().map(|s| s.amplitude * model.adjoint_value(&v, s.position).unwrap()).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn gamma_obeys_distance_bound(k in kernel(), r in vec3(-3.0, 6.0)) {
        let model = small_model(k);
        prop_assume!(far_from(&model.array, r, 1e-3));
        let col = model.gamma_column(r).unwrap();
        let n = model.spec.n_samples;
        for (m, mic) in model.array.positions.iter().enumerate() {
            let bound = 1.0 / (4.0 * std::f64::consts::PI * mic.distance(r));
            prop_assert!(col[m * n..(m + 1) * n].iter().all(|g| g.abs() <= bound * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn nonzero_measures_have_nonzero_images(psi in measure(5)) {
        let model = small_model(FilterKernel::SincLowpass { fs: 8000.0 });
        let reach = model.c * model.spec.t_max();
        prop_assume!(psi.spikes.iter().all(|s| far_from(&model.array, s.position, 0.01)
            && model.array.positions.iter().all(|m| m.distance(s.position) <= reach)));
        prop_assume!(psi.total_mass() > 1e-6);
        prop_assert!(model.apply(&psi).unwrap().norm() > 0.0);
    }

    #[test]
    fn metrics_are_symmetric_and_scale_free(a in vec3(-5.0, 5.0), b in vec3(-5.0, 5.0), s in 0.01f64..100.0) {
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        prop_assert_eq!(euclidean_error(a, b), euclidean_error(b, a));
        let ae = angular_error(a, b).unwrap();
        let scaled = angular_error(a * s, b * s).unwrap();
        prop_assert!((ae - scaled).abs() < 1e-6);
        prop_assert!((0.0..=180.0).contains(&ae));
    }

    #[test]
    fn matching_is_injective_and_monotone(
        truth in prop::collection::vec(vec3(-4.0, 4.0), 0..12),
        jitter in prop::collection::vec(vec3(-0.02, 0.02), 0..16),
        re in 0.001f64..0.03,
        ae in 0.2f64..5.0,
        grow in 1.0f64..3.0,
    ) {
        let truth: Vec<Vec3> = truth.into_iter().filter(|p| p.norm() > 0.5).collect();
        let estimate: Vec<Spike> = jitter.iter().enumerate()
            .filter(|(i, _)| !truth.is_empty() || *i > 100)
            .map(|(i, j)| Spike { amplitude: 0.5, position: truth[i % truth.len()] + *j })
            .collect();
        let est = SparseMeasure::new(estimate).unwrap();
        let t = targets(&truth);
        let tight = match_and_score(&t, &est, Vec3::new(0.0, 0.0, 0.0), MatchThresholds { re, ae_deg: ae }).unwrap();
        let loose = match_and_score(&t, &est, Vec3::new(0.0, 0.0, 0.0), MatchThresholds { re: re * grow, ae_deg: ae * grow }).unwrap();
        for rep in [&tight, &loose] {
            let mut ts: Vec<_> = rep.matches.iter().map(|m| m.target).collect();
            let mut es: Vec<_> = rep.matches.iter().map(|m| m.estimate).collect();
            ts.sort();
            ts.dedup();
            es.sort();
            es.dedup();
            prop_assert_eq!(ts.len(), rep.matches.len());
            prop_assert_eq!(es.len(), rep.matches.len());
            prop_assert!((0.0..=1.0).contains(&rep.recall) && (0.0..=1.0).contains(&rep.precision));
            if rep.n_targets > 0 {
                let k = rep.recall * rep.n_targets as f64;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
        }
        prop_assert!(loose.recall >= tight.recall);
    }

    #[test]
    fn noise_is_reproducible(seed in any::<u64>(), psnr in 0.0f64..60.0) {
        let model = small_model(FilterKernel::SincLowpass { fs: 8000.0 });
        let psi = SparseMeasure::new(vec![Spike { amplitude: 1.0, position: Vec3::new(1.0, 1.0, 1.0) }]).unwrap();
        let y = model.apply(&psi).unwrap();
        let a = y.add_noise(psnr, seed).unwrap();
        let b = y.add_noise(psnr, seed).unwrap();
        prop_assert_eq!(&a.data, &b.data);
    }

    #[test]
    fn elrir_round_trips(m in 1usize..5, n in 1usize..40, fs in 1000.0f64..48000.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rir = RawRir { n_mics: m, n_samples: n, fs, c: 343.0, data: (0..m * n).map(|_| rng.random::<f64>() - 0.5).collect() };
        let mut buf = Vec::new();
        write_elrir(&mut buf, &rir).unwrap();
        prop_assert_eq!(buf.len(), 6 + 4 + 4 + 8 + 8 + 8 * m * n);
        prop_assert_eq!(read_elrir(buf.as_slice()).unwrap(), rir);
    }
}
