use proptest::prelude::*;
use radpose::decode::*;
use radpose::net::{HeadOutput, JointMaps};
use radpose::pose::{dist, Person, PoseSet, NUM_JOINTS};
use radpose::scene::{template_person, CartesianGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> CartesianGrid {
    CartesianGrid {
        origin: [-2.0, 1.0, -1.0],
        voxel_extent: [0.25, 0.25, 0.25],
        dims: [8, 16, 16],
    }
}

fn blank(g: &CartesianGrid) -> HeadOutput {
    let n = g.voxel_count();
    HeadOutput {
        dims: g.dims,
        center_confidence: vec![0.01; n],
        keypoint_offsets: vec![0.0; 3 * NUM_JOINTS * n],
    }
}

fn flat(g: &CartesianGrid, v: [usize; 3]) -> usize {
    (v[0] * g.dims[1] + v[1]) * g.dims[2] + v[2]
}

fn person_at(pelvis: [f64; 3], heading: f64) -> Person {
    template_person(pelvis, heading, &[[0.0; 3]; NUM_JOINTS])
}

#[test]
fn single_spike_gives_one_person_at_its_voxel() {
    let g = grid();
    let mut h = blank(&g);
    let v = flat(&g, [3, 7, 9]);
    h.center_confidence[v] = 0.9;
    let n = g.voxel_count();
    for j in 0..NUM_JOINTS {
        h.keypoint_offsets[(3 * j + 1) * n + v] = 0.01 * j as f64;
    }
    let out = decode(&h, &g, &DecodeConfig::default()).unwrap();
    assert_eq!(out.len(), 1);
    let p = &out.persons[0];
    assert_eq!(p.score, 0.9);
    assert_eq!(p.center, g.voxel_center(3, 7, 9));
    for j in 0..NUM_JOINTS {
        let c = g.voxel_center(3, 7, 9);
        assert_eq!(p.joints[j], [c[0], c[1] + 0.01 * j as f64, c[2]]);
    }
    // below threshold: nothing
    h.center_confidence[v] = 0.29;
    assert!(decode(&h, &g, &DecodeConfig::default()).unwrap().is_empty());
}

#[test]
fn nms_keeps_the_stronger_of_close_peaks() {
    let g = grid();
    let mut h = blank(&g);
    // two peaks 0.5 m apart (not neighbours) and one far away
    h.center_confidence[flat(&g, [3, 7, 4])] = 0.8;
    h.center_confidence[flat(&g, [3, 7, 6])] = 0.9;
    h.center_confidence[flat(&g, [3, 7, 14])] = 0.5;
    let out = decode(&h, &g, &DecodeConfig::default()).unwrap();
    let scores: Vec<f64> = out.persons.iter().map(|p| p.score).collect();
    assert_eq!(scores, vec![0.9, 0.5]);
    // the default radius is met exactly, which suppresses
    let loose = DecodeConfig { nms_radius: 0.49, ..DecodeConfig::default() };
    assert_eq!(decode(&h, &g, &loose).unwrap().len(), 3);
}

#[test]
fn encoded_targets_decode_to_the_persons() {
    let g = grid();
    let gt = PoseSet::new(vec![
        person_at([-1.0, 2.0, -0.2], 0.3),
        person_at([0.8, 3.5, 0.1], 2.0),
        person_at([0.0, 2.6, 0.4], 4.5),
    ]);
    let (map, offs) = encode_targets(&gt, &g, 2.0).unwrap();
    assert_eq!(map.foreground().len(), 3);
    assert_eq!(match_foreground(&map, &gt, &g).unwrap().len(), 3);
    let h = head_from_targets(&map, &offs);
    let out = decode(&h, &g, &DecodeConfig::default()).unwrap();
    assert_eq!(out.len(), 3);
    for p in &gt.persons {
        let q = out.persons.iter().find(|q| dist(q.pelvis(), p.pelvis()) < 1e-9).expect("person recovered");
        for j in 0..NUM_JOINTS {
            assert!(dist(q.joints[j], p.joints[j]) < 1e-9);
        }
        let v = g.voxel_of(p.pelvis()).unwrap();
        assert_eq!(q.center, g.voxel_center(v[0], v[1], v[2]));
    }
}

#[test]
fn gaussian_target_oracle() {
    let g = grid();
    let p = person_at([0.05, 2.45, -0.15], 1.0);
    let (map, _) = encode_targets(&PoseSet::new(vec![p.clone()]), &g, 1.5).unwrap();
    let c = g.voxel_of(p.pelvis()).unwrap();
    for z in 0..8 {
        for y in 0..16 {
            for x in 0..16 {
                let d2 = [(z, c[0]), (y, c[1]), (x, c[2])]
                    .iter()
                    .map(|&(a, b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>();
                let want = (-d2 / (2.0 * 1.5 * 1.5)).exp();
                assert!((map.values[flat(&g, [z, y, x])] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn encoding_rejects_bad_annotations() {
    let g = grid();
    let shared = PoseSet::new(vec![person_at([0.0, 2.5, 0.0], 0.0), person_at([0.01, 2.51, 0.0], 1.0)]);
    assert!(encode_targets(&shared, &g, 2.0).is_err());
    let outside = PoseSet::new(vec![person_at([5.0, 2.5, 0.0], 0.0)]);
    assert!(encode_targets(&outside, &g, 2.0).is_err());
    let one = PoseSet::new(vec![person_at([0.0, 2.5, 0.0], 0.0)]);
    let (map, _) = encode_targets(&one, &g, 2.0).unwrap();
    let moved = PoseSet::new(vec![person_at([1.0, 2.5, 0.0], 0.0)]);
    assert!(matches!(match_foreground(&map, &moved, &g), Err(radpose::Error::Annotation(_))));
}

#[test]
fn decode_validates_inputs() {
    let g = grid();
    let h = blank(&g);
    for cfg in [
        DecodeConfig { score_threshold: 0.0, ..DecodeConfig::default() },
        DecodeConfig { score_threshold: 1.0, ..DecodeConfig::default() },
        DecodeConfig { nms_radius: -1.0, ..DecodeConfig::default() },
    ] {
        assert!(decode(&h, &g, &cfg).is_err());
    }
    let mut short = h.clone();
    short.keypoint_offsets.pop();
    assert!(decode(&short, &g, &DecodeConfig::default()).is_err());
    let other = CartesianGrid { dims: [8, 16, 15], ..g };
    assert!(decode(&h, &other, &DecodeConfig::default()).is_err());
}

#[test]
fn joint_maps_take_the_argmax_per_joint() {
    let g = grid();
    let n = g.voxel_count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut maps = vec![0.0; NUM_JOINTS * n];
    let mut peaks = Vec::new();
    for j in 0..NUM_JOINTS {
        let v = rng.gen_range(0..n);
        maps[j * n + v] = 0.5 + 0.01 * j as f64;
        peaks.push(v);
    }
    let p = decode_joint_maps(&JointMaps { dims: g.dims, maps }, &g).unwrap();
    for j in 0..NUM_JOINTS {
        assert_eq!(p.joints[j], voxel_center_flat(&g, peaks[j]));
    }
    let mean = (0..NUM_JOINTS).map(|j| 0.5 + 0.01 * j as f64).sum::<f64>() / 15.0;
    assert!((p.score - mean).abs() < 1e-12);
}

fn random_head(seed: u64) -> HeadOutput {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = blank(&g);
    h.center_confidence.iter_mut().for_each(|c| *c = rng.gen_range(0.0..0.6));
    h.keypoint_offsets.iter_mut().for_each(|o| *o = rng.gen_range(-0.5..0.5));
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn more_candidates_never_lose_persons(seed in 0u64..10_000, k in 1usize..12) {
        let g = grid();
        let h = random_head(seed);
        let a = decode(&h, &g, &DecodeConfig { k, ..DecodeConfig::default() }).unwrap();
        let b = decode(&h, &g, &DecodeConfig { k: k + 1, ..DecodeConfig::default() }).unwrap();
        prop_assert!(a.len() <= k);
        prop_assert!(a.len() <= b.len());
        prop_assert!(a.validate().is_ok());
        for w in a.persons.windows(2) {
            prop_assert!(dist(w[0].center, w[1].center) > 0.5);
        }
    }

    #[test]
    fn nms_is_idempotent_and_decode_invariant_to_monotone_rescoring(seed in 0u64..10_000) {
        let g = grid();
        let h = random_head(seed);
        let cfg = DecodeConfig::default();
        let a = decode(&h, &g, &cfg).unwrap();
        prop_assert_eq!(&nms(&a.persons, cfg.nms_radius), &a.persons);
        // a strictly increasing map that fixes the threshold keeps the same peaks
        let mut s = h.clone();
        s.center_confidence.iter_mut().for_each(|c| *c = 0.3 * (*c / 0.3).sqrt());
        let b = decode(&s, &g, &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.persons.iter().zip(&b.persons) {
            prop_assert_eq!(p.joints, q.joints);
        }
    }
}
