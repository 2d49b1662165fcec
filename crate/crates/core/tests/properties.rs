mod common;

use perturbench_core::builder::{filter_and_balance, generate_variants, stratify, ModelOutcomes};
use perturbench_core::camera::{perturb_orientation, perturb_sphere};
use perturbench_core::geometry::{det, norm, orthonormality_error, sub};
use perturbench_core::harness::{filter_trajectories, Action, EpisodeRecord, TrajectoryStep};
use perturbench_core::patch::{apply, diff, ScenePatch};
use perturbench_core::perturbation::{Dimension, PerturbationVector};
use perturbench_core::report::Tenths;
use perturbench_core::rng::SeedKey;
use perturbench_core::scene::fixtures::scene;
use perturbench_core::stats::{success_conditioned, PairSuccessTable};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::sync::OnceLock;

fn candidates() -> &'static perturbench_core::builder::BenchmarkManifest {
    static CELL: OnceLock<perturbench_core::builder::BenchmarkManifest> = OnceLock::new();
    CELL.get_or_init(|| {
        let dims = [
            Dimension::Camera,
            Dimension::Light,
            Dimension::Noise,
            Dimension::Language,
        ];
        generate_variants(&common::base_tasks(2), &dims, 24, 9, &common::generators()).unwrap()
    })
}

fn step(pose: [f64; 6], gripper: f64) -> TrajectoryStep {
    let mut v = [0.0; 7];
    v[..6].copy_from_slice(&pose);
    v[6] = gripper;
    TrajectoryStep {
        state: vec![],
        action: Action::new(v).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn patches_reproduce_the_modified_scene(seed in any::<u64>()) {
        let mut rng = SeedKey::new(seed).rng();
        let mut fresh = 0;
        let base = common::mutate_scene(&scene(), &mut rng, &mut fresh);
        let modified = common::mutate_scene(&base, &mut rng, &mut fresh);
        let patch = diff(&base, &modified).unwrap();
        prop_assert_eq!(apply(&base, &patch).unwrap(), modified.clone());
        prop_assert!(diff(&modified, &modified).unwrap().is_empty());
        let text = patch.to_canonical();
        prop_assert_eq!(ScenePatch::from_canonical(&text).unwrap().to_canonical(), text);
    }

    #[test]
    fn sphere_moves_keep_radius_and_rotation(az in -180.0f64..180.0, el in -50.0f64..50.0) {
        let cam = scene().camera;
        let out = perturb_sphere(&cam, az, el).unwrap();
        let r0 = norm(&sub(&cam.position, &cam.look_center));
        let r1 = norm(&sub(&out.position, &out.look_center));
        prop_assert!((r0 - r1).abs() <= 1e-9);
        prop_assert!(orthonormality_error(&out.rotation) <= 1e-9);
        prop_assert!((det(&out.rotation) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn orientation_moves_are_rotations(
        yaw in prop_oneof![Just(0.0), 2.0f64..10.0, -10.0f64..-2.0],
        pitch in prop_oneof![Just(0.0), 2.0f64..10.0, -10.0f64..-2.0],
        roll in prop_oneof![Just(0.0), 2.0f64..10.0, -10.0f64..-2.0],
    ) {
        let cam = scene().camera;
        let out = perturb_orientation(&cam, yaw, pitch, roll).unwrap();
        prop_assert_eq!(out.position, cam.position);
        prop_assert!(orthonormality_error(&out.rotation) <= 1e-9);
        prop_assert!((det(&out.rotation) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn gap_sign_follows_the_cross_product(s in prop::array::uniform4(0.0f64..=1.0)) {
        prop_assume!(s.iter().sum::<f64>() > 1e-6);
        let t = PairSuccessTable::new(s[0], s[1], s[2], s[3], 10).unwrap();
        let g = success_conditioned(&t).unwrap();
        let cross = t.s00 * t.s11 - t.s10 * t.s01;
        if cross.abs() > 1e-9 {
            prop_assert_eq!(g.delta > 0.0, cross > 0.0);
        }
        let swapped = success_conditioned(&t.transposed()).unwrap();
        prop_assert!((swapped.delta - g.delta).abs() <= 1e-15);
        let total: f64 = g.joint.iter().flatten().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tenths_round_half_to_even(num in 0u64..1_000_000, den in 1u64..1_000_000) {
        let t = Tenths::percent(num, den);
        // |100 * num / den - t / 10| <= 0.05, with ties on the even neighbour.
        let twice_err = (2000 * i128::from(num) - 2 * i128::from(den) * i128::from(t.0)).abs();
        prop_assert!(twice_err <= i128::from(den));
        if twice_err == i128::from(den) {
            prop_assert_eq!(t.0 % 2, 0);
        }
        let text = t.to_string();
        prop_assert_eq!(text.parse::<f64>().unwrap(), t.as_f64());
        prop_assert_eq!(Tenths::try_from(t.as_f64()).unwrap(), t);
    }

    #[test]
    fn tenths_difference_is_exact(a in -10_000i64..10_000, b in -10_000i64..10_000) {
        let d = Tenths(a) - Tenths(b);
        prop_assert_eq!(d.0, a - b);
        let parsed: f64 = d.to_string().parse().unwrap();
        prop_assert!((parsed - (a - b) as f64 / 10.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_filter_keeps_successes_and_moves(
        flags in prop::collection::vec(any::<bool>(), 1..12),
        moves in prop::collection::vec((0u8..3, any::<bool>()), 0..30),
    ) {
        let traj: Vec<TrajectoryStep> = moves
            .iter()
            .map(|(m, g)| step([f64::from(*m) * 0.01, 0.0, 0.0, 0.0, 0.0, 0.0], if *g { 1.0 } else { -1.0 }))
            .collect();
        let records: Vec<EpisodeRecord> = flags
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut r = common::records("m", &format!("t{k}"), &[], u64::from(*s), 1).remove(0);
                r.trajectory = Some(traj.clone());
                r
            })
            .collect();
        let out = filter_trajectories(&records, 0.0);
        prop_assert_eq!(out.len(), flags.iter().filter(|s| **s).count());
        for r in &out {
            prop_assert!(r.success);
            let kept = r.trajectory.as_ref().unwrap();
            prop_assert!(kept.len() <= traj.len());
            let mut prev = traj.first().map(|s| s.action.gripper());
            let mut expected = Vec::new();
            for s in &traj {
                let noop = prev == Some(s.action.gripper()) && s.action.pose().iter().all(|d| *d == 0.0);
                prev = Some(s.action.gripper());
                if !noop {
                    expected.push(s.clone());
                }
            }
            prop_assert_eq!(kept, &expected);
        }
    }

    #[test]
    fn stratification_ignores_model_names(bits in prop::collection::vec(0u8..16, 1..40), rotate in 0usize..4) {
        let names = ["a", "b", "c", "d"];
        let build = |shift: usize| {
            let mut o = ModelOutcomes::new();
            for (v, b) in bits.iter().enumerate() {
                for k in 0..4 {
                    o.entry(names[(k + shift) % 4].to_string())
                        .or_default()
                        .insert(format!("v{v}"), b & (1 << k) != 0);
                }
            }
            o
        };
        let plain = stratify(&build(0), 4).unwrap();
        prop_assert_eq!(&stratify(&build(rotate), 4).unwrap(), &plain);
        for (v, b) in bits.iter().enumerate() {
            prop_assert_eq!(u32::from(plain[&format!("v{v}")].get()), 5 - b.count_ones());
        }
    }

    #[test]
    fn balancing_conserves_entries(seed in any::<u64>(), rule in prop_oneof![Just(1.0), Just(0.75), Just(0.5)]) {
        let manifest = candidates();
        let mut rng = SeedKey::new(seed).rng();
        let mut outcomes = ModelOutcomes::new();
        for m in ["a", "b", "c", "d"] {
            let solved: BTreeMap<String, bool> = manifest.ids().map(|id| (id.to_string(), rng.below(3) > 0)).collect();
            outcomes.insert(m.to_string(), solved);
        }
        let kept = filter_and_balance(manifest, &outcomes, rule, seed).unwrap();
        let originals: BTreeMap<&str, _> = manifest.entries.iter().map(|e| (e.variant_id.as_str(), e)).collect();
        let mut per_sub: BTreeMap<Dimension, BTreeMap<String, usize>> = BTreeMap::new();
        for e in &kept.entries {
            prop_assert_eq!(originals[e.variant_id.as_str()], e);
            let solved = outcomes.values().filter(|o| o[&e.variant_id]).count() as f64;
            prop_assert!(solved < rule * 4.0);
            *per_sub
                .entry(e.dimension)
                .or_default()
                .entry(e.sub_dimension.map_or("-".into(), |s| s.code().to_string()))
                .or_default() += 1;
        }
        for counts in per_sub.values() {
            let hi = counts.values().max().unwrap();
            let lo = counts.values().min().unwrap();
            prop_assert!(hi - lo <= 1, "{counts:?}");
        }
        let again = filter_and_balance(manifest, &outcomes, rule, seed).unwrap();
        prop_assert_eq!(again.entries, kept.entries);
    }

    #[test]
    fn vector_masks_match_active_dimensions(bits in 0u8..128) {
        let dims: Vec<Dimension> = Dimension::ALL.iter().copied().filter(|d| bits & (1 << d.index()) != 0).collect();
        let v = PerturbationVector::from_dimensions(&dims).unwrap();
        prop_assert_eq!(v.mask(), bits);
        prop_assert_eq!(v.count(), dims.len());
        prop_assert_eq!(v.active().collect::<Vec<_>>(), dims);
    }
}
