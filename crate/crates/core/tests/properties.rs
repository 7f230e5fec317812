use std::collections::BTreeSet;

use proptest::prelude::*;

use climb3d::continual::{
    build_supervision, compute_class_weights, FrequencyTable, PseudoCandidates, PseudoItem,
    PseudoLabelSet, PseudoOrigin, TargetOrigin, WeightRange, WeightTable,
};
use climb3d::eval::ap::{average_precision, mask_iou, Detection, GroundTruth};
use climb3d::model::{hungarian_match, Model};
use climb3d::scenegen::{filter_labels, generate_scene_range, GeneratorSpec};
use climb3d::splits::{build_split, build_split_a, SplitKind};
use climb3d::types::CatalogEntry;
use climb3d::{validate_scene, BitMask, ClassCatalog, ClassId, Dataset, InstanceLabel, Point, Scene};

fn ids(v: impl IntoIterator<Item = u32>) -> BTreeSet<ClassId> {
    v.into_iter().map(ClassId).collect()
}

fn arb_mask(len: usize) -> impl Strategy<Value = BitMask> {
    prop::collection::vec(any::<bool>(), len).prop_map(|b| BitMask::from_bools(&b))
}

fn arb_point() -> impl Strategy<Value = Point> {
    (
        -5.0..15.0f64,
        -5.0..15.0f64,
        -5.0..15.0f64,
        0.0..=1.0f64,
        0.0..=1.0f64,
        0.0..=1.0f64,
    )
        .prop_map(|(x, y, z, r, g, b)| Point { x, y, z, r, g, b })
}

/// A scene whose instances come from a random per-point assignment, so the
/// masks are disjoint by construction. Some masks may be empty.
fn arb_scene() -> impl Strategy<Value = Scene> {
    (1usize..40, 0usize..5).prop_flat_map(|(m, k)| {
        (
            prop::collection::vec(arb_point(), m),
            prop::collection::vec(0..=k, m),
            prop::collection::vec(0u32..6, k),
            "[a-z0-9]{1,8}",
        )
            .prop_map(move |(points, owner, classes, scene_id)| {
                let instances = classes
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| InstanceLabel {
                        mask: BitMask::from_indices(
                            m,
                            owner.iter().enumerate().filter(|(_, &o)| o == i + 1).map(|(p, _)| p),
                        ),
                        class_id: ClassId(c),
                    })
                    .collect();
                Scene {
                    points,
                    instances,
                    scene_id,
                }
            })
    })
}

fn arb_catalog() -> impl Strategy<Value = ClassCatalog> {
    prop::collection::vec((0.01..100.0f64, 0u32..5), 1..16).prop_map(|rows| {
        ClassCatalog::new(
            rows.into_iter()
                .enumerate()
                .map(|(i, (w, g))| CatalogEntry {
                    class_id: ClassId(i as u32),
                    name: format!("class-{i}"),
                    semantic_group_id: g,
                    target_frequency_weight: w,
                })
                .collect(),
        )
        .unwrap()
    })
}

fn json_round_trip<T>(value: &T) -> (String, String)
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let first = serde_json::to_string(value).unwrap();
    let decoded: T = serde_json::from_str(&first).unwrap();
    (first, serde_json::to_string(&decoded).unwrap())
}

proptest! {
    #[test]
    fn scene_catalog_dataset_round_trip(scene in arb_scene(), catalog in arb_catalog()) {
        let (a, b) = json_round_trip(&scene);
        prop_assert_eq!(a, b);
        let (a, b) = json_round_trip(&catalog);
        prop_assert_eq!(a, b);
        let visible = scene.instances.iter().map(|i| i.class_id).collect();
        let dataset = Dataset { scenes: vec![scene.clone(), scene], visible_classes: visible };
        let (a, b) = json_round_trip(&dataset);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mask_bytes_round_trip(mask in (0usize..200).prop_flat_map(arb_mask)) {
        let bytes = mask.to_le_bytes();
        prop_assert_eq!(BitMask::from_le_bytes(mask.len(), &bytes).unwrap(), mask);
    }

    #[test]
    fn validation_ignores_instance_order(
        scene in arb_scene(),
        extra in (0usize..40).prop_flat_map(arb_mask),
        seed in any::<u64>(),
    ) {
        // Add one possibly overlapping or mis-sized mask to exercise violations.
        let mut scene = scene;
        scene.instances.push(InstanceLabel { mask: extra, class_id: ClassId(0) });
        let before = validate_scene(&scene);
        let mut shuffled = scene.clone();
        let n = shuffled.instances.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.instances.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(validate_scene(&shuffled), before);
    }

    #[test]
    fn splits_partition_the_catalog(
        catalog in arb_catalog(),
        phases in 1usize..6,
        seed in any::<u64>(),
    ) {
        for kind in [SplitKind::Frequency, SplitKind::Semantic, SplitKind::Random] {
            match build_split(&catalog, kind, phases, seed) {
                Ok(plan) => {
                    prop_assert_eq!(plan.num_phases(), phases);
                    plan.check(&catalog).unwrap();
                }
                Err(_) => {
                    let groups: BTreeSet<u32> =
                        catalog.entries().iter().map(|e| e.semantic_group_id).collect();
                    let feasible = match kind {
                        SplitKind::Semantic => groups.len() >= phases,
                        _ => catalog.len() >= phases,
                    };
                    prop_assert!(!feasible, "{kind:?} failed on a feasible input");
                }
            }
        }
    }

    #[test]
    fn split_a_ignores_catalog_order(catalog in arb_catalog(), phases in 1usize..4, seed in any::<u64>()) {
        prop_assume!(phases <= catalog.len());
        let mut entries = catalog.entries().to_vec();
        let mut s = seed;
        for i in (1..entries.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            entries.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted = ClassCatalog::new(entries).unwrap();
        prop_assert_eq!(
            build_split_a(&permuted, phases).unwrap(),
            build_split_a(&catalog, phases).unwrap()
        );
    }

    #[test]
    fn filter_labels_is_idempotent_and_composes(
        a in prop::collection::btree_set(0u32..12, 0..12),
        b in prop::collection::btree_set(0u32..12, 0..12),
    ) {
        let mut spec = GeneratorSpec::default_benchmark(3);
        spec.points_per_scene = 256;
        let data = generate_scene_range(&spec, 0, 3).unwrap();
        let (a, b) = (ids(a), ids(b));
        let once = filter_labels(&data, &a);
        prop_assert_eq!(&filter_labels(&once, &a), &once);
        let both: BTreeSet<ClassId> = a.intersection(&b).copied().collect();
        let chained = filter_labels(&once, &b);
        let direct = filter_labels(&data, &both);
        prop_assert_eq!(chained.scenes, direct.scenes);
        for scene in &once.scenes {
            prop_assert!(scene.instances.iter().all(|i| a.contains(&i.class_id)));
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        (a, b) in (0usize..64).prop_flat_map(|n| (arb_mask(n), arb_mask(n))),
    ) {
        let ab = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.any() {
            prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn ap_depends_only_on_score_ranking(
        dets in prop::collection::vec((0usize..3, 0u32..16, 0.0..1.0f64), 0..20),
        gts in prop::collection::vec((0usize..3, 0u32..16), 1..8),
        threshold in 0.1..0.9f64,
    ) {
        // Masks over 4 points, encoded by the low bits of the draw.
        let mask = |bits: u32| BitMask::from_indices(4, (0..4).filter(|i| bits >> i & 1 == 1));
        let gt: Vec<GroundTruth> = gts
            .iter()
            .map(|&(scene, bits)| GroundTruth { scene, mask: mask(bits), class_id: ClassId(0) })
            .collect();
        // Distinct scores so the ranking is unambiguous.
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<Detection> {
            dets.iter()
                .enumerate()
                .map(|(i, &(scene, bits, s))| Detection {
                    scene,
                    mask: mask(bits),
                    class_id: ClassId(0),
                    score: f(s + i as f64 * 1e-9),
                })
                .collect()
        };
        let base = average_precision(&make(&|s| s), &gt, ClassId(0), threshold).unwrap().unwrap();
        let warped = average_precision(&make(&|s| (3.0 * s).exp() - 7.0), &gt, ClassId(0), threshold)
            .unwrap()
            .unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert_eq!(base, warped);
    }

    #[test]
    fn weights_decrease_with_frequency(
        counts in prop::collection::vec(0u32..50, 2..10),
        eps in 1e-9..1e-3f64,
    ) {
        let all = ids(0..counts.len() as u32);
        let old = ids(0..(counts.len() as u32 / 2).max(1));
        let current: BTreeSet<ClassId> = all.difference(&old).copied().collect();
        let mut table = FrequencyTable::new(&old, &current);
        for (i, &n) in counts.iter().enumerate() {
            *table.counts.get_mut(&ClassId(i as u32)).unwrap() = n as f64;
        }
        let w = compute_class_weights(&table, eps, WeightRange::AllSeen, 1e3).unwrap();
        prop_assert_eq!(w.weights.keys().copied().collect::<BTreeSet<_>>(), all);
        let old_w = compute_class_weights(&table, eps, WeightRange::OldOnly, 1e3).unwrap();
        prop_assert_eq!(old_w.weights.keys().copied().collect::<BTreeSet<_>>(), old);
        for (i, &ni) in counts.iter().enumerate() {
            let wi = w.get(ClassId(i as u32)).unwrap();
            prop_assert!(wi > 0.0 && wi.is_finite());
            for (j, &nj) in counts.iter().enumerate() {
                if ni < nj {
                    prop_assert!(wi >= w.get(ClassId(j as u32)).unwrap());
                }
            }
        }
        let normalized = w.normalized_to_mean_one();
        let mean = normalized.weights.values().sum::<f64>() / normalized.weights.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn supervision_order_and_dedup(
        plg_q in prop::collection::btree_set(0usize..16, 0..8),
        cbr_q in prop::collection::btree_set(0usize..16, 0..8),
        gt_n in 0usize..4,
    ) {
        let item = |q: usize| PseudoItem {
            mask: BitMask::from_indices(16, [q]),
            class_id: ClassId(q as u32 % 3),
            score: 0.5,
            source_query: q,
        };
        let plg = PseudoLabelSet { items: plg_q.iter().map(|&q| item(q)).collect(), origin: PseudoOrigin::Plg };
        let cbr = PseudoLabelSet { items: cbr_q.iter().map(|&q| item(q)).collect(), origin: PseudoOrigin::Cbr };
        let gt: Vec<InstanceLabel> = (0..gt_n)
            .map(|i| InstanceLabel { mask: BitMask::from_indices(16, [i]), class_id: ClassId(5) })
            .collect();
        let out = build_supervision(&gt, &plg, &cbr);
        let rank = |o: TargetOrigin| match o { TargetOrigin::Gt => 0, TargetOrigin::Plg => 1, TargetOrigin::Cbr => 2 };
        prop_assert!(out.items.windows(2).all(|w| rank(w[0].origin) <= rank(w[1].origin)));
        let sources: Vec<usize> = out.items.iter().filter_map(|t| t.source_query).collect();
        let unique: BTreeSet<usize> = sources.iter().copied().collect();
        prop_assert_eq!(sources.len(), unique.len());
        prop_assert_eq!(unique, plg_q.union(&cbr_q).copied().collect::<BTreeSet<_>>());
        prop_assert_eq!(out.count(TargetOrigin::Gt), gt_n);
    }
}

fn small_scene(seed: u64) -> Scene {
    let mut spec = GeneratorSpec::default_benchmark(seed);
    spec.points_per_scene = 128;
    generate_scene_range(&spec, 0, 1).unwrap().scenes.remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_well_formed(seed in any::<u64>(), q in 1usize..12, d in 1usize..10) {
        let scene = small_scene(seed);
        let model = Model::new(d, q, ids(0..5).into_iter().collect(), seed);
        let pred = model.forward(&scene).unwrap();
        prop_assert_eq!(pred.num_queries(), q);
        for k in 0..q {
            let sum: f64 = pred.class_probs(k).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(pred.mask_scores(k).iter().all(|&s| s > 0.0 && s < 1.0));
            prop_assert!((0.0..=1.0).contains(&pred.confidence[k]));
        }
        prop_assert_eq!(model.forward(&scene).unwrap(), pred);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), q in 1usize..8, d in 1usize..8, heads in 0u32..6) {
        let model = Model::new(d, q, ids(0..heads).into_iter().collect(), seed);
        let bytes = model.to_checkpoint_bytes();
        let back = Model::from_checkpoint_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_checkpoint_bytes(), bytes);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn pseudo_selection_respects_bounds(seed in any::<u64>(), k in 0usize..10, min_score in 0.0..0.6f64) {
        let scene = small_scene(seed);
        let old = ids(0..4);
        let model = Model::new(6, 12, old.iter().copied().collect(), seed ^ 1);
        let pred = model.forward(&scene).unwrap();
        let candidates = PseudoCandidates::from_prediction(&pred, min_score);
        let plg = candidates.top_k(k);
        prop_assert!(plg.len() <= k.min(candidates.len()));
        prop_assert!(plg.items.windows(2).all(|w| w[0].score >= w[1].score));
        for item in &plg.items {
            prop_assert!(old.contains(&item.class_id));
            prop_assert!(item.score.is_finite() && item.score >= min_score);
            prop_assert!(item.mask.any());
        }
        // Uniform weights reproduce the confidence ranking.
        let uniform = WeightTable::uniform(old.iter().copied());
        let cbr = candidates.reweighted_top_k(&uniform, k).unwrap();
        let q = |s: &PseudoLabelSet| s.items.iter().map(|i| i.source_query).collect::<Vec<_>>();
        prop_assert_eq!(q(&cbr), q(&plg));
    }

    #[test]
    fn point_permutation_permutes_mask_scores(seed in any::<u64>()) {
        let scene = small_scene(seed);
        let m = scene.num_points();
        let perm: Vec<usize> = (0..m).map(|i| (i * 37 + 11) % m).collect();
        let permuted = Scene {
            points: perm.iter().map(|&i| scene.points[i]).collect(),
            instances: Vec::new(),
            scene_id: scene.scene_id.clone(),
        };
        let model = Model::new(5, 6, ids(0..3).into_iter().collect(), seed);
        let a = model.forward(&scene).unwrap();
        let b = model.forward(&permuted).unwrap();
        for q in 0..6 {
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b.mask_scores(q)[j], a.mask_scores(q)[i]);
            }
        }
    }

    #[test]
    fn matching_is_injective(seed in any::<u64>(), q in 1usize..10) {
        let scene = small_scene(seed);
        let classes: Vec<ClassId> = scene.instances.iter().map(|i| i.class_id).collect::<BTreeSet<_>>().into_iter().collect();
        let model = Model::new(4, q, classes, seed);
        let pred = model.forward(&scene).unwrap();
        let targets = climb3d::continual::AugmentedTargets::from_gt(&scene.instances);
        match hungarian_match(&pred, &targets, Default::default()) {
            Ok(a) => {
                prop_assert_eq!(a.pairs.len(), targets.len());
                let queries: BTreeSet<usize> = a.pairs.iter().map(|p| p.0).collect();
                prop_assert_eq!(queries.len(), targets.len());
                prop_assert!(a.pairs.iter().enumerate().all(|(i, p)| p.1 == i && p.0 < q));
            }
            Err(_) => prop_assert!(targets.len() > q),
        }
    }
}
