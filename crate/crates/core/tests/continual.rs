use std::collections::BTreeSet;

use climb3d::continual::{
    run_phase, run_scenario, AugmentedTargets, ContinualConfig, ContinualState, Mechanisms, PhaseInput,
    TrainingConfig, WeightTable,
};
use climb3d::eval::{fpp, FppMetric};
use climb3d::model::{train_step, LossConfig, Model};
use climb3d::scenegen::{filter_labels, generate_scene_range, GeneratorSpec};
use climb3d::splits::{build_split_a, ScenarioPlan};
use climb3d::{ClassId, Dataset};

struct Bench {
    plan: ScenarioPlan,
    train: Dataset,
    eval: Dataset,
}

fn bench(seed: u64, scenes: usize, points: usize) -> Bench {
    let mut spec = GeneratorSpec::default_benchmark(seed);
    spec.points_per_scene = points;
    spec.instances_per_scene = (2, 5);
    Bench {
        plan: build_split_a(&spec.catalog, 3).unwrap(),
        train: generate_scene_range(&spec, 0, scenes).unwrap(),
        eval: generate_scene_range(&spec, scenes, 20).unwrap(),
    }
}

fn config(mechanisms: Mechanisms, epochs: usize, seed: u64) -> ContinualConfig {
    ContinualConfig {
        mechanisms: Mechanisms {
            top_k: 4,
            ..mechanisms
        },
        training: TrainingConfig {
            epochs_per_phase: epochs,
            num_queries: 16,
            feature_dim: 12,
            seed,
            ..TrainingConfig::default()
        },
    }
}

fn phase_input<'a>(b: &'a Bench, t: usize, train: &'a Dataset, eval: &'a Dataset) -> PhaseInput<'a> {
    PhaseInput {
        index: t,
        classes: &b.plan.phases[t - 1],
        train,
        eval,
        splits: &b.plan.phases[..t],
    }
}

#[test]
fn first_phase_uses_ground_truth_only() {
    let b = bench(1, 12, 128);
    let cfg = config(Mechanisms::full(), 2, 1);
    let train = filter_labels(&b.train, &b.plan.phases[0]);
    let eval = filter_labels(&b.eval, &b.plan.phases[0]);
    let (state, result) = run_phase(ContinualState::new(&cfg), phase_input(&b, 1, &train, &eval), &cfg).unwrap();
    assert!(state.frozen.is_none());
    for e in &result.epochs {
        assert_eq!(e.plg_targets + e.cbr_targets + e.replay_steps, 0);
        let gt: usize = train.scenes.iter().map(|s| s.instances.len()).sum();
        assert_eq!(e.gt_targets, gt);
    }
    assert_eq!(state.known_classes, b.plan.phases[0]);
    assert_eq!(state.history.len(), 1);
}

#[test]
fn frozen_copy_is_the_previous_model_and_store_grows() {
    let b = bench(2, 12, 128);
    let mut cfg = config(Mechanisms::full(), 2, 2);
    cfg.mechanisms.exemplar_budget = 5;
    let mut state = ContinualState::new(&cfg);
    let mut expected_store = 0;
    for t in 1..=3 {
        let train = filter_labels(&b.train, &b.plan.phases[t - 1]);
        let eval = filter_labels(&b.eval, &b.plan.seen_through(t));
        let before = state.model.to_checkpoint_bytes();
        let (next, result) = run_phase(state, phase_input(&b, t, &train, &eval), &cfg).unwrap();
        if t > 1 {
            assert_eq!(next.frozen.as_ref().unwrap().to_checkpoint_bytes(), before);
        }
        expected_store += 5.min(train.len());
        assert_eq!(next.store.len(), expected_store);
        assert_eq!(result.store_size, expected_store);
        assert_eq!(next.known_classes, b.plan.seen_through(t));
        assert_eq!(next.model.num_heads(), next.known_classes.len() + 1);
        state = next;
    }
}

#[test]
fn relearning_a_class_is_rejected() {
    let b = bench(3, 6, 128);
    let cfg = config(Mechanisms::naive(), 1, 3);
    let train = filter_labels(&b.train, &b.plan.phases[0]);
    let (state, _) = run_phase(ContinualState::new(&cfg), phase_input(&b, 1, &train, &b.eval), &cfg).unwrap();
    assert!(run_phase(state, phase_input(&b, 1, &train, &b.eval), &cfg).is_err());
}

#[test]
fn disabled_switches_reduce_to_naive_training() {
    let b = bench(4, 12, 128);
    let naive = config(Mechanisms::naive(), 2, 4);
    let mut switched_off = config(
        Mechanisms {
            exemplar_budget: 0,
            cbr: false,
            ..Mechanisms::full()
        },
        2,
        4,
    );
    switched_off.mechanisms.top_k = 0;
    let (a, _) = run_scenario(&b.plan, &b.train, &b.eval, &naive).unwrap();
    let (c, _) = run_scenario(&b.plan, &b.train, &b.eval, &switched_off).unwrap();
    assert_eq!(a.model.to_checkpoint_bytes(), c.model.to_checkpoint_bytes());
    assert_eq!(a.history, c.history);
}

#[test]
fn full_stack_forgets_less_than_naive() {
    let b = bench(5, 60, 256);
    let (naive, _) = run_scenario(&b.plan, &b.train, &b.eval, &config(Mechanisms::naive(), 6, 5)).unwrap();
    let (full, _) = run_scenario(&b.plan, &b.train, &b.eval, &config(Mechanisms::full(), 6, 5)).unwrap();
    let first = &b.plan.phases[0];
    let f_naive = fpp(&naive.history, first, FppMetric::Map50).unwrap();
    let f_full = fpp(&full.history, first, FppMetric::Map50).unwrap();
    assert!(f_full < f_naive, "full {f_full} vs naive {f_naive}");
}

#[test]
fn train_step_descends_and_zero_rate_is_inert() {
    let b = bench(6, 1, 128);
    let scene = &b.train.scenes[0];
    let classes: BTreeSet<ClassId> = scene.instances.iter().map(|i| i.class_id).collect();
    let mut model = Model::new(8, 8, classes.iter().copied().collect(), 6);
    let targets = AugmentedTargets::from_gt(&scene.instances);
    let weights = WeightTable::uniform(classes.iter().copied());
    let cfg = LossConfig::default();

    let before = model.to_checkpoint_bytes();
    train_step(&mut model, scene, &targets, &weights, 0.0, &cfg).unwrap();
    assert_eq!(model.to_checkpoint_bytes(), before);

    let first = train_step(&mut model, scene, &targets, &weights, 0.05, &cfg).unwrap().loss;
    let mut last = first;
    for _ in 0..30 {
        last = train_step(&mut model, scene, &targets, &weights, 0.05, &cfg).unwrap().loss;
    }
    assert!(last < first, "loss {first} -> {last}");
}
