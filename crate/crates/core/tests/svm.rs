mod common;

use common::oracle::Instance;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reachkit::kernel::KernelSpec;
use reachkit::labelling::{Label, TrainingSet};
use reachkit::svm::{decrement_point, fit, increment_point, SvmModel, SvmModelFile, VectorStatus};

fn training(inst: &Instance) -> TrainingSet<f64> {
    TrainingSet::from_labelled(inst.points.clone(), &inst.labels, 1e-6).unwrap()
}

fn fit_instance(inst: &Instance) -> SvmModel<f64> {
    fit(
        &training(inst),
        KernelSpec::gaussian(inst.sigma).unwrap(),
        inst.c1,
        inst.c2,
    )
    .unwrap()
}

fn probes(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])
        .collect()
}

fn assert_kkt(model: &SvmModel<f64>) {
    let report = model.margins();
    assert!(
        report.max_violation < 1e-6,
        "KKT violation {}",
        report.max_violation
    );
    assert!(
        model.equality_residual().abs() < 1e-9,
        "Σyα = {}",
        model.equality_residual()
    );
    for (i, l) in model.labels().iter().enumerate() {
        let a = model.alpha()[i];
        match l {
            Label::Interior => assert!(a >= 0.0),
            Label::Exterior => assert!((0.0..=model.c1()).contains(&a)),
            Label::Boundary => assert!(a >= -model.c2()),
        }
    }
}

#[test]
fn zero_coefficients_give_constant_offset() {
    let t = TrainingSet::from_labelled(
        vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        &[Label::Interior, Label::Exterior],
        1e-6,
    )
    .unwrap();
    let m = SvmModel::from_coefficients(KernelSpec::default(), 1.0, 1.0, &t, vec![0.0, 0.0], 0.5)
        .unwrap();
    for x in probes(1, 10) {
        assert_eq!(m.decision(&x), 0.5);
    }
}

#[test]
fn two_point_seed_is_hard_margin() {
    let t = TrainingSet::from_labelled(
        vec![vec![0.0], vec![1.0]],
        &[Label::Interior, Label::Exterior],
        1e-6,
    )
    .unwrap();
    let m = fit(&t, KernelSpec::gaussian(1.0).unwrap(), 10.0, 10.0).unwrap();
    let alpha = 1.0 / (1.0 - (-1.0f64).exp());
    assert!((m.alpha()[0] - alpha).abs() < 1e-12);
    assert!((m.alpha()[1] - alpha).abs() < 1e-12);
    assert!((m.decision(&[0.0]) - 1.0).abs() < 1e-12);
    assert!((m.decision(&[1.0]) + 1.0).abs() < 1e-12);
    assert!(m.b().abs() < 1e-12);
}

#[test]
fn matches_brute_force_dual() {
    for seed in 0..10u64 {
        let m = 6 + (seed as usize % 6);
        let inst = Instance::random(seed, m);
        let exact = inst.solve();
        let model = fit_instance(&inst);
        assert_kkt(&model);
        assert!(
            (model.dual_objective() - exact.objective).abs() < 1e-6,
            "seed {seed}: {} vs {}",
            model.dual_objective(),
            exact.objective
        );
        if exact.b.is_finite() {
            for x in probes(100 + seed, 100) {
                let d = (model.decision(&x) - inst.decision(&exact, &x)).abs();
                assert!(d < 1e-5, "seed {seed}: decision differs by {d}");
            }
        }
    }
}

#[test]
fn solution_does_not_depend_on_insertion_order() {
    let inst = Instance::random(42, 10);
    let model = fit_instance(&inst);
    let mut reversed =
        SvmModel::new(KernelSpec::gaussian(inst.sigma).unwrap(), inst.c1, inst.c2).unwrap();
    for i in (0..10).rev() {
        reversed
            .insert(inst.points[i].clone(), inst.labels[i])
            .unwrap();
    }
    for x in probes(7, 50) {
        assert!((model.decision(&x) - reversed.decision(&x)).abs() < 1e-8);
    }
}

#[test]
fn deep_interior_point_is_ignored() {
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for k in 0..8 {
        let a = k as f64 * std::f64::consts::TAU / 8.0;
        for (r, l) in [
            (0.3, Label::Interior),
            (0.6, Label::Interior),
            (1.0, Label::Boundary),
            (1.4, Label::Exterior),
        ] {
            pts.push(vec![r * a.cos(), r * a.sin()]);
            labels.push(l);
        }
    }
    let t = TrainingSet::from_labelled(pts, &labels, 1e-6).unwrap();
    let model = fit(&t, KernelSpec::gaussian(0.5).unwrap(), 10.0, 10.0).unwrap();
    let deep = (0..=40)
        .flat_map(|i| (0..=40).map(move |j| vec![-0.4 + 0.02 * i as f64, -0.4 + 0.02 * j as f64]))
        .max_by(|a, b| model.decision(a).total_cmp(&model.decision(b)))
        .unwrap();
    assert!(model.decision(&deep) > 1.0);
    let grown = increment_point(&model, deep.clone(), Label::Interior).unwrap();
    let c = model.len();
    assert_eq!(grown.vector_status(c), VectorStatus::Ignored);
    assert_eq!(grown.alpha()[..c], model.alpha()[..]);
    assert_eq!(grown.b(), model.b());
}

#[test]
fn increment_then_decrement_round_trips() {
    for seed in 0..5u64 {
        let inst = Instance::random(200 + seed, 10);
        let model = fit_instance(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let label = [Label::Interior, Label::Exterior, Label::Boundary][seed as usize % 3];
        let grown = increment_point(&model, x, label).unwrap();
        assert_kkt(&grown);
        let back = decrement_point(&grown, grown.len() - 1).unwrap();
        assert_kkt(&back);
        for (i, p) in inst.points.iter().enumerate() {
            let d = (back.decision(p) - model.decision(p)).abs();
            assert!(d < 1e-7, "seed {seed} point {i}: {d}");
        }
    }
}

#[test]
fn removing_ignored_vectors_changes_nothing() {
    let mut found = 0;
    for seed in 0..20u64 {
        let inst = Instance::random(300 + seed, 12);
        let model = fit_instance(&inst);
        for i in 0..model.len() {
            if model.vector_status(i) != VectorStatus::Ignored {
                continue;
            }
            found += 1;
            let smaller = decrement_point(&model, i).unwrap();
            for x in probes(seed, 30) {
                assert!((smaller.decision(&x) - model.decision(&x)).abs() < 1e-9);
            }
        }
    }
    assert!(found > 0);
}

#[test]
fn removing_error_vector_keeps_kkt() {
    let mut found = false;
    for seed in 0..30u64 {
        let inst = Instance::random(400 + seed, 12);
        let model = fit_instance(&inst);
        let err = (0..model.len()).find(|&i| {
            model.labels()[i] == Label::Exterior && model.vector_status(i) == VectorStatus::Error
        });
        if let Some(i) = err {
            found = true;
            assert_kkt(&decrement_point(&model, i).unwrap());
        }
    }
    assert!(found);
}

#[test]
fn hard_margin_limit_has_no_exterior_errors() {
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for k in 0..8 {
        let a = k as f64 * std::f64::consts::TAU / 8.0;
        pts.push(vec![0.4 * a.cos(), 0.4 * a.sin()]);
        labels.push(Label::Interior);
        pts.push(vec![1.2 * a.cos(), 1.2 * a.sin()]);
        labels.push(Label::Exterior);
        pts.push(vec![0.8 * a.cos(), 0.8 * a.sin()]);
        labels.push(Label::Boundary);
    }
    let t = TrainingSet::from_labelled(pts.clone(), &labels, 1e-6).unwrap();
    let model = fit(&t, KernelSpec::gaussian(0.5).unwrap(), 1e6, 1e6).unwrap();
    assert_kkt(&model);
    for &i in &t.exterior {
        assert!(!model.classify(&pts[i]));
    }
}

#[test]
fn status_rules() {
    for seed in 0..10u64 {
        let inst = Instance::random(500 + seed, 12);
        let model = fit_instance(&inst);
        for i in 0..model.len() {
            let a = model.alpha()[i];
            let s = model.vector_status(i);
            match model.labels()[i] {
                Label::Boundary => {
                    assert_ne!(s, VectorStatus::Ignored);
                    assert_eq!(s == VectorStatus::Error, a == -model.c2());
                }
                Label::Exterior if a == model.c1() => assert_eq!(s, VectorStatus::Error),
                _ if a == 0.0 => assert_eq!(s, VectorStatus::Ignored),
                _ => assert_eq!(s, VectorStatus::Support),
            }
        }
    }
}

#[test]
fn margin_regimes() {
    let mut seen = [false; 3];
    for seed in 0..20u64 {
        let inst = Instance::random(600 + seed, 12);
        let model = fit_instance(&inst);
        let g = model.margins().g;
        for i in 0..model.len() {
            let a = model.alpha()[i];
            match model.labels()[i] {
                Label::Interior if a > 0.0 => {
                    seen[0] = true;
                    assert!(g[i].abs() < 1e-8);
                }
                Label::Exterior if a == model.c1() => {
                    seen[1] = true;
                    assert!(g[i] <= 1e-8);
                }
                Label::Boundary if a > -model.c2() => {
                    seen[2] = true;
                    assert!(g[i].abs() < 1e-8);
                }
                _ => {}
            }
        }
        assert!(model.margin_drift() < 1e-8);
    }
    assert_eq!(seen, [true; 3]);
}

#[test]
fn classification_of_training_points() {
    for seed in 0..10u64 {
        let inst = Instance::random(700 + seed, 12);
        let model = fit_instance(&inst);
        for (i, p) in inst.points.iter().enumerate() {
            match inst.labels[i] {
                Label::Interior => assert!(model.decision(p) >= 1.0 - 1e-6),
                Label::Boundary => assert!(model.decision(p) >= -1e-6),
                Label::Exterior => {
                    if model.margins().g[i].abs() < 1e-9
                        && model.vector_status(i) == VectorStatus::Support
                    {
                        assert!(!model.classify(p));
                    }
                }
            }
        }
    }
}

#[test]
fn json_round_trip_reattaches_training_set() {
    let inst = Instance::random(800, 10);
    let t = training(&inst);
    let mut model = fit_instance(&inst);
    model.set_training_ref("training_set.json");
    let text = serde_json::to_string(&model.to_file()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["kernel", "C1", "C2", "alpha", "b", "status", "training_ref"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let file: SvmModelFile<f64> = serde_json::from_str(&text).unwrap();
    let back = SvmModel::from_file(file, &t).unwrap();
    for x in probes(9, 20) {
        assert_eq!(back.decision(&x), model.decision(&x));
    }
    let grown = increment_point(&back, vec![0.1, 0.2], Label::Boundary).unwrap();
    assert_kkt(&grown);
}

#[test]
fn decision_grid_csv() {
    let inst = Instance::random(900, 8);
    let model = fit_instance(&inst);
    let grid =
        reachkit::discretization::GridSpec::new(0.5, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let mut buf = Vec::new();
    model.write_decision_grid(&grid, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,decision");
    assert_eq!(lines.len(), 1 + 25);
}

#[test]
fn rejects_bad_parameters() {
    assert!(SvmModel::new(KernelSpec::<f64>::default(), 0.0, 1.0).is_err());
    let t = TrainingSet::from_labelled(vec![vec![0.0]], &[Label::Interior], 1e-6).unwrap();
    assert!(fit(&t, KernelSpec::default(), 1.0, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn invariants_hold_after_every_step(seed in 0u64..10_000, m in 3usize..16, removals in 0usize..4) {
        let inst = Instance::random(seed, m);
        let mut model = SvmModel::new(KernelSpec::gaussian(inst.sigma).unwrap(), inst.c1, inst.c2).unwrap();
        for i in 0..m {
            model.insert(inst.points[i].clone(), inst.labels[i]).unwrap();
            prop_assert!(model.equality_residual().abs() < 1e-9);
            prop_assert!(model.margins().max_violation < 1e-6);
            prop_assert!(model.margin_drift() < 1e-8);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..removals.min(model.len() - 1) {
            let k = rng.gen_range(0..model.len());
            model.remove(k).unwrap();
            prop_assert!(model.equality_residual().abs() < 1e-9);
            prop_assert!(model.margins().max_violation < 1e-6);
        }
    }
}
