use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reachkit::dfog::DistanceField;
use reachkit::geometry::dist_point_set;
use reachkit::kernel::KernelSpec;
use reachkit::labelling::{label, label_with};
use reachkit::pipeline::{
    compute_field, compute_reference, omega_for, run_rho, ExperimentConfig, Reference,
};
use reachkit::svm::fit;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/bilinear.json"
    ))
    .unwrap();
    cfg.outputs = std::env::temp_dir().join("reachkit-pipeline-test");
    cfg
}

fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| compute_reference(&config()).unwrap())
}

fn field_half(ball_check: bool) -> DistanceField<f64> {
    let mut cfg = config();
    cfg.ball_check = ball_check;
    let omega = omega_for(&cfg, reference(), 0.5).unwrap();
    compute_field(&cfg, &omega).unwrap()
}

#[test]
fn boundary_endpoints_lie_on_the_reference() {
    let field = field_half(false);
    let training = label(&field, 1e-6).unwrap();
    assert!(!training.boundary.is_empty());
    let rho_ref = config().reference.rho;
    for &i in &training.boundary {
        let d = dist_point_set(&training.points[i], &reference().points).unwrap();
        assert!(
            d <= 2.0 * rho_ref,
            "boundary point {:?} at {d}",
            training.points[i]
        );
    }
}

#[test]
fn unsuppressed_labelling_matches_a_replay() {
    let field = field_half(false);
    assert!(field.suppressed.is_empty());
    let training = label(&field, 1e-6).unwrap();
    training.validate().unwrap();
    // Naive replay: interior or exterior sample, then the endpoint, each kept
    // only if no earlier sample lies within 1e-12.
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut counts = [0usize; 3];
    let mut push = |p: &[f64], k: usize, kept: &mut Vec<Vec<f64>>| {
        if kept.iter().all(|q| dist(q, p) > 1e-12) {
            kept.push(p.to_vec());
            counts[k] += 1;
        }
    };
    for r in &field.results {
        if r.theta <= 1e-6 {
            push(&r.z, 0, &mut kept);
        } else {
            push(&r.z, 1, &mut kept);
            push(&r.x_star, 2, &mut kept);
        }
    }
    assert_eq!(training.points, kept);
    assert_eq!(
        [
            training.interior.len(),
            training.exterior.len(),
            training.boundary.len()
        ],
        counts
    );
    assert!(training.boundary.len() <= training.exterior.len());
    assert_eq!(label(&field, 1e-6).unwrap(), training);
}

#[test]
fn fit_classifies_interior_and_boundary_points_as_reachable() {
    let field = field_half(true);
    let training = label_with(&field, 1e-6, 0.05 * 0.5).unwrap();
    let model = fit(&training, KernelSpec::gaussian(0.8).unwrap(), 15.0, 50.0).unwrap();
    assert!(model.margins().max_violation < 1e-6);
    for &i in training.interior.iter().chain(&training.boundary) {
        assert!(
            model.classify(&training.points[i]),
            "point {:?}",
            training.points[i]
        );
    }
}

#[test]
fn coarse_bilinear_entry_is_accurate() {
    let cfg = config();
    let run = run_rho(&cfg, reference(), 0.5).unwrap();
    let m = &run.metrics;
    assert!(m.d_h_dfog < 0.3, "{m:?}");
    assert!(m.d_h_svm < 0.3, "{m:?}");
    assert!(m.max_violation < 1e-6 && m.equality_residual.abs() < 1e-9);
}

#[test]
fn fit_survives_inflated_distances_without_ball_check() {
    // Inflated values turn reachable grid points into exterior samples right
    // next to boundary endpoints, which makes margin columns nearly dependent.
    let cfg = config();
    let rho = 0.2;
    let omega = omega_for(&cfg, reference(), rho).unwrap();
    let mut field = compute_field(&cfg, &omega).unwrap();
    field.suppressed.clear();
    let count = field.len() / 20;
    for k in sample(&mut ChaCha8Rng::seed_from_u64(1), field.len(), count) {
        let r = &mut field.results[k];
        let radius = r.radius() + rho;
        r.theta = 0.5 * radius * radius;
    }
    let training = label_with(&field, cfg.epsilon, cfg.min_separation * rho).unwrap();
    let p = cfg.params_for(rho);
    let model = fit(&training, p.kernel, p.c1, p.c2).unwrap();
    assert!(
        model.margins().max_violation < 1e-6,
        "{}",
        model.margins().max_violation
    );
    assert!(model.equality_residual().abs() < 1e-9);
}
