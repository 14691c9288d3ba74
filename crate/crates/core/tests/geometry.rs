use std::collections::BTreeSet;

use proptest::prelude::*;
use reachkit::dfog::{DistanceField, MayerResult};
use reachkit::discretization::GridSpec;
use reachkit::geometry::{dfog_pointset, dist_point_set, hausdorff, sublevel_pointset, PointSet};
use reachkit::kernel::KernelSpec;
use reachkit::labelling::{Label, TrainingSet};
use reachkit::svm::SvmModel;

/// Plain double loop over both directions.
fn naive_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = |p: &Vec<f64>, q: &Vec<f64>| {
        p.iter()
            .zip(q)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let semi = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .map(|p| b.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    semi(a, b).max(semi(b, a))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..max)
}

proptest! {
    #[test]
    fn matches_naive_oracle(a in cloud(60), b in cloud(60)) {
        let h = hausdorff(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
        prop_assert!((h - naive_hausdorff(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn triangle_inequality(a in cloud(25), b in cloud(25), c in cloud(25)) {
        let (a, b, c) = (PointSet::new(a), PointSet::new(b), PointSet::new(c));
        let ac = hausdorff(&a, &c).unwrap();
        let ab = hausdorff(&a, &b).unwrap();
        let bc = hausdorff(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn symmetric_and_permutation_invariant(a in cloud(30), b in cloud(30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.shuffle(&mut rng);
        b2.shuffle(&mut rng);
        let h = hausdorff(&PointSet::new(a.clone()), &PointSet::new(b.clone())).unwrap();
        prop_assert_eq!(h, hausdorff(&PointSet::new(b), &PointSet::new(a)).unwrap());
        prop_assert_eq!(h, hausdorff(&PointSet::new(a2), &PointSet::new(b2)).unwrap());
    }

    #[test]
    fn point_added_to_set_has_zero_distance(a in cloud(30), x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut pts = a;
        pts.push(x.clone());
        prop_assert_eq!(dist_point_set(&x, &PointSet::new(pts)).unwrap(), 0.0);
    }

    #[test]
    fn zero_only_for_equal_sets(a in cloud(20), extra in prop::collection::vec(-5.0f64..5.0, 2)) {
        let set = PointSet::new(a.clone());
        let mut dup = a.clone();
        dup.extend(a.iter().cloned());
        prop_assert_eq!(hausdorff(&set, &PointSet::new(dup)).unwrap(), 0.0);
        let mut more = a.clone();
        more.push(extra.clone());
        let h = hausdorff(&set, &PointSet::new(more)).unwrap();
        prop_assert_eq!(h == 0.0, a.contains(&extra));
    }
}

fn constant_model(b: f64) -> SvmModel<f64> {
    let training = TrainingSet::from_labelled(
        vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        &[Label::Interior, Label::Exterior],
        1e-6,
    )
    .unwrap();
    SvmModel::from_coefficients(
        KernelSpec::gaussian(0.5).unwrap(),
        1.0,
        1.0,
        &training,
        vec![0.0, 0.0],
        b,
    )
    .unwrap()
}

#[test]
fn sublevel_of_constant_models() {
    let grid = GridSpec::new(0.5, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let all = sublevel_pointset(&constant_model(0.3), &grid);
    assert!(!all.degenerate);
    assert_eq!(all.set.points, grid.points());
    let none = sublevel_pointset(&constant_model(-0.3), &grid);
    assert!(none.degenerate);
    assert!(none.set.is_empty());
}

fn field(grid: &GridSpec<f64>, endpoint: impl Fn(&[f64]) -> Vec<f64>) -> DistanceField<f64> {
    DistanceField {
        grid: grid.clone(),
        steps: 1,
        results: grid
            .points()
            .into_iter()
            .map(|z| {
                let x = endpoint(&z);
                MayerResult::new(z, x, None, true, 1)
            })
            .collect(),
        suppressed: BTreeSet::new(),
    }
}

#[test]
fn dfog_raster_extremes() {
    let grid = GridSpec::new(0.5, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let fine = grid.with_rho(0.25).unwrap();

    let reached = field(&grid, |z| z.to_vec());
    assert_eq!(dfog_pointset(&reached, &fine).points, fine.points());

    // Every ball B(z, ‖z − (10, 10)‖) covers the whole box.
    let far = field(&grid, |_| vec![10.0, 10.0]);
    assert!(dfog_pointset(&far, &fine).is_empty());
}

#[test]
fn dfog_raster_is_complement_of_balls() {
    // Endpoints all at the origin: the representation is Ω minus balls
    // B(z, ‖z‖), which leaves only the origin.
    let grid = GridSpec::new(0.5, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let f = field(&grid, |_| vec![0.0, 0.0]);
    let raster = dfog_pointset(&f, &grid.with_rho(0.1).unwrap());
    assert_eq!(raster.points, vec![vec![0.0, 0.0]]);
}
