use pmqds::diffusion::sample_limit_paths;
use pmqds::green_kubo::{Observable, VarianceCurve};
use pmqds::mc::{birkhoff_ensemble, InitialMeasure, PathPlan};
use pmqds::stats::mean_sd;
use pmqds::{iterate_sequential, Curve, CurveKind, Map, Row};
use proptest::prelude::*;

proptest! {
    #[test]
    fn inverse_branches_invert(alpha in 0.0f64..0.99, y in 0.0f64..=1.0) {
        let p = Map::new(alpha).unwrap();
        let b = p.inverse_branches(y).unwrap();
        prop_assert!(b.left < 0.5 + 1e-15 && b.right >= 0.5);
        prop_assert!((p.map(b.left) - y).abs() <= 4.0 * f64::EPSILON);
        prop_assert!((p.map(b.right) - y).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn map_stays_in_unit_interval(alpha in 0.0f64..0.99, x in 0.0f64..=1.0) {
        let y = Map::new(alpha).unwrap().map(x);
        prop_assert!((0.0..=1.0).contains(&y));
    }

    #[test]
    fn equipartition_stays_in_curve_range(low in 0.0f64..0.2, span in 0.0f64..0.2, n in 1usize..300) {
        let curve = Curve::new(CurveKind::Cosine { low, high: low + span }, 1.0, 0.45).unwrap();
        let row = Row::equipartition(&curve, n).unwrap();
        for k in 0..=n {
            prop_assert!(row.alpha(k) >= low - 1e-15 && row.alpha(k) <= low + span + 1e-15);
        }
    }
}

#[test]
fn trajectory_follows_row() {
    let row = Row::from_entries(vec![0.0, 0.1, 0.3, 0.0], 0.4).unwrap();
    let tr = iterate_sequential(&row, 0.2, 3).unwrap();
    let mut x = 0.2;
    for (j, v) in tr.values.iter().enumerate().skip(1) {
        x = Map::new(row.alpha(j)).unwrap().map(x);
        assert_eq!(*v, x);
    }
    assert!(iterate_sequential(&row, 0.2, 4).is_err());
}

#[test]
fn ensembles_are_seed_deterministic() {
    let row = Row::constant(0.2, 64, 0.25).unwrap();
    let plan = PathPlan::new(64, &[0.5, 1.0]).unwrap();
    let f = Observable::identity();
    let a = birkhoff_ensemble(&f, &row, &InitialMeasure::Lebesgue, 50, &plan, 7).unwrap();
    let b = birkhoff_ensemble(&f, &row, &InitialMeasure::Lebesgue, 50, &plan, 7).unwrap();
    let c = birkhoff_ensemble(&f, &row, &InitialMeasure::Lebesgue, 50, &plan, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn limit_paths_have_the_right_variance() {
    let sigma = VarianceCurve::constant(0.25).unwrap();
    let e = sample_limit_paths(&sigma, &[0.5, 1.0], 40_000, 3).unwrap();
    let (_, sd) = mean_sd(&e.column(1));
    // SE of the sample variance is about 0.25 * sqrt(2 / 40000) = 1.8e-3.
    assert!((sd * sd - 0.25).abs() < 6e-3, "{}", sd * sd);
}
