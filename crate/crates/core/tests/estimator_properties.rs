use std::f64::consts::PI;

use proptest::prelude::*;
use reflected_spde::coefficients::CoefficientSet;
use reflected_spde::ldp::{estimate_importance, estimate_naive, EventSpec, TubeSense};
use reflected_spde::solver::solve_skeleton;
use reflected_spde::{Control, Field, SchemeConfig, SpatialGrid, TimeMesh};

fn setup() -> (CoefficientSet, Field, SchemeConfig, Vec<Field>) {
    let sc = SchemeConfig::new(
        SpatialGrid::new(7).unwrap(),
        TimeMesh::new(1.0, 50).unwrap(),
    );
    let cs = CoefficientSet::zero(1).with_constant_sigma(1.0);
    let u0 = sc.grid.field_from(|x| (PI * x).sin());
    let flow = solve_skeleton(&cs, &u0, &Control::zeros(1.0, 1, 1).unwrap(), &sc)
        .unwrap()
        .states()
        .to_vec();
    (cs, u0, sc, flow)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_tilt_matches_naive(seed in any::<u64>(), delta in 0.1f64..1.0) {
        let (cs, u0, sc, flow) = setup();
        let ev = EventSpec::new(flow, delta, TubeSense::Hit).unwrap();
        let zero = Control::zeros(1.0, 1, 4).unwrap();
        let a = estimate_naive(&cs, &u0, 0.1, &ev, 100, seed, &sc).unwrap();
        let b = estimate_importance(&cs, &u0, 0.1, &ev, &zero, 100, seed, &sc).unwrap();
        prop_assert_eq!(a.p_hat, b.p_hat);
        prop_assert_eq!(a.std_err, b.std_err);
        prop_assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn shrinking_the_tube_never_raises_p(seed in any::<u64>(), wide in 0.3f64..1.0, frac in 0.1f64..1.0) {
        let (cs, u0, sc, flow) = setup();
        let narrow = wide * frac;
        let p = |d: f64| {
            let ev = EventSpec::new(flow.clone(), d, TubeSense::Hit).unwrap();
            estimate_naive(&cs, &u0, 0.2, &ev, 100, seed, &sc).unwrap()
        };
        let (w, n) = (p(wide), p(narrow));
        prop_assert!(n.p_hat <= w.p_hat);
        for e in [&w, &n] {
            prop_assert!((0.0..=1.0).contains(&e.p_hat));
            prop_assert!(e.std_err >= 0.0);
        }
    }

    #[test]
    fn estimates_are_reproducible(seed in any::<u64>(), tilt in -1.0f64..1.0) {
        let (cs, u0, sc, flow) = setup();
        let ev = EventSpec::new(flow, 0.4, TubeSense::Hit).unwrap();
        let h = Control::constant(1.0, 2, &[tilt]).unwrap();
        let a = estimate_importance(&cs, &u0, 0.1, &ev, &h, 60, seed, &sc).unwrap();
        let b = estimate_importance(&cs, &u0, 0.1, &ev, &h, 60, seed, &sc).unwrap();
        prop_assert_eq!(a, b);
    }
}
