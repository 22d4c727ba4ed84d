use std::f64::consts::PI;

use proptest::prelude::*;
use reflected_spde::coefficients::CoefficientSet;
use reflected_spde::ratefn::{rate_function, sample_controls, sample_level_set, RateOptions};
use reflected_spde::solver::solve_skeleton;
use reflected_spde::{Control, SchemeConfig, SpatialGrid, TimeMesh};

fn setup() -> (CoefficientSet, SchemeConfig) {
    let sc = SchemeConfig::new(
        SpatialGrid::new(7).unwrap(),
        TimeMesh::new(1.0, 40).unwrap(),
    );
    (CoefficientSet::zero(1).with_constant_sigma(1.0), sc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_controls_respect_the_bound(m in 0.0f64..5.0, blocks in 1usize..6, seed in any::<u64>()) {
        for h in sample_controls(1.0, 2, blocks, m, 20, seed).unwrap() {
            prop_assert!(h.energy() <= m * (1.0 + 1e-12));
        }
    }

    #[test]
    fn level_set_members_are_skeletons_of_their_controls(m in 0.0f64..2.0, seed in any::<u64>()) {
        let (cs, sc) = setup();
        let u0 = sc.grid.field_from(|x| (PI * x).sin());
        let set = sample_level_set(&cs, &u0, m, 4, seed, 3, &sc).unwrap();
        for (h, path) in &set.members {
            prop_assert!(h.energy() <= m * (1.0 + 1e-12));
            let again = solve_skeleton(&cs, &u0, h, &sc).unwrap();
            prop_assert_eq!(again.last(), path.last());
        }
    }
}

#[test]
fn lambda_hat_is_the_energy_of_the_minimizer_and_below_the_generator() {
    let (cs, sc) = setup();
    let u0 = sc.grid.field_from(|x| (PI * x).sin());
    let opt = RateOptions {
        blocks: 4,
        ..Default::default()
    };
    for values in [vec![0.8], vec![0.5, -0.5], vec![1.0, 0.0, -1.0, 0.5]] {
        let h = Control::new(1.0, 1, values).unwrap();
        let target = solve_skeleton(&cs, &u0, &h, &sc).unwrap().states().to_vec();
        let r = rate_function(&cs, &u0, &target, &sc, &opt).unwrap();
        assert_eq!(r.lambda_hat, r.h_star.energy());
        assert!(r.residual >= 0.0);
        assert!(r.lambda_hat >= 0.0);
        assert!(
            r.lambda_hat <= h.energy() * 1.01 + 1e-9,
            "{} vs {}",
            r.lambda_hat,
            h.energy()
        );
    }
}
