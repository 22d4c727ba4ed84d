use proptest::prelude::*;
use reflected_spde::coefficients::CoefficientSet;
use reflected_spde::export::{read_path_binary, write_path_binary, write_path_csv, PathDump};
use reflected_spde::noise::sample_noise;
use reflected_spde::solver::solve;
use reflected_spde::{SchemeConfig, SpatialGrid, TimeMesh};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn binary_dump_round_trips(seed in any::<u64>(), m in 2usize..12, steps in 1usize..40) {
        let sc = SchemeConfig::new(SpatialGrid::new(m).unwrap(), TimeMesh::new(0.2, steps).unwrap());
        let cs = CoefficientSet::zero(1).with_f(|_, _, _| -1.0).with_constant_sigma(1.0);
        let u0 = sc.grid.field_from(|x| x * (1.0 - x));
        let p = solve(&cs, &u0, Some(&sample_noise(seed, sc.mesh, 1).unwrap()), None, &sc).unwrap();
        let mut bytes = Vec::new();
        write_path_binary(&p, &mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 8 + 8 + 8 * ((steps + 1) * m + steps * m));
        prop_assert_eq!(read_path_binary(bytes.as_slice()).unwrap(), PathDump::from_path(&p));
        prop_assert!(read_path_binary(&bytes[..bytes.len() - 1]).is_err());

        let mut csv = Vec::new();
        write_path_csv(&p, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        prop_assert_eq!(text.lines().count(), steps + 2);
        let last: Vec<f64> = text.lines().last().unwrap().split(',').skip(1).map(|s| s.parse().unwrap()).collect();
        prop_assert_eq!(last.as_slice(), p.last().values());
    }
}
