use std::sync::Arc;

use dstau::botau::{self, log_tau};
use dstau::correlators::{self, build_diagonalization, crosscheck};
use dstau::kacmoody::{build_algebra, weight_basis};
use dstau::stringeq::solve_reduced_string_equation;
use proptest::prelude::*;

const NAMES: [&str; 7] = ["A1", "A2", "A3", "B3", "C2", "D4", "G2"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    /// F̄_m is symmetric, rational, and equals the m-th derivative of log τ at t = 0.
    #[test]
    fn generating_functions_match_derivatives(i in 0usize..NAMES.len(), m in 1usize..=2, half in 4u32..=14) {
        let alg = Arc::new(build_algebra(NAMES[i].parse().unwrap()).unwrap());
        let cap = 2 * half;
        let levels = botau::required_levels(&alg, cap).max(correlators::required_levels(&alg, m, cap));
        let gsol = solve_reduced_string_equation(&alg, &weight_basis(&alg).unwrap(), levels).unwrap();
        let tau = log_tau(&gsol, cap).unwrap();
        let series = correlators::correlators(&gsol, m, cap).unwrap();
        prop_assert!(series.is_symmetric());
        let report = crosscheck(&series, &tau).unwrap();
        prop_assert!(report.passed(), "{:?}", report.mismatches);
    }
}

#[test]
fn d_j_is_diagonal_beyond_the_first_period() {
    for name in NAMES {
        let alg = Arc::new(build_algebra(name.parse().unwrap()).unwrap());
        let d = build_diagonalization(&alg).unwrap();
        assert!(d.periodicity_holds().unwrap(), "{name}");
        assert!(d.spectral_identity_holds().unwrap(), "{name}");
    }
}
