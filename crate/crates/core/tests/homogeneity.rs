//! Rescaled expansions: the λ^l part of every F_g is homogeneous of degree l under
//! `deg q_{α,k} = (j_α + hk)/(h+1)`.

use std::sync::Arc;

use dstau::botau::{log_tau, q_exponent, required_levels};
use dstau::exactnum::Rational;
use dstau::gradedseries::TimeVar;
use dstau::kacmoody::{build_algebra, weight_basis};
use dstau::stringeq::solve_reduced_string_equation;

#[test]
fn genus_parts_are_homogeneous() {
    for (name, cap) in [("A1", 30), ("A2", 32), ("A3", 40), ("B3", 42), ("C2", 40), ("D4", 42), ("G2", 42)] {
        let alg = Arc::new(build_algebra(name.parse().unwrap()).unwrap());
        let gsol = solve_reduced_string_equation(&alg, &weight_basis(&alg).unwrap(), required_levels(&alg, cap)).unwrap();
        let tau = log_tau(&gsol, cap).unwrap();
        let h = alg.h as i64;
        let mut checked = 0;
        for (g, part) in &tau.genus_parts {
            for (m, _) in part.rational_terms().unwrap() {
                let mut deg = Rational::from(0u32);
                for (v, e) in &m.vars {
                    let TimeVar::Q { alpha, k } = v else { panic!("{name}: t-variable in a genus part") };
                    let j = q_exponent(&alg, *alpha).j as i64;
                    deg += Rational::from_signeds((j + h * *k as i64) * *e as i64, h + 1);
                }
                assert_eq!(deg, Rational::from(m.lambda), "{name} F{g}: {m}");
                checked += 1;
            }
        }
        assert!(checked > 0, "{name}");
    }
}
