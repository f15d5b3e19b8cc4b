use std::sync::Arc;

use dstau::exactnum::{Coords, NumberField, Rational, RootedField};
use proptest::prelude::*;

fn fields() -> Vec<RootedField> {
    vec![
        RootedField::build(None, &[2]).unwrap(),
        RootedField::build(Some(3), &[]).unwrap(),
        RootedField::build(Some(5), &[]).unwrap(),
        RootedField::build(Some(6), &[2]).unwrap(),
        RootedField::build(Some(6), &[2, 6]).unwrap(),
        RootedField::build(Some(4), &[2, 3]).unwrap(),
    ]
}

fn small_rational() -> impl Strategy<Value = Rational> {
    (-12i64..=12, 1i64..=7).prop_map(|(n, d)| Rational::from_signeds(n, d))
}

fn element(field: &Arc<NumberField>) -> impl Strategy<Value = Coords> {
    prop::collection::vec(small_rational(), field.degree()).prop_map(Coords::from)
}

fn field_and_elements() -> impl Strategy<Value = (Arc<NumberField>, Coords, Coords, Coords)> {
    (0..fields().len()).prop_flat_map(|i| {
        let f = fields()[i].field.clone();
        (Just(f.clone()), element(&f), element(&f), element(&f))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_axioms((f, a, b, c) in field_and_elements()) {
        prop_assert_eq!(f.mul(&f.mul(&a, &b), &c), f.mul(&a, &f.mul(&b, &c)));
        prop_assert_eq!(f.mul(&a, &f.add(&b, &c)), f.add(&f.mul(&a, &b), &f.mul(&a, &c)));
        prop_assert_eq!(f.mul(&a, &b), f.mul(&b, &a));
        if !NumberField::is_zero(&a) {
            prop_assert_eq!(f.mul(&a, &f.inv(&a).unwrap()), f.one());
        }
    }

    #[test]
    fn rationals_survive_embedding_and_projection(r in small_rational(), i in 0usize..3) {
        let small = [RootedField::build(None, &[2]).unwrap(), RootedField::build(Some(3), &[]).unwrap(), RootedField::build(Some(6), &[]).unwrap()];
        let big = RootedField::build(Some(6), &[2]).unwrap();
        let src = &small[i];
        let x = src.field.from_rational(r.clone());
        prop_assert_eq!(src.field.project_rational(&x).unwrap(), r.clone());
        let map = src.embed_into(&big).unwrap();
        prop_assert_eq!(big.field.project_rational(&map.apply(&x)).unwrap(), r);
    }

    #[test]
    fn embeddings_are_ring_maps((a, b) in (element(&RootedField::build(None, &[2]).unwrap().field), element(&RootedField::build(None, &[2]).unwrap().field))) {
        let src = RootedField::build(None, &[2]).unwrap();
        let dst = RootedField::build(Some(4), &[2, 3]).unwrap();
        let map = src.embed_into(&dst).unwrap();
        let (f, g) = (&src.field, &dst.field);
        prop_assert_eq!(map.apply(&f.mul(&a, &b)), g.mul(&map.apply(&a), &map.apply(&b)));
        prop_assert_eq!(map.apply(&f.add(&a, &b)), g.add(&map.apply(&a), &map.apply(&b)));
    }
}

#[test]
fn roots_of_unity_have_exact_order() {
    for h in 2..=14u32 {
        let rf = RootedField::build(Some(h), &[]).unwrap();
        let f = &rf.field;
        let w = rf.omega().unwrap();
        assert_eq!(f.pow(&w, h as u64), f.one(), "h={h}");
        for k in 1..h {
            assert_ne!(f.pow(&w, k as u64), f.one(), "h={h} k={k}");
        }
    }
}
