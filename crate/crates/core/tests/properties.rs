//! Property tests for the algebraic invariants of the tensor, ring and
//! series layers, in exact rational arithmetic.

use momcl_core::ring::{LambdaScalar, PsiSymbol};
use momcl_core::series::{MomentSeries, Multipliers, SeriesTerm, Var};
use momcl_core::symtensor::{contract, sym_delta, symmetrize, SymTensor};
use num_rational::BigRational;
use proptest::prelude::*;

type Q = BigRational;

fn q(n: i64, d: i64) -> Q {
    use momcl_core::scalar::Scalar;
    Q::from_ratio(n, d)
}

fn arb_rational() -> impl Strategy<Value = Q> {
    (-20i64..=20, 1i64..=7).prop_map(|(n, d)| q(n, d))
}

fn arb_vector() -> impl Strategy<Value = SymTensor<Q>> {
    [arb_rational(), arb_rational(), arb_rational()].prop_map(SymTensor::vector)
}

fn arb_matrix() -> impl Strategy<Value = SymTensor<Q>> {
    [
        arb_rational(),
        arb_rational(),
        arb_rational(),
        arb_rational(),
        arb_rational(),
        arb_rational(),
    ]
    .prop_map(SymTensor::matrix)
}

fn arb_lambda_scalar() -> impl Strategy<Value = LambdaScalar<Q>> {
    proptest::collection::vec(
        (
            -3i32..=3,
            proptest::option::of((-2i32..=3, 0u32..=2)),
            arb_rational(),
        ),
        0..4,
    )
    .prop_map(|monos| {
        let mut x = LambdaScalar::zero();
        for (e, psi, c) in monos {
            x.add_monomial(e, psi.map(|(n, k)| PsiSymbol { n, k }), c);
        }
        x
    })
}

fn arb_pure_lambda() -> impl Strategy<Value = LambdaScalar<Q>> {
    proptest::collection::vec((-3i32..=3, arb_rational()), 0..4).prop_map(|monos| {
        let mut x = LambdaScalar::zero();
        for (e, c) in monos {
            x.add_monomial(e, None, c);
        }
        x
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_full_contraction_is_norm_power(v in arb_vector(), n in 1usize..=3) {
        let d = sym_delta::<Q>(n).unwrap();
        let args: Vec<&SymTensor<Q>> = std::iter::repeat_n(&v, 2 * n).collect();
        let c = contract(&d, &args).unwrap();
        let norm: Q = (1..=3u8).map(|i| v.get(&[i]) * v.get(&[i])).sum();
        let mut expect = q(1, 1);
        for _ in 0..n {
            expect *= norm.clone();
        }
        prop_assert_eq!(c.get(&[]), expect);
    }

    #[test]
    fn symmetrize_is_idempotent(entries in proptest::collection::vec(
        (proptest::collection::vec(1u8..=3, 3), arb_rational()), 1..6)) {
        let s1 = symmetrize(&entries, 3).unwrap();
        // expand back to a dense table (every index order) and re-average:
        // symmetric input is a fixed point
        let mut full: Vec<(Vec<u8>, Q)> = Vec::new();
        for i in 1..=3u8 {
            for j in 1..=3u8 {
                for k in 1..=3u8 {
                    full.push((vec![i, j, k], s1.get(&[i, j, k])));
                }
            }
        }
        let s2 = symmetrize(&full, 3).unwrap();
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn contract_argument_order_immaterial(
        v in arb_vector(), w in arb_vector(), m in arb_matrix()) {
        let d = sym_delta::<Q>(2).unwrap();
        let a = contract(&d, &[&v, &m, &w]).unwrap();
        let b = contract(&d, &[&m, &w, &v]).unwrap();
        let c = contract(&d, &[&w, &v, &m]).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn ring_axioms(a in arb_pure_lambda(), b in arb_lambda_scalar(), c in arb_lambda_scalar()) {
        // products keep at most one psi factor, so multiply psi-free a in
        prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
        prop_assert_eq!(b.add(&c), c.add(&b));
        let d = arb_sanity(&a, &b);
        prop_assert_eq!(d.0, d.1);
    }

    #[test]
    fn derivations_commute(x in arb_lambda_scalar()) {
        prop_assert_eq!(x.d_lambda().d_mu(), x.d_mu().d_lambda());
    }

    #[test]
    fn series_grade_is_linear_projection(
        coeffs in proptest::collection::vec(arb_rational(), 3),
        a in arb_rational()) {
        let mut s = MomentSeries::<Q>::new(4, 0);
        let mut t = MomentSeries::<Q>::new(4, 0);
        s.push(SeriesTerm::delta(0, 1, 0, 0, 0, LambdaScalar::constant(coeffs[0].clone())).unwrap()).unwrap();
        s.push(SeriesTerm::delta(2, 0, 0, 1, 0, LambdaScalar::constant(coeffs[1].clone())).unwrap()).unwrap();
        t.push(SeriesTerm::delta(0, 1, 0, 0, 0, LambdaScalar::constant(coeffs[2].clone())).unwrap()).unwrap();
        t.push(SeriesTerm::delta(0, 0, 2, 0, 0, LambdaScalar::constant(coeffs[0].clone())).unwrap()).unwrap();
        for n in 0..=3usize {
            let lhs = s.scale(&a).add(&t).unwrap().grade(n);
            let rhs = s.grade(n).scale(&a).add(&t.grade(n)).unwrap();
            let diff = lhs.add(&rhs.scale(&q(-1, 1))).unwrap();
            prop_assert!(diff.is_zero());
        }
    }

    #[test]
    fn derivative_operators_commute_on_series(
        c1 in arb_rational(), c2 in arb_rational(),
        va in proptest::sample::select(vec![Var::Mu, Var::MuVec, Var::MuMat, Var::Lam, Var::LamVec]),
        vb in proptest::sample::select(vec![Var::Mu, Var::MuVec, Var::MuMat, Var::Lam, Var::LamVec])) {
        let mut s = MomentSeries::<Q>::new(5, 0);
        s.push(SeriesTerm::delta(2, 1, 2, 1, 0,
            LambdaScalar::monomial(c1, -1, Some(PsiSymbol { n: 1, k: 0 }))).unwrap()).unwrap();
        s.push(SeriesTerm::delta(1, 0, 1, 2, 0, LambdaScalar::constant(c2)).unwrap()).unwrap();
        let ab = s.differentiate(va).differentiate(vb);
        let ba = s.differentiate(vb).differentiate(va);
        // compare after aligning free-slot order by evaluation
        let at = Multipliers::new(
            q(1, 3),
            SymTensor::vector([q(1, 2), q(-1, 5), q(2, 3)]),
            SymTensor::matrix([q(1, 4), q(1, 7), q(0, 1), q(-1, 2), q(2, 9), q(1, 6)]),
            q(7, 5),
            SymTensor::vector([q(-1, 3), q(1, 8), q(1, 1)]),
        );
        let real = momcl_core::ring::PolyFamily;
        let ea = ab.evaluate(&at, &real).unwrap();
        let eb = ba.evaluate(&at, &real).unwrap();
        let ra = slots_of(va);
        // free slots of ab: [vb-slots..., va-slots...] wait: differentiate
        // appends new slots, so ab = d_vb(d_va(s)) has va slots first
        let rb = slots_of(vb);
        for idx in ea.indices() {
            // move the va-block of ab's index to the end to match ba
            let mut swapped = idx[ra..ra + rb].to_vec();
            swapped.extend_from_slice(&idx[0..ra]);
            prop_assert_eq!(ea.get(&idx), eb.get(&swapped));
        }
    }
}

fn slots_of(v: Var) -> usize {
    match v {
        Var::Mu | Var::Lam => 0,
        Var::MuVec | Var::LamVec => 1,
        Var::MuMat => 2,
    }
}

fn arb_sanity(a: &LambdaScalar<Q>, b: &LambdaScalar<Q>) -> (LambdaScalar<Q>, LambdaScalar<Q>) {
    // (a b) scaled by 2 equals a (2 b)
    let two = q(2, 1);
    (a.mul(b).scale(&two), a.mul(&b.scale(&two)))
}
