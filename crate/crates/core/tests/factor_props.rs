use bcgibbs::{Assignment, Factor};
use proptest::prelude::*;

const CARDS: [usize; 5] = [2, 3, 2, 4, 3];

fn factor_strategy() -> impl Strategy<Value = Factor> {
    proptest::sample::subsequence(vec![0usize, 1, 2, 3, 4], 1..=3)
        .prop_shuffle()
        .prop_flat_map(|scope| {
            let cards: Vec<usize> = scope.iter().map(|&v| CARDS[v]).collect();
            let len: usize = cards.iter().product();
            proptest::collection::vec(0.01f64..5.0, len)
                .prop_map(move |table| Factor::new(scope.clone(), cards.clone(), table).unwrap())
        })
}

/// Every full assignment of variables 0..5.
fn all_states() -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &c in &CARDS {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..c).map(move |x| {
                    let mut t = s.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
    }
    out
}

fn value(f: &Factor, state: &[usize]) -> f64 {
    f.value_at_state(state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_is_pointwise_and_commutative(a in factor_strategy(), b in factor_strategy()) {
        let ab = a.product(&b).unwrap();
        let ba = b.product(&a).unwrap();
        for s in all_states() {
            let expect = value(&a, &s) * value(&b, &s);
            prop_assert!((value(&ab, &s) - expect).abs() <= 1e-9 * expect.max(1.0));
            prop_assert!((value(&ba, &s) - expect).abs() <= 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn marginalization_commutes(f in factor_strategy()) {
        prop_assume!(f.scope().len() >= 2);
        let (x, y) = (f.scope()[0], f.scope()[1]);
        let xy = f.marginalize(x).unwrap().marginalize(y).unwrap();
        let yx = f.marginalize(y).unwrap().marginalize(x).unwrap();
        for s in all_states() {
            prop_assert!((value(&xy, &s) - value(&yx, &s)).abs() <= 1e-9 * value(&xy, &s).max(1.0));
        }
        prop_assert!((f.total() - xy.total()).abs() <= 1e-9 * f.total());
    }

    #[test]
    fn sum_to_matches_marginalize(f in factor_strategy()) {
        let keep = f.scope()[0];
        let mut g = f.clone();
        for &v in &f.scope()[1..] {
            g = g.marginalize(v).unwrap();
        }
        let h = f.sum_to(&[keep]);
        for s in all_states() {
            prop_assert!((value(&g, &s) - value(&h, &s)).abs() <= 1e-9 * value(&g, &s).max(1.0));
        }
    }

    #[test]
    fn reduce_fixes_values(f in factor_strategy(), pick in 0usize..64) {
        let v = f.scope()[pick % f.scope().len()];
        let x = pick % CARDS[v];
        let mut ev = Assignment::new();
        ev.insert(v, x);
        let r = f.reduce(&ev).unwrap();
        prop_assert!(!r.contains(v));
        for mut s in all_states() {
            s[v] = x;
            prop_assert!((value(&r, &s) - value(&f, &s)).abs() <= 1e-12 * value(&f, &s).max(1.0));
        }
    }

    #[test]
    fn normalized_sums_to_one(f in factor_strategy()) {
        let p = f.normalized().unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescaling_preserves_values(f in factor_strategy(), k in -300i32..300) {
        let scale = 10f64.powi(k / 3);
        let g = Factor::new(f.scope().to_vec(), f.cardinalities().to_vec(), f.table().iter().map(|x| x * scale).collect()).unwrap();
        let prod = g.product(&f).unwrap();
        let direct: Vec<f64> = f.scaled_table().iter().map(|x| x * x * scale).collect();
        let via = prod.permuted(f.scope()).unwrap().scaled_table();
        for (a, b) in direct.iter().zip(&via) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs());
        }
    }
}

#[test]
fn product_over_disjoint_scopes_is_outer_product() {
    let a = Factor::new(vec![0], vec![2], vec![1.0, 2.0]).unwrap();
    let b = Factor::new(vec![1], vec![3], vec![3.0, 4.0, 5.0]).unwrap();
    let ab = a.product(&b).unwrap().permuted(&[0, 1]).unwrap();
    assert_eq!(ab.scaled_table(), vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
}
