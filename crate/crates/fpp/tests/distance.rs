use fpp::lattice::AxisBox;
use fpp::measure::{distance, Cell, DistanceOptions, PreparedDiff, VectorMeasure};
use fpp::scalar::{q, Q};
use proptest::prelude::*;

// Direct sum over cubes of the level-k hierarchy, using box_mass on each
// measure separately. Exact cube corners, so no shared code with the search.
fn brute(mu: &VectorMeasure, nu: &VectorMeasure, u: &[Q], lam: Q, k_max: u32) -> f64 {
    let d = mu.d;
    let mut total = 0.0;
    for k in 0..=k_max {
        let h = Q::new(1, 1 << k);
        let reach = 2 * (1i64 << k) + 2;
        let mut z = vec![-reach; d];
        let mut level = 0.0;
        loop {
            let lo: Vec<Q> = (0..d).map(|j| lam * (u[j] + h * (Q::from_integer(z[j]) - q(1, 2)))).collect();
            let hi: Vec<Q> = (0..d).map(|j| lam * (u[j] + h * (Q::from_integer(z[j]) + q(1, 2)))).collect();
            let b = AxisBox::new(lo, hi).unwrap();
            let a = mu.box_mass(&b);
            let c = nu.box_mass(&b);
            level += a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let mut j = d;
            let mut done = true;
            while j > 0 {
                j -= 1;
                z[j] += 1;
                if z[j] <= reach {
                    done = false;
                    break;
                }
                z[j] = -reach;
            }
            if done {
                break;
            }
        }
        total += level / (1u64 << k) as f64;
    }
    total
}

fn arb_measure(d: usize) -> impl Strategy<Value = VectorMeasure> {
    let atom = (prop::collection::vec(-4i64..4, d), prop::collection::vec(-2.0f64..2.0, d));
    let dens = (prop::collection::vec((-2i64..2, 1i64..3), d), prop::collection::vec(-1.0f64..1.0, d));
    (prop::collection::vec(atom, 0..4), prop::collection::vec(dens, 0..3)).prop_map(move |(atoms, dens)| {
        let mut m = VectorMeasure::zero(d);
        for (p, w) in atoms {
            m.push_atom(p.iter().map(|&a| q(a, 8)).collect(), w);
        }
        for (iv, v) in dens {
            let lo = iv.iter().map(|&(a, _)| q(a, 4)).collect();
            let hi = iv.iter().map(|&(a, l)| q(a + l, 4)).collect();
            m.push_density(AxisBox::new(lo, hi).unwrap(), v);
        }
        m
    })
}

fn params(d: usize) -> impl Strategy<Value = (Vec<Q>, Q)> {
    (prop::collection::vec(-8i64..8, d), 0i64..=8).prop_map(|(u, l)| (u.iter().map(|&a| q(a, 16)).collect(), q(8 + l, 8)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn point_value_matches_brute_force(mu in arb_measure(2), nu in arb_measure(2), (u, lam) in params(2)) {
        let p = PreparedDiff::new(&mu, &nu);
        let uf: Vec<f64> = u.iter().map(fpp::scalar::q_to_f64).collect();
        let got = p.value_at(&uf, fpp::scalar::q_to_f64(&lam), 4, usize::MAX);
        let want = brute(&mu, &nu, &u, lam, 4);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "got {got} want {want}");
    }

    #[test]
    fn point_value_matches_brute_force_3d(mu in arb_measure(3), nu in arb_measure(3), (u, lam) in params(3)) {
        let p = PreparedDiff::new(&mu, &nu);
        let uf: Vec<f64> = u.iter().map(fpp::scalar::q_to_f64).collect();
        let got = p.value_at(&uf, fpp::scalar::q_to_f64(&lam), 2, usize::MAX);
        let want = brute(&mu, &nu, &u, lam, 2);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "got {got} want {want}");
    }

    #[test]
    fn cell_bound_dominates_samples(mu in arb_measure(2), nu in arb_measure(2), (u, lam) in params(2), w in 1i64..6) {
        let p = PreparedDiff::new(&mu, &nu);
        let uf: Vec<f64> = u.iter().map(fpp::scalar::q_to_f64).collect();
        let lf = fpp::scalar::q_to_f64(&lam).min(1.9);
        let wid = w as f64 / 32.0;
        let cell = Cell { u_lo: uf.clone(), u_hi: uf.iter().map(|a| a + wid).collect(), lam_lo: lf, lam_hi: lf + wid / 2.0 };
        let ub = p.bound(&cell, 5, usize::MAX);
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..3 {
                    let pu = vec![uf[0] + wid * a as f64 / 4.0, uf[1] + wid * b as f64 / 4.0];
                    let pl = lf + wid / 2.0 * c as f64 / 2.0;
                    let v = p.value_at(&pu, pl, 5, usize::MAX);
                    prop_assert!(v <= ub + 1e-9, "sample {v} above bound {ub}");
                }
            }
        }
    }

    #[test]
    fn bracket_is_symmetric_and_ordered(mu in arb_measure(2), nu in arb_measure(2)) {
        let opts = DistanceOptions { k_max: 8, max_cells: 2000, ..Default::default() };
        let a = distance(&mu, &nu, &opts);
        let b = distance(&nu, &mu, &opts);
        prop_assert!(a.lower <= a.upper + 1e-12);
        prop_assert!(a.lower <= b.upper + 1e-9 && b.lower <= a.upper + 1e-9);
    }
}

#[test]
fn equal_measures_give_tail_only_bracket() {
    let mut m = VectorMeasure::zero(2);
    m.push_atom(vec![q(1, 4), q(0, 1)], vec![1.0, 0.5]);
    let b = distance(&m, &m, &DistanceOptions::default());
    assert_eq!(b.lower, 0.0);
    assert_eq!(b.upper, 0.0);
}

#[test]
fn single_atom_distance_is_geometric_sum() {
    // one unit atom: every level sees it in exactly one cube
    let mut m = VectorMeasure::zero(2);
    m.push_atom(vec![q(0, 1), q(0, 1)], vec![1.0, 0.0]);
    let b = distance(&m, &VectorMeasure::zero(2), &DistanceOptions::default());
    let exact = 2.0 - 0.5f64.powi(12);
    assert!((b.lower - exact).abs() < 1e-12);
    assert!(b.upper >= 2.0 - 1e-12);
}
