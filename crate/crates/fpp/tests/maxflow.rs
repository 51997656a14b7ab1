use fpp::environment::{sample_capacities, sample_edges, Capacities, CapacityDistribution};
use fpp::lattice::{cylinder_sets, discretize_domain, AxisBox, AxisCylinder, CylinderSpec, DomainSpec, LatticeDomain, Role};
use fpp::maxflow::{cut_capacity, cylinder_flow_tau, cylinder_flow_top_bottom, max_flow, separates};
use fpp::scalar::{q, qi};
use fpp::stream::{admissibility_report, flow_value};
use fpp::Rational;
use num::{One, Zero};
use proptest::prelude::*;

/// Min over vertex sets R ⊇ Γ¹ avoiding Γ² of the capacity leaving R.
fn brute_min_cut(lat: &LatticeDomain, t: &Capacities<Rational>) -> Rational {
    let free: Vec<usize> = (0..lat.len()).filter(|&i| lat.role[i] == Role::Interior).collect();
    assert!(free.len() <= 16, "oracle limited to 16 free vertices");
    let edges = lat.edges();
    let ends: Vec<(usize, usize)> =
        edges.iter().map(|e| (lat.index_of(&e.x).unwrap(), lat.index_of(&e.head()).unwrap())).collect();
    let mut best: Option<Rational> = None;
    let mut side = vec![false; lat.len()];
    for mask in 0u32..(1 << free.len()) {
        for i in 0..lat.len() {
            side[i] = lat.role[i] == Role::Source;
        }
        for (b, &i) in free.iter().enumerate() {
            side[i] = mask >> b & 1 == 1;
        }
        let mut c = Rational::zero();
        for (e, &(a, b)) in edges.iter().zip(&ends) {
            if side[a] != side[b] {
                c += t.get(e);
            }
        }
        if best.as_ref().map_or(true, |x| c < *x) {
            best = Some(c);
        }
    }
    best.unwrap()
}

fn slab(n: i64) -> LatticeDomain {
    discretize_domain(&DomainSpec::unit_slab(2, 0), n).unwrap()
}

fn check_instance(lat: &LatticeDomain, t: &Capacities<Rational>) {
    let r = max_flow(lat, t);
    assert_eq!(r.value, brute_min_cut(lat, t));
    assert_eq!(cut_capacity(t, &r.cut), r.value);
    assert!(separates(lat, &r.cut));
    assert_eq!(flow_value(&r.stream, lat), r.value);
    assert!(admissibility_report(&r.stream, t, lat).admissible());
}

#[test]
fn unit_capacities_count_columns() {
    // at n = 1 every edge joins Γ¹ to Γ² directly and none may be charged
    let lat = slab(1);
    assert!(lat.edges().is_empty());
    for n in 2..=3 {
        let lat = slab(n);
        let t = Capacities::uniform(&lat.edges(), Rational::one());
        let r = max_flow(&lat, &t);
        assert_eq!(r.value, Rational::from_integer((n + 1).into()));
        check_instance(&lat, &t);
    }
}

#[test]
fn zero_capacities_give_zero_flow() {
    let lat = slab(3);
    let t = Capacities::uniform(&lat.edges(), Rational::zero());
    let r = max_flow(&lat, &t);
    assert!(r.value.is_zero());
    assert!(r.stream.is_zero());
    assert!(separates(&lat, &r.cut));
}

#[test]
fn random_instances_match_brute_force() {
    let laws = [
        CapacityDistribution::Bernoulli { a: 0.0, b: 1.0, p: 0.5 },
        CapacityDistribution::Uniform { a: 0.0, b: 2.0 },
    ];
    for seed in 0..60u64 {
        let lat = slab(1 + (seed % 3) as i64);
        let t: Capacities<Rational> = sample_capacities(&lat, &laws[(seed % 2) as usize], seed);
        check_instance(&lat, &t);
    }
}

#[test]
fn float_mode_agrees_with_rational_mode() {
    let g = CapacityDistribution::Uniform { a: 0.0, b: 1.0 };
    for seed in 0..20u64 {
        let lat = slab(3);
        let tr: Capacities<Rational> = sample_capacities(&lat, &g, seed);
        let tf: Capacities<f64> = sample_capacities(&lat, &g, seed);
        let exact = max_flow(&lat, &tr).value;
        let approx = max_flow(&lat, &tf).value;
        let e = num::ToPrimitive::to_f64(&exact).unwrap();
        assert!((e - approx).abs() <= 1e-12 * e.max(1.0));
    }
}

fn straight(width: i64, h: (i64, i64)) -> CylinderSpec {
    CylinderSpec::Axis(AxisCylinder {
        base: AxisBox::new(vec![qi(0), qi(0)], vec![qi(width), qi(0)]).unwrap(),
        axis: 1,
        sign: 1,
        h: q(h.0, h.1),
    })
}

#[test]
fn constant_capacities_on_straight_cylinder() {
    let n = 4;
    for c in [1i64, 3] {
        for h in [(1, 2), (1, 1), (2, 1)] {
            let spec = straight(1, h);
            let sets = cylinder_sets(&spec, n).unwrap();
            let t = Capacities::uniform(&sets.top_bottom_domain().unwrap().edges(), Rational::from_integer(c.into()));
            let columns = Rational::from_integer((n + 1).into());
            let phi = cylinder_flow_top_bottom(&spec, n, &t).unwrap();
            assert_eq!(phi, columns.clone() * Rational::from_integer(c.into()), "h = {h:?}");
            let tau = cylinder_flow_tau(&spec, n, &t).unwrap();
            assert_eq!(tau / columns, Rational::from_integer(c.into()));
        }
    }
}

#[test]
fn every_flat_layer_bounds_the_cylinder_flow() {
    let n = 3;
    let spec = straight(1, (1, 1));
    let lat = cylinder_sets(&spec, n).unwrap().top_bottom_domain().unwrap();
    for seed in 0..10 {
        let t: Capacities<Rational> =
            sample_capacities(&lat, &CapacityDistribution::Uniform { a: 0.0, b: 1.0 }, seed);
        let phi = max_flow(&lat, &t).value;
        for y in -n..n {
            let layer: Vec<_> = lat.edges().into_iter().filter(|e| e.axis == 1 && e.x[1] == y).collect();
            assert!(phi <= cut_capacity(&t, &layer));
        }
    }
}

#[test]
fn tau_is_subadditive_over_adjacent_bases() {
    let n = 3;
    let g = CapacityDistribution::Bernoulli { a: 0.0, b: 1.0, p: 0.6 };
    let part = |lo: i64, hi: i64| {
        CylinderSpec::Axis(AxisCylinder {
            base: AxisBox::new(vec![q(lo, 3), qi(0)], vec![q(hi, 3), qi(0)]).unwrap(),
            axis: 1,
            sign: 1,
            h: qi(1),
        })
    };
    let whole = part(0, 3);
    let edges = cylinder_sets(&whole, n).unwrap().top_bottom_domain().unwrap().edges();
    for seed in 0..50 {
        let t: Capacities<Rational> = sample_edges(&edges, &g, seed);
        let all = cylinder_flow_tau(&whole, n, &t).unwrap();
        let split = cylinder_flow_tau(&part(0, 1), n, &t).unwrap() + cylinder_flow_tau(&part(1, 3), n, &t).unwrap();
        assert!(all <= split, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn duality_and_admissibility_hold(seed in 0u64..1_000_000, n in 1i64..=3, p in 0.1f64..0.9) {
        let lat = slab(n);
        let t: Capacities<Rational> =
            sample_capacities(&lat, &CapacityDistribution::Bernoulli { a: 0.0, b: 1.0, p }, seed);
        let r = max_flow(&lat, &t);
        prop_assert_eq!(cut_capacity(&t, &r.cut), r.value.clone());
        prop_assert!(separates(&lat, &r.cut));
        prop_assert!(admissibility_report(&r.stream, &t, &lat).admissible());
    }

    #[test]
    fn raising_a_capacity_never_lowers_the_flow(seed in 0u64..1_000_000, pick in 0usize..1000, bump in 1i64..4) {
        let lat = slab(3);
        let mut t: Capacities<Rational> =
            sample_capacities(&lat, &CapacityDistribution::Uniform { a: 0.0, b: 1.0 }, seed);
        let before = max_flow(&lat, &t).value;
        let edges = lat.edges();
        let e = edges[pick % edges.len()].clone();
        let raised = t.get(&e) + Rational::from_integer(bump.into());
        t.values.insert(e, raised);
        prop_assert!(max_flow(&lat, &t).value >= before);
    }
}
