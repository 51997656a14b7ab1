use fpp::environment::{Capacities, CapacityDistribution};
use fpp::estimate::*;
use fpp::lattice::{discretize_domain, AxisBox, DomainSpec, EdgeId};
use fpp::measure::{distance, DistanceOptions, VectorMeasure};
use fpp::scalar::{q, qi};
use fpp::stream::{admissibility_region_report, vector_measure, Stream};

fn bern() -> CapacityDistribution {
    CapacityDistribution::Bernoulli { a: 0.0, b: 1.0, p: 0.5 }
}

fn tight() -> MinDistanceOptions {
    MinDistanceOptions {
        distance: DistanceOptions { k_max: 8, rel_gap: 0.02, max_cells: 3000, ..Default::default() },
        steps: 12,
        sweeps: 300,
        early_stop: false,
    }
}

fn quick() -> MinDistanceOptions {
    MinDistanceOptions {
        distance: DistanceOptions { k_max: 8, rel_gap: 0.05, max_cells: 400, ..Default::default() },
        steps: 4,
        ..tight()
    }
}

fn rate_cfg(s: f64, eps: f64, n: i64, trials: usize, seed: u64) -> RateConfig {
    RateConfig {
        s,
        v: vec![1.0, 0.0],
        eps,
        n,
        trials,
        dist: bern(),
        seed,
        solver: MinDistanceOptions::default(),
    }
}

#[test]
fn wilson_matches_closed_form() {
    // p̂ = 1/2, n = 100: centre 1/2, half-width z·sqrt(1/400 + z²/40000)/(1 + z²/100)
    let (lo, hi) = wilson(50, 100);
    let z = Z95;
    let half = z * (0.25 / 100.0 + z * z / 40000.0).sqrt() / (1.0 + z * z / 100.0);
    assert!((lo - (0.5 - half)).abs() < 1e-12 && (hi - (0.5 + half)).abs() < 1e-12);
    let (lo, hi) = wilson(0, 2000);
    assert_eq!(lo, 0.0);
    assert!((hi - z * z / 2000.0 / (1.0 + z * z / 2000.0)).abs() < 1e-12);
    assert_eq!(wilson(7, 7).1, 1.0);
}

#[test]
fn box_edges_count_vertices_times_d() {
    let c = AxisBox::unit_cube(2);
    // n = 4: x ∈ {-2, -1, 0, 1}
    assert_eq!(box_vertices(&c, 4).len(), 16);
    assert_eq!(box_edges(&c, 4).len(), 32);
    assert_eq!(box_vertices(&AxisBox::unit_cube(3), 3).len(), 27);
}

#[test]
fn zero_speed_always_holds() {
    let r = estimate_rate(&rate_cfg(0.0, 0.05, 3, 20, 1)).unwrap();
    assert_eq!(r.successes, 20);
    assert_eq!(r.phat, 1.0);
    assert_eq!(r.i_hat, 0.0);
    assert!(!r.i_hat_is_lower_bound);
}

#[test]
fn zero_capacities_leave_the_zero_stream() {
    let c = AxisBox::unit_cube(2);
    let edges = box_edges(&c, 4);
    let t = Capacities::uniform(&edges, 0.0);
    let target = VectorMeasure::constant_on(c.clone(), vec![1.0, 0.0]);
    let r = min_distance(&c, 4, &t, &target, 0.05, &tight()).unwrap();
    assert!(r.stream.is_zero());
    assert_eq!(r.status, Feasibility::Unknown);
    let direct = distance(&VectorMeasure::zero(2), &target, &tight().distance);
    assert!(r.upper >= direct.lower - 1e-12);
}

#[test]
fn discretized_admissible_target_holds() {
    // g = straight lines along e_1 inside C at speed 1/2 under unit capacities
    let c = AxisBox::unit_cube(2);
    let n = 6;
    let edges = box_edges(&c, n);
    let t = Capacities::uniform(&edges, 1.0);
    let mut g = Stream::new(2, n);
    for e in &edges {
        if e.axis == 0 {
            g.set(e.clone(), 0.5);
        }
    }
    let target = vector_measure(&g);
    let r = min_distance(&c, n, &t, &target, 1e-3, &tight()).unwrap();
    assert_eq!(r.status, Feasibility::Holds, "upper {}", r.upper);
}

#[test]
fn returned_streams_are_admissible() {
    let c = AxisBox::unit_cube(2);
    let n = 4;
    let edges = box_edges(&c, n);
    for seed in 0..5 {
        let t: Capacities<f64> = fpp::environment::sample_edges(&edges, &bern(), seed);
        let target = VectorMeasure::constant_on(c.clone(), vec![0.6, 0.2]);
        let r = min_distance(&c, n, &t, &target, 0.01, &MinDistanceOptions::default()).unwrap();
        let rep = admissibility_region_report(&r.stream, &t, |x: &[i64]| c.contains_half_open(x, n));
        assert!(rep.bad_capacity.is_empty(), "seed {seed}: {:?}", rep.bad_capacity);
        assert!(rep.bad_nodes.is_empty(), "seed {seed}: {:?}", rep.bad_nodes);
    }
}

#[test]
fn tiny_instance_matches_grid_search() {
    // n = 2, only the two x_2 = -1 and x_2 = 0 rows along e_1 may carry flow;
    // the node law at (0,0) ties the y = 0 pair, the y = -1 pair is free at
    // its right end, leaving a two-parameter family (a, b)
    let c = AxisBox::unit_cube(2);
    let n = 2;
    let live = [
        EdgeId::new(vec![-1, 0], 0),
        EdgeId::new(vec![0, 0], 0),
        EdgeId::new(vec![-1, -1], 0),
        EdgeId::new(vec![0, -1], 0),
    ];
    let mut t = Capacities::uniform(&box_edges(&c, n), 0.0);
    for e in &live[..3] {
        t.values.insert(e.clone(), 1.0);
    }
    let target = VectorMeasure::constant_on(c.clone(), vec![0.7, 0.0]);
    let opts = MinDistanceOptions {
        distance: DistanceOptions { k_max: 6, rel_gap: 0.05, max_cells: 150, ..Default::default() },
        steps: 20,
        ..tight()
    };
    let step = 0.1;
    let mut best = f64::INFINITY;
    for i in 0..=20 {
        for j in 0..=20 {
            let (a, b) = (-1.0 + step * i as f64, -1.0 + step * j as f64);
            let mut f = Stream::new(2, n);
            f.set(live[0].clone(), a);
            f.set(live[1].clone(), a);
            f.set(live[2].clone(), b);
            let br = distance(&vector_measure(&f), &target, &opts.distance);
            best = best.min(br.upper);
        }
    }
    let r = min_distance(&c, n, &t, &target, 0.0, &opts).unwrap();
    // 𝔡 ≤ 2‖·‖_TV: a grid point within step/2 of the optimum moves each of
    // three edge atoms by at most step/2 · 1/n²
    let slack = 2.0 * 3.0 * (step / 2.0) / 4.0;
    assert!(r.upper <= best + 0.02, "solver {} grid {best}", r.upper);
    assert!(r.upper >= best - slack - 0.05 * best, "solver {} grid {best}", r.upper);
    assert!(r.floor <= best);
}

#[test]
fn capacity_floor_stays_below_found_streams() {
    let c = AxisBox::unit_cube(2);
    for (n, seed) in [(2, 0), (3, 1), (3, 2), (4, 3)] {
        let edges = box_edges(&c, n);
        let t: Capacities<f64> = fpp::environment::sample_edges(&edges, &bern(), seed);
        let target = VectorMeasure::constant_on(c.clone(), vec![0.5, 0.0]);
        let r = min_distance(&c, n, &t, &target, 0.0, &quick()).unwrap();
        assert!(r.floor <= r.upper, "n {n}: floor {} above {}", r.floor, r.upper);
        let zero = distance(&VectorMeasure::zero(2), &target, &tight().distance);
        assert!(capacity_floor(&edges, &t, n, &target, 8) <= zero.upper);
    }
    // no capacity at all: the floor is the distance of the zero stream at fixed shifts
    let edges = box_edges(&c, 3);
    let t = Capacities::uniform(&edges, 0.0);
    let target = VectorMeasure::constant_on(c.clone(), vec![0.5, 0.0]);
    let zero = distance(&VectorMeasure::zero(2), &target, &tight().distance);
    let floor = capacity_floor(&edges, &t, 3, &target, 8);
    assert!(floor <= zero.upper && floor >= 0.5 * zero.lower, "{floor} vs {zero:?}");
}

#[test]
fn success_frequency_grows_with_eps() {
    let mut last = 0;
    for eps in [0.1, 0.3, 0.6, 1.2] {
        let r = estimate_rate(&rate_cfg(0.5, eps, 2, 40, 9)).unwrap();
        assert!(r.successes >= last, "eps {eps}: {} < {last}", r.successes);
        last = r.successes;
    }
    assert_eq!(last, 40);
}

#[test]
fn zero_successes_give_a_wilson_bound() {
    let r = estimate_rate(&rate_cfg(0.5, 1e-4, 2, 30, 3)).unwrap();
    assert_eq!(r.successes, 0);
    assert!(r.i_hat_is_lower_bound);
    assert!((r.i_hat - (-r.hi.ln() / 4.0)).abs() < 1e-15);
}

#[test]
fn rate_is_reproducible() {
    let a = estimate_rate(&rate_cfg(0.5, 0.3, 2, 30, 77)).unwrap();
    let b = estimate_rate(&rate_cfg(0.5, 0.3, 2, 30, 77)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn constant_capacity_flow_constant_is_one() {
    for d in 2..=3 {
        let est = estimate_flow_constant(d, d - 1, &CapacityDistribution::Constant { c: 1.0 }, &[4, 8], |_| qi(1), 2, 5)
            .unwrap();
        for e in est {
            assert!(e.ratios.iter().all(|r| *r == 1.0), "d {d}: {:?}", e.ratios);
            assert_eq!(e.half_width, 0.0);
        }
    }
}

#[test]
fn two_point_law_ratios_lie_between_the_values() {
    let dist = CapacityDistribution::Discrete { values: vec![1.0, 2.0], probs: vec![0.5, 0.5] };
    let est = estimate_flow_constant(2, 1, &dist, &[4, 6], |_| q(1, 2), 10, 11).unwrap();
    for e in &est {
        assert!(e.min >= 1.0 - 1e-12 && e.max <= 2.0 + 1e-12, "{e:?}");
        assert!(e.mean >= e.min && e.mean <= e.max);
    }
}

#[test]
fn tail_probability_extremes() {
    let spec = DomainSpec::unit_slab(2, 1);
    let lat = discretize_domain(&spec, 4).unwrap();
    let all = tail_probability(0.0, &lat, 20, &bern(), 1).unwrap();
    assert_eq!(all.successes, 20);
    // φ_n ≤ (n+1)·M with M = 1: the column count of the slab base
    let none = tail_probability(2.0, &lat, 20, &bern(), 1).unwrap();
    assert_eq!(none.successes, 0);
    let mid = tail_probability(0.5, &lat, 20, &bern(), 1).unwrap();
    assert!(mid.lo <= mid.phat && mid.phat <= mid.hi);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(estimate_rate(&rate_cfg(0.5, 0.0, 2, 5, 1)).is_err());
    assert!(estimate_rate(&rate_cfg(0.5, 0.1, 0, 5, 1)).is_err());
    assert!(estimate_rate(&rate_cfg(0.5, 0.1, 2, 0, 1)).is_err());
    let c = AxisBox::unit_cube(2);
    assert!(estimate_flow_constant(2, 2, &bern(), &[2], |_| qi(1), 1, 0).is_err());
    assert!(min_distance(&c, 0, &Capacities::uniform(&[], 1.0), &VectorMeasure::zero(2), 0.1, &tight()).is_err());
}
