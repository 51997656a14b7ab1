//! Monte Carlo estimates: the elementary rate function through a convex
//! feasibility search, the flow constant, and tail probabilities of φ_n.

use crate::environment::{derive_seed, sample_edges, Capacities, CapacityDistribution};
use crate::error::{FppError, Result};
use crate::lattice::{int_box, AxisBox, AxisCylinder, CylinderSpec, EdgeId, LatticeDomain, Pt};
use crate::maxflow::{cylinder_flow_tau, max_flow};
use crate::measure::{distance, DistanceBracket, DistanceOptions, PreparedDiff, VectorMeasure};
use crate::scalar::{q_ceil, q_floor, q_to_f64, Q};
use crate::stream::{vector_measure, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `trials` at 95%.
pub fn wilson(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Lattice vertices of the half-open box C at scale n.
pub fn box_vertices(c: &AxisBox, n: i64) -> Vec<Pt> {
    let nq = Q::from_integer(n);
    let lo: Vec<i64> = c.lo.iter().map(|a| q_ceil(&(a * nq))).collect();
    let hi: Vec<i64> = c.hi.iter().map(|a| q_ceil(&(a * nq)) - 1).collect();
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Vec::new();
    }
    int_box(&lo, &hi)
}

/// Edges whose left endpoint lies in C: the edges a stream in C may charge.
pub fn box_edges(c: &AxisBox, n: i64) -> Vec<EdgeId> {
    let d = c.dim();
    box_vertices(c, n).into_iter().flat_map(|x| (0..d).map(move |a| EdgeId::new(x.clone(), a))).collect()
}

fn midpoint(e: &EdgeId, n: i64) -> Vec<Q> {
    e.x.iter().enumerate().map(|(j, &c)| if j == e.axis { Q::new(2 * c + 1, 2 * n) } else { Q::new(c, n) }).collect()
}

/// Stream approximating a measure: f(e) = n^d times the e-component of
/// its mass in the cube of side 1/n centred at the midpoint of e.
pub fn discretize_measure(target: &VectorMeasure, edges: &[EdgeId], n: i64) -> Vec<f64> {
    let nd = (n as f64).powi(target.d as i32);
    let half = Q::new(1, 2 * n);
    edges
        .iter()
        .map(|e| {
            let c = midpoint(e, n);
            let cell = AxisBox { lo: c.iter().map(|a| a - half).collect(), hi: c.iter().map(|a| a + half).collect() };
            target.box_mass(&cell)[e.axis] * nd
        })
        .collect()
}

/// {node law at constrained vertices, |f(e)| ≤ t(e)} over a fixed edge list.
/// Edges with zero capacity are pinned to 0.
struct Polytope {
    cap: Vec<f64>,
    /// per constrained vertex: (edge index, +1 for inflow / -1 for outflow)
    rows: Vec<Vec<(usize, f64)>>,
}

impl Polytope {
    fn new(edges: &[EdgeId], t: &Capacities<f64>, in_c: impl Fn(&[i64]) -> bool) -> Self {
        let cap: Vec<f64> = edges.iter().map(|e| t.get(e).max(0.0)).collect();
        let index: HashMap<&EdgeId, usize> = edges.iter().enumerate().map(|(i, e)| (e, i)).collect();
        let mut verts: Vec<Pt> = edges.iter().map(|e| e.x.clone()).collect();
        verts.sort();
        verts.dedup();
        let mut rows = Vec::new();
        for x in verts {
            let constrained = (0..x.len()).all(|a| {
                let mut y = x.clone();
                y[a] -= 1;
                in_c(&y)
            });
            if !constrained || !in_c(&x) {
                continue;
            }
            let mut row = Vec::new();
            for a in 0..x.len() {
                let out = EdgeId::new(x.clone(), a);
                let mut y = x.clone();
                y[a] -= 1;
                let inc = EdgeId::new(y, a);
                for (e, s) in [(out, -1.0), (inc, 1.0)] {
                    if let Some(&i) = index.get(&e) {
                        if cap[i] > 0.0 {
                            row.push((i, s));
                        }
                    }
                }
            }
            if !row.is_empty() {
                rows.push(row);
            }
        }
        Polytope { cap, rows }
    }

    fn apply_b(&self, z: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(i, s)| s * z[i]).sum()).collect()
    }

    fn apply_bt(&self, phi: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (r, p) in self.rows.iter().zip(phi) {
            for &(i, s) in r {
                out[i] += s * p;
            }
        }
        out
    }

    /// Orthogonal projection onto {B z = 0, z = 0 off the active edges}.
    fn project_div(&self, z: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = z.iter().zip(&self.cap).map(|(v, c)| if *c > 0.0 { *v } else { 0.0 }).collect();
        // two rounds of conjugate gradients on the vertex Laplacian B Bᵀ
        for _ in 0..2 {
            let r0 = self.apply_b(&z);
            let norm0 = r0.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                break;
            }
            let mut phi = vec![0.0; r0.len()];
            let mut r = r0.clone();
            let mut p = r.clone();
            let mut rr: f64 = r.iter().map(|v| v * v).sum();
            for _ in 0..4 * r0.len() + 10 {
                if rr.sqrt() <= 1e-15 * norm0 {
                    break;
                }
                let lp = self.apply_b(&self.apply_bt(&p, z.len()));
                let plp: f64 = p.iter().zip(&lp).map(|(a, b)| a * b).sum();
                if plp <= 0.0 {
                    break;
                }
                let alpha = rr / plp;
                for k in 0..phi.len() {
                    phi[k] += alpha * p[k];
                    r[k] -= alpha * lp[k];
                }
                let rr_new: f64 = r.iter().map(|v| v * v).sum();
                let beta = rr_new / rr;
                rr = rr_new;
                for k in 0..p.len() {
                    p[k] = r[k] + beta * p[k];
                }
            }
            let corr = self.apply_bt(&phi, z.len());
            for k in 0..z.len() {
                z[k] -= corr[k];
            }
        }
        z
    }

    fn clip(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.cap).map(|(v, c)| v.clamp(-c, *c)).collect()
    }

    /// Dykstra's alternating projections towards the nearest feasible point,
    /// finished by an exact node-law projection and a uniform shrink.
    fn project(&self, z: &[f64], sweeps: usize) -> Vec<f64> {
        let len = z.len();
        let mut x = z.to_vec();
        let (mut p, mut q) = (vec![0.0; len], vec![0.0; len]);
        for _ in 0..sweeps {
            let xp: Vec<f64> = (0..len).map(|k| x[k] + p[k]).collect();
            let y = self.project_div(&xp);
            for k in 0..len {
                p[k] = xp[k] - y[k];
            }
            let yq: Vec<f64> = (0..len).map(|k| y[k] + q[k]).collect();
            x = self.clip(&yq);
            for k in 0..len {
                q[k] = yq[k] - x[k];
            }
        }
        let y = self.project_div(&x);
        let theta = y
            .iter()
            .zip(&self.cap)
            .filter(|(v, c)| v.abs() > **c)
            .map(|(v, c)| c / v.abs())
            .fold(1.0f64, f64::min);
        y.iter().map(|v| v * theta).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feasibility {
    /// an admissible stream within ε was found
    Holds,
    /// none found; no infeasibility certificate is implied
    Unknown,
}

#[derive(Clone, Debug)]
pub struct MinDistanceOptions {
    pub distance: DistanceOptions,
    /// projected subgradient steps after the initial projection
    pub steps: usize,
    /// alternating projection sweeps per projection
    pub sweeps: usize,
    /// let each distance evaluation stop once it is clear on which side of ε it lies
    pub early_stop: bool,
}

impl Default for MinDistanceOptions {
    fn default() -> Self {
        MinDistanceOptions {
            distance: DistanceOptions { k_max: 8, rel_gap: 0.05, max_cells: 1500, ..Default::default() },
            steps: 6,
            sweeps: 200,
            early_stop: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinDistance {
    /// certified upper bound on 𝔡(μ_n(f), target) for the returned stream
    pub upper: f64,
    pub lower: f64,
    pub stream: Stream<f64>,
    pub status: Feasibility,
    /// lower bound on the distance of every admissible stream in C
    pub floor: f64,
    pub evaluations: usize,
}

fn to_stream(d: usize, n: i64, edges: &[EdgeId], vals: &[f64]) -> Stream<f64> {
    let mut f = Stream::new(d, n);
    for (e, v) in edges.iter().zip(vals) {
        if *v != 0.0 {
            f.set(e.clone(), *v);
        }
    }
    f
}

/// Subgradient of the level sums at the maximizing shift with respect to
/// the edge values.
fn subgradient(
    mu: &VectorMeasure,
    target: &VectorMeasure,
    at: &(Vec<f64>, f64),
    edges: &[EdgeId],
    n: i64,
    k_max: u32,
) -> Vec<f64> {
    let d = mu.d;
    let prep = PreparedDiff::new(mu, target);
    let (u, lam) = (&at.0, at.1);
    let nd = (n as f64).powi(d as i32);
    let pos: Vec<Vec<f64>> = edges.iter().map(|e| midpoint(e, n).iter().map(q_to_f64).collect()).collect();
    let mut g = vec![0.0; edges.len()];
    for k in 0..=k_max {
        let mut mass: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
        for (p, w) in prep.atom_pos.iter().zip(&prep.atom_w) {
            let z = PreparedDiff::cube_of(p, u, lam, k);
            let m = mass.entry(z).or_insert_with(|| vec![0.0; d]);
            for j in 0..d {
                m[j] += w[j];
            }
        }
        let weight = 0.5f64.powi(k as i32);
        for (i, e) in edges.iter().enumerate() {
            let z = PreparedDiff::cube_of(&pos[i], u, lam, k);
            let dens = prep.cube_density_mass(u, lam, k, &z);
            let atoms = mass.get(&z).cloned().unwrap_or_else(|| vec![0.0; d]);
            let diff: Vec<f64> = (0..d).map(|j| atoms[j] + dens[j]).collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                g[i] += weight * diff[e.axis] / norm / nd;
            }
        }
    }
    g
}

/// Lower bound on 𝔡(μ_n(f), target) valid for every f with |f| ≤ t on the
/// given edges. For a fixed shift and scale, each cube Q only needs
/// ‖(μ_n(f) - ν)(Q)‖ ≥ dist(ν(Q), Π_i [-T_i(Q), T_i(Q)]), T_i(Q) being the
/// capacity mass of the axis-i edges with midpoint in Q; the node law is
/// dropped. The best of a few fixed shifts is returned.
pub fn capacity_floor(edges: &[EdgeId], t: &Capacities<f64>, n: i64, target: &VectorMeasure, k_max: u32) -> f64 {
    let d = target.d;
    let prep = PreparedDiff::new(&VectorMeasure::zero(d), target);
    if prep.is_zero() {
        return 0.0;
    }
    let nd = (n as f64).powi(d as i32);
    let pos: Vec<Vec<f64>> = edges.iter().map(|e| midpoint(e, n).iter().map(q_to_f64).collect()).collect();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let hull = target.support_hull().into_iter().flat_map(|(a, b)| [a, b]);
    for p in pos.iter().cloned().chain(hull) {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let mut best = 0.0f64;
    for lam in [1.0, 1.25, 1.5, 1.75] {
        for shift in [0.0, 0.25] {
            let u = vec![shift; d];
            let mut total = 0.0;
            for k in 0..=k_max {
                let zlo = PreparedDiff::cube_of(&lo, &u, lam, k);
                let zhi = PreparedDiff::cube_of(&hi, &u, lam, k);
                let count: f64 = zlo.iter().zip(&zhi).map(|(a, b)| (b - a + 1) as f64).product();
                if count > 20000.0 {
                    break;
                }
                let mut cap: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
                for (e, p) in edges.iter().zip(&pos) {
                    let c = cap.entry(PreparedDiff::cube_of(p, &u, lam, k)).or_insert_with(|| vec![0.0; d]);
                    c[e.axis] += t.get(e).max(0.0) / nd;
                }
                let mut atoms: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
                for (p, w) in prep.atom_pos.iter().zip(&prep.atom_w) {
                    let a = atoms.entry(PreparedDiff::cube_of(p, &u, lam, k)).or_insert_with(|| vec![0.0; d]);
                    for j in 0..d {
                        a[j] += w[j];
                    }
                }
                let zero = vec![0.0; d];
                let mut level = 0.0;
                for z in int_box(&zlo, &zhi) {
                    // prep holds -ν
                    let dens = prep.cube_density_mass(&u, lam, k, &z);
                    let a = atoms.get(&z).unwrap_or(&zero);
                    let c = cap.get(&z).unwrap_or(&zero);
                    let gap: f64 = (0..d).map(|j| ((dens[j] + a[j]).abs() - c[j]).max(0.0).powi(2)).sum();
                    level += gap.sqrt();
                }
                total += 0.5f64.powi(k as i32) * level;
            }
            best = best.max(total);
        }
    }
    best
}

/// Searches the admissible streams in the box C for one whose measure lies
/// within ε of `target`: the discretized target is projected onto the
/// feasible polytope, then improved by projected subgradient steps on the
/// distance. "Holds" is certified by the distance upper bound only.
pub fn min_distance(
    c: &AxisBox,
    n: i64,
    t: &Capacities<f64>,
    target: &VectorMeasure,
    eps: f64,
    opts: &MinDistanceOptions,
) -> Result<MinDistance> {
    if n < 1 {
        return Err(FppError::pre("scale n must be at least 1"));
    }
    let d = c.dim();
    let edges = box_edges(c, n);
    let nq = Q::from_integer(n);
    let lo: Vec<i64> = c.lo.iter().map(|a| q_ceil(&(a * nq))).collect();
    let hi: Vec<i64> = c.hi.iter().map(|a| q_ceil(&(a * nq)) - 1).collect();
    let in_c = |x: &[i64]| x.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| a <= v && v <= b);
    let floor = capacity_floor(&edges, t, n, target, opts.distance.k_max);
    if floor > eps && opts.early_stop {
        return Ok(MinDistance {
            upper: f64::INFINITY,
            lower: floor,
            stream: Stream::new(d, n),
            status: Feasibility::Unknown,
            floor,
            evaluations: 0,
        });
    }
    let poly = Polytope::new(&edges, t, in_c);
    let mut dopts = opts.distance.clone();
    if opts.early_stop {
        dopts.threshold = Some(eps);
    }
    let mut evaluations = 0;
    let mut eval = |vals: &[f64]| -> (DistanceBracket, VectorMeasure) {
        evaluations += 1;
        let mu = vector_measure(&to_stream(d, n, &edges, vals));
        (distance(&mu, target, &dopts), mu)
    };
    let g0 = discretize_measure(target, &edges, n);
    let scale = g0.iter().chain(&poly.cap).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut cur = poly.project(&g0, opts.sweeps);
    let (mut br, mut mu) = eval(&cur);
    let mut best = (br.clone(), cur.clone());
    if br.upper > eps {
        let zero = vec![0.0; edges.len()];
        let (bz, _) = eval(&zero);
        if bz.upper < best.0.upper {
            best = (bz, zero);
        }
    }
    for step in 0..opts.steps {
        if best.0.upper <= eps {
            break;
        }
        let g = subgradient(&mu, target, &br.argmax, &edges, n, dopts.k_max);
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let eta = 0.5 * scale / gmax / ((step + 1) as f64).sqrt();
        let moved: Vec<f64> = cur.iter().zip(&g).map(|(v, gi)| v - eta * gi).collect();
        cur = poly.project(&moved, opts.sweeps);
        (br, mu) = eval(&cur);
        if br.upper < best.0.upper {
            best = (br.clone(), cur.clone());
        }
    }
    let (bracket, vals) = best;
    let status = if bracket.upper <= eps { Feasibility::Holds } else { Feasibility::Unknown };
    Ok(MinDistance {
        upper: bracket.upper,
        lower: bracket.lower,
        stream: to_stream(d, n, &edges, &vals),
        status,
        floor,
        evaluations,
    })
}

#[derive(Clone, Debug)]
pub struct RateConfig {
    pub s: f64,
    pub v: Vec<f64>,
    pub eps: f64,
    pub n: i64,
    pub trials: usize,
    pub dist: CapacityDistribution,
    pub seed: u64,
    pub solver: MinDistanceOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub s: f64,
    pub v: Vec<f64>,
    pub eps: f64,
    pub n: i64,
    pub trials: usize,
    pub successes: usize,
    pub phat: f64,
    pub lo: f64,
    pub hi: f64,
    /// -log p̂ / n^d, or -log(hi) / n^d when no trial succeeded
    pub i_hat: f64,
    /// true when `i_hat` comes from the upper interval end (zero successes)
    pub i_hat_is_lower_bound: bool,
    pub seed: u64,
}

impl RateEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Fraction of capacity samples in 𝔠 for which an admissible stream within
/// ε of s·v·1_𝔠·ℒ^d is found.
pub fn estimate_rate(cfg: &RateConfig) -> Result<RateEstimate> {
    if cfg.trials == 0 {
        return Err(FppError::config("trials", "must be positive"));
    }
    if cfg.n < 1 {
        return Err(FppError::config("n", "must be positive"));
    }
    if cfg.eps <= 0.0 {
        return Err(FppError::config("eps", "must be positive"));
    }
    cfg.dist.validate()?;
    let d = cfg.v.len();
    let cube = AxisBox::unit_cube(d);
    let target = VectorMeasure::constant_on(cube.clone(), cfg.v.iter().map(|x| x * cfg.s).collect());
    let edges = box_edges(&cube, cfg.n);
    let hits: Vec<bool> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let t: Capacities<f64> = sample_edges(&edges, &cfg.dist, derive_seed(cfg.seed, trial));
            min_distance(&cube, cfg.n, &t, &target, cfg.eps, &cfg.solver).map(|r| r.status == Feasibility::Holds)
        })
        .collect::<Result<_>>()?;
    let successes = hits.iter().filter(|h| **h).count();
    let phat = successes as f64 / cfg.trials as f64;
    let (lo, hi) = wilson(successes, cfg.trials);
    let nd = (cfg.n as f64).powi(d as i32);
    let (i_hat, flag) = if successes == 0 { (-hi.ln() / nd, true) } else { (-phat.ln() / nd, false) };
    Ok(RateEstimate {
        s: cfg.s,
        v: cfg.v.clone(),
        eps: cfg.eps,
        n: cfg.n,
        trials: cfg.trials,
        successes,
        phat,
        lo,
        hi,
        i_hat: i_hat.max(0.0),
        i_hat_is_lower_bound: flag,
        seed: cfg.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConstantEstimate {
    pub n: i64,
    pub trials: usize,
    pub mean: f64,
    pub half_width: f64,
    pub min: f64,
    pub max: f64,
    pub ratios: Vec<f64>,
}

/// Straight cylinder over A = [0,1]^{d-1} × {0} along `axis` with height h.
pub fn straight_cylinder(d: usize, axis: usize, h: Q) -> CylinderSpec {
    let mut lo = vec![Q::from_integer(0); d];
    let mut hi = vec![Q::from_integer(1); d];
    lo[axis] = Q::from_integer(0);
    hi[axis] = Q::from_integer(0);
    CylinderSpec::Axis(AxisCylinder { base: AxisBox { lo, hi }, axis, sign: 1, h })
}

/// Lattice points of the closed base A at scale n: the discrete area.
fn base_points(base: &AxisBox, axis: usize, n: i64) -> f64 {
    let nq = Q::from_integer(n);
    (0..base.dim())
        .filter(|&j| j != axis)
        .map(|j| (q_floor(&(base.hi[j] * nq)) - q_ceil(&(base.lo[j] * nq)) + 1).max(0) as f64)
        .product()
}

/// τ(nA, h(n)) normalized by the lattice area of A, per n.
pub fn estimate_flow_constant(
    d: usize,
    axis: usize,
    dist: &CapacityDistribution,
    n_list: &[i64],
    h_of_n: impl Fn(i64) -> Q + Sync,
    trials: usize,
    seed: u64,
) -> Result<Vec<FlowConstantEstimate>> {
    if trials == 0 {
        return Err(FppError::config("trials", "must be positive"));
    }
    if axis >= d {
        return Err(FppError::config("axis", "must be below the dimension"));
    }
    dist.validate()?;
    let mut out = Vec::new();
    for &n in n_list {
        let spec = straight_cylinder(d, axis, h_of_n(n));
        let CylinderSpec::Axis(cyl) = &spec else { unreachable!() };
        let area = base_points(&cyl.base, axis, n);
        let edges = crate::lattice::cylinder_sets(&spec, n)?.halves_domain()?.edges();
        let ratios: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|trial| {
                let t: Capacities<f64> = sample_edges(&edges, dist, derive_seed(derive_seed(seed, n as u64), trial));
                cylinder_flow_tau(&spec, n, &t).map(|tau| tau / area)
            })
            .collect::<Result<_>>()?;
        let mean = ratios.iter().sum::<f64>() / trials as f64;
        let var = if trials > 1 {
            ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (trials - 1) as f64
        } else {
            0.0
        };
        out.push(FlowConstantEstimate {
            n,
            trials,
            mean,
            half_width: Z95 * (var / trials as f64).sqrt(),
            min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            max: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ratios,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub lambda: f64,
    pub n: i64,
    pub trials: usize,
    pub successes: usize,
    pub phat: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TailEstimate {
    /// (-log p̂ / n^{d-1}, -log p̂ / n^d): which speed flattens the tail.
    pub fn speeds(&self, d: usize) -> (f64, f64) {
        let l = -self.phat.ln();
        let n = self.n as f64;
        (l / n.powi(d as i32 - 1), l / n.powi(d as i32))
    }
}

/// Fraction of samples with φ_n ≥ λ·n^{d-1} on the domain `lat`.
pub fn tail_probability(
    lambda: f64,
    lat: &LatticeDomain,
    trials: usize,
    dist: &CapacityDistribution,
    seed: u64,
) -> Result<TailEstimate> {
    if trials == 0 {
        return Err(FppError::config("trials", "must be positive"));
    }
    dist.validate()?;
    let edges = lat.edges();
    let level = lambda * (lat.n as f64).powi(lat.d as i32 - 1);
    let hits: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let t: Capacities<f64> = sample_edges(&edges, dist, derive_seed(seed, trial));
            let phi = max_flow(lat, &t).value;
            phi >= level - 1e-12 * level.abs().max(1.0)
        })
        .collect();
    let successes = hits.iter().filter(|h| **h).count();
    let (lo, hi) = wilson(successes, trials);
    Ok(TailEstimate { lambda, n: lat.n, trials, successes, phat: successes as f64 / trials as f64, lo, hi })
}
