//! Discrete streams: signed magnitudes on canonically oriented edges.

use crate::continuous::ContinuousField;
use crate::environment::{parse_edge_value, Capacities};
use crate::error::{FppError, Result};
use crate::lattice::{boundary_edge_set, int_box, AxisBox, EdgeId, Homothety, LatticeDomain, Pt, Side};
use crate::measure::VectorMeasure;
use crate::scalar::{q_ceil, q_floor, Scalar, Q};
use std::collections::{BTreeMap, BTreeSet};

/// f(e) = s(e)·e_axis for every edge in the support; absent edges carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream<S: Scalar> {
    pub d: usize,
    pub n: i64,
    values: BTreeMap<EdgeId, S>,
}

impl<S: Scalar> Stream<S> {
    pub fn new(d: usize, n: i64) -> Self {
        Stream { d, n, values: BTreeMap::new() }
    }

    pub fn get(&self, e: &EdgeId) -> S {
        self.values.get(e).cloned().unwrap_or_else(S::zero)
    }

    pub fn set(&mut self, e: EdgeId, v: S) {
        if v.is_zero() {
            self.values.remove(&e);
        } else {
            self.values.insert(e, v);
        }
    }

    pub fn add(&mut self, e: &EdgeId, v: &S) {
        if v.is_zero() {
            return;
        }
        let mut cur = self.get(e);
        cur += v.clone();
        self.set(e.clone(), cur);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EdgeId, &S)> {
        self.values.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &EdgeId> {
        self.values.keys()
    }

    pub fn support_len(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `c·g` to self.
    pub fn add_scaled(&mut self, g: &Stream<S>, c: &S) {
        for (e, v) in g.iter() {
            let mut w = v.clone();
            w *= c.clone();
            self.add(e, &w);
        }
    }

    pub fn scaled(&self, c: &S) -> Stream<S> {
        let mut out = Stream::new(self.d, self.n);
        out.add_scaled(self, c);
        out
    }

    pub fn max_abs(&self) -> S {
        self.values.values().fold(S::zero(), |m, v| S::max_s(&m, &v.abs()))
    }

    /// Drops entries that are zero up to the float tolerance.
    pub fn prune(&mut self) {
        let scale = self.max_abs();
        self.values.retain(|_, v| !v.near_zero(&scale));
    }

    /// Vertices touched by the support.
    pub fn touched_vertices(&self) -> BTreeSet<Pt> {
        let mut out = BTreeSet::new();
        for e in self.values.keys() {
            out.insert(e.x.clone());
            out.insert(e.head());
        }
        out
    }

    /// d f(x) = n Σ_y f(<x,y>)·(x - y): inflow minus outflow.
    pub fn divergence_at(&self, x: &[i64]) -> S {
        let mut div = S::zero();
        for a in 0..self.d {
            let out = EdgeId::new(x.to_vec(), a);
            div -= self.get(&out);
            let mut y = x.to_vec();
            y[a] -= 1;
            div += self.get(&EdgeId::new(y, a));
        }
        div
    }

    /// Signed sum of the values on a set of edges.
    pub fn sum_over(&self, edges: &[EdgeId]) -> S {
        let mut s = S::zero();
        for e in edges {
            s += self.get(e);
        }
        s
    }

    pub fn map_to_f64(&self) -> Stream<f64> {
        Stream { d: self.d, n: self.n, values: self.values.iter().map(|(e, v)| (e.clone(), v.to_f64_lossy())).collect() }
    }

    /// Header "d n", then "x_1 .. x_d axis value" with a 1-based axis.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.d, self.n);
        for (e, v) in &self.values {
            for c in &e.x {
                s.push_str(&c.to_string());
                s.push(' ');
            }
            s.push_str(&format!("{} {}\n", e.axis + 1, v.to_exact_string()));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let (_, header) = lines.next().ok_or_else(|| FppError::Parse("missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 2 {
            return Err(FppError::Parse("header must be \"d n\"".into()));
        }
        let d: usize = h[0].parse().map_err(|_| FppError::Parse("bad dimension".into()))?;
        let n: i64 = h[1].parse().map_err(|_| FppError::Parse("bad scale".into()))?;
        let mut f = Stream::new(d, n);
        for (ln, line) in lines {
            let (e, v) = parse_edge_value::<S>(line).map_err(|m| FppError::Parse(format!("line {}: {m}", ln + 1)))?;
            if e.x.len() != d {
                return Err(FppError::Parse(format!("line {}: expected {d} coordinates", ln + 1)));
            }
            f.set(e, v);
        }
        Ok(f)
    }

    pub fn from_map(d: usize, n: i64, values: BTreeMap<EdgeId, S>) -> Self {
        let mut f = Stream::new(d, n);
        for (e, v) in values {
            f.set(e, v);
        }
        f
    }
}

/// Verdicts of the three admissibility conditions with their witnesses.
#[derive(Clone, Debug, Default)]
pub struct AdmissibilityReport {
    pub support_ok: bool,
    pub capacity_ok: bool,
    pub node_law_ok: bool,
    pub bad_support: Vec<EdgeId>,
    pub bad_capacity: Vec<EdgeId>,
    pub bad_nodes: Vec<Pt>,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.support_ok && self.capacity_ok && self.node_law_ok
    }

    fn finish(mut self) -> Self {
        self.support_ok = self.bad_support.is_empty();
        self.capacity_ok = self.bad_capacity.is_empty();
        self.node_law_ok = self.bad_nodes.is_empty();
        self
    }
}

fn exceeds<S: Scalar>(v: &S, cap: &S) -> bool {
    let excess = v.abs() - cap.clone();
    excess > S::zero() && !excess.near_zero(cap)
}

/// Admissibility of a stream from Γ¹ to Γ² through Ω.
pub fn admissibility_report<S: Scalar>(f: &Stream<S>, t: &Capacities<S>, lat: &LatticeDomain) -> AdmissibilityReport {
    let mut r = AdmissibilityReport::default();
    for (e, v) in f.iter() {
        if !lat.edge_allowed(e) {
            r.bad_support.push(e.clone());
        }
        if exceeds(v, &t.get(e)) {
            r.bad_capacity.push(e.clone());
        }
    }
    let scale = f.max_abs();
    for x in f.touched_vertices() {
        if lat.is_terminal(&x) {
            continue;
        }
        if !f.divergence_at(&x).near_zero(&scale) {
            r.bad_nodes.push(x);
        }
    }
    r.finish()
}

/// Admissibility through a set C: capacity on edges with left endpoint in C,
/// node law at x ∈ C whose backward neighbours x - e_i/n all lie in C.
pub fn admissibility_region_report<S: Scalar>(
    f: &Stream<S>,
    t: &Capacities<S>,
    in_c: impl Fn(&[i64]) -> bool,
) -> AdmissibilityReport {
    let mut r = AdmissibilityReport::default();
    for (e, v) in f.iter() {
        if in_c(&e.x) && exceeds(v, &t.get(e)) {
            r.bad_capacity.push(e.clone());
        }
    }
    let scale = f.max_abs();
    for x in f.touched_vertices() {
        if !in_c(&x) {
            continue;
        }
        let inner = (0..f.d).all(|a| {
            let mut y = x.clone();
            y[a] -= 1;
            in_c(&y)
        });
        if inner && !f.divergence_at(&x).near_zero(&scale) {
            r.bad_nodes.push(x);
        }
    }
    r.finish()
}

/// Node-law check at every touched vertex not accepted by `exempt`.
pub fn node_law_violations<S: Scalar>(f: &Stream<S>, exempt: impl Fn(&[i64]) -> bool) -> Vec<Pt> {
    let scale = f.max_abs();
    f.touched_vertices()
        .into_iter()
        .filter(|x| !exempt(x) && !f.divergence_at(x).near_zero(&scale))
        .collect()
}

/// μ_n(f) = n^{-d} Σ_e f(e) δ_{c(e)}.
pub fn vector_measure<S: Scalar>(f: &Stream<S>) -> VectorMeasure {
    let mut mu = VectorMeasure::zero(f.d);
    let nd = (f.n as f64).powi(f.d as i32);
    for (e, v) in f.iter() {
        let point: Vec<Q> = e
            .x
            .iter()
            .enumerate()
            .map(|(j, &c)| if j == e.axis { Q::new(2 * c + 1, 2 * f.n) } else { Q::new(c, f.n) })
            .collect();
        let mut w = vec![0.0; f.d];
        w[e.axis] = v.to_f64_lossy() / nd;
        mu.push_atom(point, w);
    }
    mu
}

/// flow_n(f) = Σ_{x∈Γ¹} Σ_{y∈Ω_n} n f(<x,y>)·(y - x).
pub fn flow_value<S: Scalar>(f: &Stream<S>, lat: &LatticeDomain) -> S {
    let mut total = S::zero();
    for x in lat.gamma1() {
        for a in 0..lat.d {
            let mut y = x.clone();
            y[a] += 1;
            if lat.contains(&y) {
                total += f.get(&EdgeId::new(x.clone(), a));
            }
            y[a] -= 2;
            if lat.contains(&y) {
                total -= f.get(&EdgeId::new(y, a));
            }
        }
    }
    total
}

/// ψ_i^±(f, A) = Σ_{e ∈ E_n^{i,±}[A]} f(e)·e_i.
pub fn face_flux<S: Scalar>(f: &Stream<S>, a: &AxisBox, i: usize, side: Side) -> Result<S> {
    let edges = boundary_edge_set(i, side, a, f.n)?;
    Ok(f.sum_over(&edges))
}

/// Which edges a discretized field charges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscretizeRule {
    /// Edges whose dual plaquette lies in the closed box C get
    /// damping·n^{d-1}·∫_{P(e)} σ·e_i; all others get 0.
    Plaquette,
    /// Edges whose left endpoint lies in the half-open box C get
    /// damping·σ(c(e))·e_i, the field value at the midpoint.
    LeftEndpoint,
}

/// Discretization of a piecewise-constant field over the box C.
pub fn discretize_field<S: Scalar>(
    sigma: &ContinuousField<S>,
    c: &AxisBox,
    n: i64,
    damping: &S,
    rule: DiscretizeRule,
) -> Result<Stream<S>> {
    if n < 1 {
        return Err(FppError::pre("scale n must be at least 1"));
    }
    let d = sigma.d;
    if c.dim() != d {
        return Err(FppError::pre("box dimension does not match the field"));
    }
    let nq = Q::from_integer(n);
    let lo: Vec<i64> = c.lo.iter().map(|a| q_floor(&(a * nq)) - 1).collect();
    let hi: Vec<i64> = c.hi.iter().map(|a| q_ceil(&(a * nq)) + 1).collect();
    let mut f = Stream::new(d, n);
    let half = Q::new(1, 2 * n);
    for x in int_box(&lo, &hi) {
        for i in 0..d {
            let e = EdgeId::new(x.clone(), i);
            let mid: Vec<Q> = (0..d)
                .map(|j| if j == i { Q::new(2 * x[j] + 1, 2 * n) } else { Q::new(x[j], n) })
                .collect();
            let val = match rule {
                DiscretizeRule::LeftEndpoint => {
                    if !c.contains_half_open(&x, n) {
                        continue;
                    }
                    let mut v = sigma.value_at(&mid)?[i].clone();
                    v *= damping.clone();
                    v
                }
                DiscretizeRule::Plaquette => {
                    let mut p = AxisBox { lo: mid.clone(), hi: mid.clone() };
                    for j in 0..d {
                        if j != i {
                            p.lo[j] = mid[j] - half;
                            p.hi[j] = mid[j] + half;
                        }
                    }
                    let inside = (0..d).all(|j| c.lo[j] <= p.lo[j] && p.hi[j] <= c.hi[j]);
                    if !inside {
                        continue;
                    }
                    let mut v = sigma.face_integral(&p, i)?;
                    v *= S::from_q(&Q::from_integer(n).pow(d as i32 - 1));
                    v *= damping.clone();
                    v
                }
            };
            f.set(e, val);
        }
    }
    Ok(f)
}

/// Pushforward of a scale-n0 stream under the homothety π_{x,n0/n}.
pub fn rescale_stream<S: Scalar>(f: &Stream<S>, pi: &Homothety) -> Result<Stream<S>> {
    if f.n != pi.n0 {
        return Err(FppError::pre(format!("stream is at scale {}, homothety expects {}", f.n, pi.n0)));
    }
    let mut g = Stream::new(f.d, pi.n);
    for (e, v) in f.iter() {
        g.set(pi.map_edge(e), v.clone());
    }
    Ok(g)
}
