//! Lattice geometry at scale n. A point p of Z^d/n is stored as the integer
//! vector n*p, so every membership test below is exact integer/rational work
//! except for tilted cylinders.

use crate::error::{FppError, Result};
use crate::scalar::{q_ceil, q_floor, q_to_f64, Q};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

/// Integer coordinates of a lattice vertex at the current scale.
pub type Pt = Vec<i64>;

/// Tolerance for float membership in tilted cylinders.
pub const TILT_TOL: f64 = 1e-9;

/// Edge <x, x + e_axis/n>, always stored in the +e_axis orientation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub x: Pt,
    pub axis: usize,
}

impl EdgeId {
    pub fn new(x: Pt, axis: usize) -> Self {
        EdgeId { x, axis }
    }

    pub fn head(&self) -> Pt {
        let mut y = self.x.clone();
        y[self.axis] += 1;
        y
    }

    /// The edge joining `a` and `b` if they are lattice neighbours, together with
    /// +1 when a -> b follows the canonical orientation and -1 otherwise.
    pub fn between(a: &[i64], b: &[i64]) -> Option<(EdgeId, i8)> {
        let mut axis = None;
        for j in 0..a.len() {
            let diff = b[j] - a[j];
            if diff == 0 {
                continue;
            }
            if diff.abs() != 1 || axis.is_some() {
                return None;
            }
            axis = Some((j, diff));
        }
        let (j, diff) = axis?;
        if diff == 1 {
            Some((EdgeId::new(a.to_vec(), j), 1))
        } else {
            Some((EdgeId::new(b.to_vec(), j), -1))
        }
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{:?}+e{}>", self.x, self.axis + 1)
    }
}

/// Axis-aligned box with rational corners. A box whose extent vanishes along
/// exactly one axis is used as a (d-1)-face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AxisBox {
    pub lo: Vec<Q>,
    pub hi: Vec<Q>,
}

impl AxisBox {
    pub fn new(lo: Vec<Q>, hi: Vec<Q>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(FppError::pre("box corners must have equal positive length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(FppError::pre("box with lo > hi"));
        }
        Ok(AxisBox { lo, hi })
    }

    pub fn from_ints(lo: &[i64], hi: &[i64]) -> Self {
        AxisBox {
            lo: lo.iter().map(|&a| Q::from_integer(a)).collect(),
            hi: hi.iter().map(|&a| Q::from_integer(a)).collect(),
        }
    }

    /// The unit cube [-1/2, 1/2)^d.
    pub fn unit_cube(d: usize) -> Self {
        AxisBox { lo: vec![Q::new(-1, 2); d], hi: vec![Q::new(1, 2); d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Axis along which the box is flat, if it is a face.
    pub fn normal_axis(&self) -> Option<usize> {
        let flat: Vec<usize> = (0..self.dim()).filter(|&j| self.lo[j] == self.hi[j]).collect();
        if flat.len() == 1 {
            Some(flat[0])
        } else {
            None
        }
    }

    pub fn is_solid(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| a < b)
    }

    /// (d-1)-dimensional measure of a face, d-dimensional volume of a solid box.
    pub fn measure(&self) -> Q {
        let mut v = Q::from_integer(1);
        for j in 0..self.dim() {
            let w = self.hi[j] - self.lo[j];
            if w != Q::from_integer(0) {
                v *= w;
            }
        }
        v
    }

    /// n * d_inf(k/n, closed box), exact.
    pub fn scaled_dist_inf(&self, k: &[i64], n: i64) -> Q {
        let nq = Q::from_integer(n);
        let mut best = Q::from_integer(0);
        for j in 0..self.dim() {
            let kj = Q::from_integer(k[j]);
            let below = self.lo[j] * nq - kj;
            let above = kj - self.hi[j] * nq;
            if below > best {
                best = below;
            }
            if above > best {
                best = above;
            }
        }
        best
    }

    pub fn contains_closed(&self, k: &[i64], n: i64) -> bool {
        let nq = Q::from_integer(n);
        (0..self.dim()).all(|j| {
            let kj = Q::from_integer(k[j]);
            self.lo[j] * nq <= kj && kj <= self.hi[j] * nq
        })
    }

    /// Half-open membership Π[lo_j, hi_j); flat axes use equality.
    pub fn contains_half_open(&self, k: &[i64], n: i64) -> bool {
        let nq = Q::from_integer(n);
        (0..self.dim()).all(|j| {
            let kj = Q::from_integer(k[j]);
            if self.lo[j] == self.hi[j] {
                self.lo[j] * nq == kj
            } else {
                self.lo[j] * nq <= kj && kj < self.hi[j] * nq
            }
        })
    }

    /// Half-open membership of a rational point.
    pub fn contains_point(&self, p: &[Q]) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= p[j] && p[j] < self.hi[j])
    }

    /// Closed boxes meet iff their projections overlap on every axis.
    pub fn meets_closed(&self, other: &AxisBox) -> bool {
        (0..self.dim()).all(|j| {
            let lo = if self.lo[j] > other.lo[j] { self.lo[j] } else { other.lo[j] };
            let hi = if self.hi[j] < other.hi[j] { self.hi[j] } else { other.hi[j] };
            lo <= hi
        })
    }

    /// d_inf between two closed boxes.
    pub fn dist_inf(&self, other: &AxisBox) -> Q {
        let mut best = Q::from_integer(0);
        for j in 0..self.dim() {
            let g1 = other.lo[j] - self.hi[j];
            let g2 = self.lo[j] - other.hi[j];
            if g1 > best {
                best = g1;
            }
            if g2 > best {
                best = g2;
            }
        }
        best
    }

    /// Integer range of scaled coordinates that can lie within distance < 1/n.
    fn scaled_hull(&self, n: i64) -> (Vec<i64>, Vec<i64>) {
        let nq = Q::from_integer(n);
        let lo = self.lo.iter().map(|a| q_floor(&(a * nq)) - 1).collect();
        let hi = self.hi.iter().map(|a| q_ceil(&(a * nq)) + 1).collect();
        (lo, hi)
    }
}

/// Iterates over the integer box [lo, hi] (inclusive) in lexicographic order.
pub fn int_box(lo: &[i64], hi: &[i64]) -> Vec<Pt> {
    let d = lo.len();
    if (0..d).any(|j| lo[j] > hi[j]) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = lo.to_vec();
    loop {
        out.push(cur.clone());
        let mut j = d;
        loop {
            if j == 0 {
                return out;
            }
            j -= 1;
            if cur[j] < hi[j] {
                cur[j] += 1;
                for t in j + 1..d {
                    cur[t] = lo[t];
                }
                break;
            }
        }
    }
}

/// Domain specification: Ω a finite union of open boxes, Γ¹ and Γ² finite
/// unions of faces lying on ∂Ω.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub d: usize,
    pub region: Vec<AxisBox>,
    pub gamma1: Vec<AxisBox>,
    pub gamma2: Vec<AxisBox>,
}

impl DomainSpec {
    /// (0,1)^d with Γ¹ = {x_axis = 0} and Γ² = {x_axis = 1}.
    pub fn unit_slab(d: usize, axis: usize) -> Self {
        let cube = AxisBox::from_ints(&vec![0; d], &vec![1; d]);
        let mut g1 = cube.clone();
        g1.hi[axis] = Q::from_integer(0);
        let mut g2 = cube.clone();
        g2.lo[axis] = Q::from_integer(1);
        DomainSpec { d, region: vec![cube], gamma1: vec![g1], gamma2: vec![g2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(FppError::config("dimension", "d must be at least 2"));
        }
        if self.region.is_empty() {
            return Err(FppError::config("region", "no boxes"));
        }
        for (i, b) in self.region.iter().enumerate() {
            if b.dim() != self.d {
                return Err(FppError::config(format!("region[{i}]"), "wrong dimension"));
            }
            if !b.is_solid() {
                return Err(FppError::config(format!("region[{i}]"), "box has an empty side"));
            }
        }
        for (name, faces) in [("gamma1", &self.gamma1), ("gamma2", &self.gamma2)] {
            for (i, f) in faces.iter().enumerate() {
                if f.dim() != self.d {
                    return Err(FppError::config(format!("{name}[{i}]"), "wrong dimension"));
                }
                let Some(a) = f.normal_axis() else {
                    return Err(FppError::config(format!("{name}[{i}]"), "not a (d-1)-face"));
                };
                // the face must sit on the boundary of some region box
                let on_boundary = self.region.iter().any(|b| {
                    (f.lo[a] == b.lo[a] || f.lo[a] == b.hi[a])
                        && (0..self.d).filter(|&j| j != a).all(|j| b.lo[j] <= f.lo[j] && f.hi[j] <= b.hi[j])
                });
                if !on_boundary {
                    return Err(FppError::config(format!("{name}[{i}]"), "face is not on the region boundary"));
                }
            }
        }
        for f1 in &self.gamma1 {
            for f2 in &self.gamma2 {
                if f1.dist_inf(f2) <= Q::from_integer(0) {
                    return Err(FppError::config("gamma2", "source and sink are not separated"));
                }
            }
        }
        Ok(())
    }

    fn dist_to(faces: &[AxisBox], k: &[i64], n: i64) -> Option<Q> {
        faces.iter().map(|f| f.scaled_dist_inf(k, n)).min()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Interior,
    Source,
    Sink,
}

/// Vertex set Ω_n together with boundary Γ_n and the source/sink sets.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    pub d: usize,
    pub n: i64,
    pub vertices: Vec<Pt>,
    index: HashMap<Pt, usize>,
    pub boundary: Vec<bool>,
    pub role: Vec<Role>,
}

impl LatticeDomain {
    /// Builds a domain from an explicit vertex set. Γ_n is recomputed as the
    /// vertices with a lattice neighbour outside the set.
    pub fn from_parts(d: usize, n: i64, vertices: Vec<Pt>, sources: &HashSet<Pt>, sinks: &HashSet<Pt>) -> Result<Self> {
        let set: BTreeSet<Pt> = vertices.into_iter().collect();
        let vertices: Vec<Pt> = set.into_iter().collect();
        if vertices.is_empty() {
            return Err(FppError::EmptyDomain("no lattice vertex".into()));
        }
        let index: HashMap<Pt, usize> = vertices.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut boundary = vec![false; vertices.len()];
        let mut role = vec![Role::Interior; vertices.len()];
        for (i, x) in vertices.iter().enumerate() {
            let mut y = x.clone();
            'outer: for j in 0..d {
                for s in [-1, 1] {
                    y[j] += s;
                    let out = !index.contains_key(&y);
                    y[j] -= s;
                    if out {
                        boundary[i] = true;
                        break 'outer;
                    }
                }
            }
            let src = sources.contains(x);
            let snk = sinks.contains(x);
            if src && snk {
                return Err(FppError::invariant(format!("vertex {x:?} is both source and sink")));
            }
            role[i] = if src {
                Role::Source
            } else if snk {
                Role::Sink
            } else {
                Role::Interior
            };
        }
        Ok(LatticeDomain { d, n, vertices, index, boundary, role })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.index.contains_key(x)
    }

    pub fn role_of(&self, x: &[i64]) -> Option<Role> {
        self.index_of(x).map(|i| self.role[i])
    }

    pub fn is_terminal(&self, x: &[i64]) -> bool {
        matches!(self.role_of(x), Some(Role::Source) | Some(Role::Sink))
    }

    fn collect(&self, pred: impl Fn(usize) -> bool) -> Vec<Pt> {
        (0..self.len()).filter(|&i| pred(i)).map(|i| self.vertices[i].clone()).collect()
    }

    pub fn gamma(&self) -> Vec<Pt> {
        self.collect(|i| self.boundary[i])
    }

    pub fn gamma1(&self) -> Vec<Pt> {
        self.collect(|i| self.role[i] == Role::Source)
    }

    pub fn gamma2(&self) -> Vec<Pt> {
        self.collect(|i| self.role[i] == Role::Sink)
    }

    /// Edges a stream may charge: both endpoints in Ω_n and not both in Γ¹ ∪ Γ².
    pub fn edge_allowed(&self, e: &EdgeId) -> bool {
        let (Some(a), Some(b)) = (self.index_of(&e.x), self.index_of(&e.head())) else {
            return false;
        };
        self.role[a] == Role::Interior || self.role[b] == Role::Interior
    }

    /// All allowed edges, sorted.
    pub fn edges(&self) -> Vec<EdgeId> {
        let mut out = Vec::new();
        for x in &self.vertices {
            for a in 0..self.d {
                let e = EdgeId::new(x.clone(), a);
                if self.edge_allowed(&e) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// The 2d lattice neighbours of x (whether in the domain or not).
    pub fn neighbours(&self, x: &[i64]) -> Vec<Pt> {
        let mut out = Vec::with_capacity(2 * self.d);
        for j in 0..self.d {
            for s in [-1, 1] {
                let mut y = x.to_vec();
                y[j] += s;
                out.push(y);
            }
        }
        out
    }
}

/// Discretizes (Ω, Γ¹, Γ²) at scale n.
pub fn discretize_domain(spec: &DomainSpec, n: i64) -> Result<LatticeDomain> {
    if n < 1 {
        return Err(FppError::pre("scale n must be at least 1"));
    }
    spec.validate()?;
    let one = Q::from_integer(1);
    let mut verts = BTreeSet::new();
    for b in &spec.region {
        let (lo, hi) = b.scaled_hull(n);
        for k in int_box(&lo, &hi) {
            if spec.region.iter().any(|r| r.scaled_dist_inf(&k, n) < one) {
                verts.insert(k);
            }
        }
    }
    if verts.is_empty() {
        return Err(FppError::EmptyDomain(format!("Ω_n is empty at n = {n}")));
    }
    let verts: Vec<Pt> = verts.into_iter().collect();
    let set: HashSet<&Pt> = verts.iter().collect();
    let on_boundary = |x: &Pt| {
        (0..spec.d).any(|j| {
            [-1, 1].iter().any(|s| {
                let mut y = x.clone();
                y[j] += s;
                !set.contains(&y)
            })
        })
    };
    let mut sources = HashSet::new();
    let mut sinks = HashSet::new();
    for x in verts.iter().filter(|x| on_boundary(x)) {
        let d1 = DomainSpec::dist_to(&spec.gamma1, x, n);
        let d2 = DomainSpec::dist_to(&spec.gamma2, x, n);
        let near = |d: &Option<Q>| matches!(d, Some(v) if *v < one);
        let far = |d: &Option<Q>| !near(d);
        if near(&d1) && far(&d2) {
            sources.insert(x.clone());
        } else if near(&d2) && far(&d1) {
            sinks.insert(x.clone());
        }
    }
    LatticeDomain::from_parts(spec.d, n, verts, &sources, &sinks)
}

/// Cylinder with an axis direction: base face A (flat along `axis`), height h,
/// direction sign·e_axis. Evaluated exactly.
#[derive(Clone, Debug)]
pub struct AxisCylinder {
    pub base: AxisBox,
    pub axis: usize,
    pub sign: i64,
    pub h: Q,
}

impl AxisCylinder {
    /// The closed solid A + [-h, h]·v.
    pub fn solid(&self) -> AxisBox {
        let mut b = self.base.clone();
        b.lo[self.axis] = self.base.lo[self.axis] - self.h;
        b.hi[self.axis] = self.base.lo[self.axis] + self.h;
        b
    }

    fn face_at(&self, t: Q) -> AxisBox {
        let mut b = self.base.clone();
        let c = self.base.lo[self.axis] + t * Q::from_integer(self.sign);
        b.lo[self.axis] = c;
        b.hi[self.axis] = c;
        b
    }

    pub fn top(&self) -> AxisBox {
        self.face_at(self.h)
    }

    pub fn bottom(&self) -> AxisBox {
        self.face_at(-self.h)
    }
}

/// Cylinder with an arbitrary direction, evaluated in floating point.
/// `basis` spans the hyperplane of A; `half` are the half side lengths.
#[derive(Clone, Debug)]
pub struct TiltedCylinder {
    pub center: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub half: Vec<f64>,
    pub v: Vec<f64>,
    pub h: f64,
}

impl TiltedCylinder {
    /// Coordinates (a_1..a_{d-1}, t) of p - center in the frame (basis, v).
    pub fn frame_coords(&self, p: &[f64]) -> Vec<f64> {
        let d = p.len();
        // columns: basis vectors then v
        let mut m = vec![vec![0.0; d + 1]; d];
        for r in 0..d {
            for (c, u) in self.basis.iter().enumerate() {
                m[r][c] = u[r];
            }
            m[r][d - 1] = self.v[r];
            m[r][d] = p[r] - self.center[r];
        }
        solve_dense(m)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let c = self.frame_coords(p);
        let d = p.len();
        (0..d - 1).all(|j| c[j].abs() <= self.half[j] + TILT_TOL) && c[d - 1].abs() <= self.h + TILT_TOL
    }

    /// Whether the segment [p, q] meets the cap at height t_cap (= ±h).
    fn segment_meets_cap(&self, p: &[f64], q: &[f64], t_cap: f64) -> bool {
        let cp = self.frame_coords(p);
        let cq = self.frame_coords(q);
        let d = p.len();
        let (tp, tq) = (cp[d - 1], cq[d - 1]);
        let s = if (tq - tp).abs() < TILT_TOL {
            if (tp - t_cap).abs() > TILT_TOL {
                return false;
            }
            0.0
        } else {
            (t_cap - tp) / (tq - tp)
        };
        if s < -TILT_TOL || s > 1.0 + TILT_TOL {
            return false;
        }
        (0..d - 1).all(|j| (cp[j] + s * (cq[j] - cp[j])).abs() <= self.half[j] + TILT_TOL)
    }
}

/// Gaussian elimination with partial pivoting on an augmented d×(d+1) matrix.
fn solve_dense(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let d = m.len();
    for c in 0..d {
        let piv = (c..d).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, piv);
        let p = m[c][c];
        for r in 0..d {
            if r != c {
                let f = m[r][c] / p;
                for k in c..=d {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..d).map(|r| m[r][d] / m[r][r]).collect()
}

/// Membership predicate over R^d.
#[derive(Clone, Debug)]
pub enum Region {
    /// Union of boxes, closed or half-open Π[lo, hi).
    Boxes { boxes: Vec<AxisBox>, closed: bool },
    AxisCylinder(AxisCylinder),
    Tilted(TiltedCylinder),
}

impl Region {
    pub fn contains_scaled(&self, k: &[i64], n: i64) -> bool {
        match self {
            Region::Boxes { boxes, closed } => boxes
                .iter()
                .any(|b| if *closed { b.contains_closed(k, n) } else { b.contains_half_open(k, n) }),
            Region::AxisCylinder(c) => c.solid().contains_closed(k, n),
            Region::Tilted(c) => {
                let p: Vec<f64> = k.iter().map(|&a| a as f64 / n as f64).collect();
                c.contains(&p)
            }
        }
    }

    pub fn contains_f64(&self, p: &[f64]) -> bool {
        match self {
            Region::Boxes { boxes, closed } => boxes.iter().any(|b| {
                (0..b.dim()).all(|j| {
                    let (lo, hi) = (q_to_f64(&b.lo[j]), q_to_f64(&b.hi[j]));
                    if *closed {
                        lo <= p[j] && p[j] <= hi
                    } else {
                        lo <= p[j] && p[j] < hi
                    }
                })
            }),
            Region::AxisCylinder(c) => {
                let b = c.solid();
                (0..b.dim()).all(|j| q_to_f64(&b.lo[j]) <= p[j] && p[j] <= q_to_f64(&b.hi[j]))
            }
            Region::Tilted(c) => c.contains(p),
        }
    }
}

/// Cylinder direction: an exact axis direction or a float unit vector.
#[derive(Clone, Debug)]
pub enum CylinderSpec {
    Axis(AxisCylinder),
    Tilted(TiltedCylinder),
}

/// Lattice vertex sets attached to a cylinder.
#[derive(Clone, Debug)]
pub struct CylinderSets {
    pub d: usize,
    pub n: i64,
    pub region: Region,
    pub vertices: Vec<Pt>,
    pub top: Vec<Pt>,
    pub bottom: Vec<Pt>,
    pub upper_half: Vec<Pt>,
    pub lower_half: Vec<Pt>,
    /// false for tilted cylinders, whose membership is only float-accurate
    pub exact: bool,
}

impl CylinderSets {
    /// Lattice domain with source T(A,h) and sink B(A,h).
    pub fn top_bottom_domain(&self) -> Result<LatticeDomain> {
        self.domain(&self.top, &self.bottom)
    }

    /// Lattice domain with source T'(A,h) and sink B'(A,h).
    pub fn halves_domain(&self) -> Result<LatticeDomain> {
        self.domain(&self.upper_half, &self.lower_half)
    }

    fn domain(&self, src: &[Pt], snk: &[Pt]) -> Result<LatticeDomain> {
        let s: HashSet<Pt> = src.iter().cloned().collect();
        let t: HashSet<Pt> = snk.iter().cloned().collect();
        LatticeDomain::from_parts(self.d, self.n, self.vertices.clone(), &s, &t)
    }
}

/// Vertices of Z^d/n inside cyl(A, h, v) and the sets T, B, T', B'.
pub fn cylinder_sets(spec: &CylinderSpec, n: i64) -> Result<CylinderSets> {
    if n < 1 {
        return Err(FppError::pre("scale n must be at least 1"));
    }
    match spec {
        CylinderSpec::Axis(c) => axis_cylinder_sets(c, n),
        CylinderSpec::Tilted(c) => tilted_cylinder_sets(c, n),
    }
}

fn axis_cylinder_sets(c: &AxisCylinder, n: i64) -> Result<CylinderSets> {
    let d = c.base.dim();
    if c.base.normal_axis() != Some(c.axis) {
        return Err(FppError::pre("cylinder base must be a face orthogonal to its direction"));
    }
    if c.sign != 1 && c.sign != -1 {
        return Err(FppError::pre("direction sign must be ±1"));
    }
    if c.h <= Q::from_integer(0) {
        return Err(FppError::pre("cylinder height must be positive"));
    }
    let solid = c.solid();
    let nq = Q::from_integer(n);
    let lo: Vec<i64> = solid.lo.iter().map(|a| q_ceil(&(a * nq))).collect();
    let hi: Vec<i64> = solid.hi.iter().map(|a| q_floor(&(a * nq))).collect();
    let vertices = int_box(&lo, &hi);
    if vertices.is_empty() {
        return Err(FppError::EmptyDomain("cylinder contains no lattice vertex".into()));
    }
    let top_face = c.top();
    let bot_face = c.bottom();
    let centre = c.base.lo[c.axis] * nq;
    let mut sets = CylinderSets {
        d,
        n,
        region: Region::AxisCylinder(c.clone()),
        vertices: vertices.clone(),
        top: vec![],
        bottom: vec![],
        upper_half: vec![],
        lower_half: vec![],
        exact: true,
    };
    // scaled copies of the caps let us test segment intersection in integers
    let scale_box = |b: &AxisBox| AxisBox {
        lo: b.lo.iter().map(|a| a * nq).collect(),
        hi: b.hi.iter().map(|a| a * nq).collect(),
    };
    let (top_s, bot_s) = (scale_box(&top_face), scale_box(&bot_face));
    for x in &vertices {
        let mut meets_top = false;
        let mut meets_bot = false;
        let mut outside = false;
        for j in 0..d {
            for s in [-1, 1] {
                let mut y = x.clone();
                y[j] += s;
                if solid.contains_closed(&y, n) {
                    continue;
                }
                outside = true;
                let seg = AxisBox::from_ints(
                    &x.iter().zip(&y).map(|(a, b)| *a.min(b)).collect::<Vec<_>>(),
                    &x.iter().zip(&y).map(|(a, b)| *a.max(b)).collect::<Vec<_>>(),
                );
                meets_top |= seg.meets_closed(&top_s);
                meets_bot |= seg.meets_closed(&bot_s);
            }
        }
        if !outside {
            continue;
        }
        if meets_top {
            sets.top.push(x.clone());
        }
        if meets_bot {
            sets.bottom.push(x.clone());
        }
        let side = (Q::from_integer(x[c.axis]) - centre) * Q::from_integer(c.sign);
        if side > Q::from_integer(0) {
            sets.upper_half.push(x.clone());
        } else if side < Q::from_integer(0) {
            sets.lower_half.push(x.clone());
        }
    }
    Ok(sets)
}

fn tilted_cylinder_sets(c: &TiltedCylinder, n: i64) -> Result<CylinderSets> {
    let d = c.center.len();
    if c.basis.len() + 1 != d || c.half.len() + 1 != d || c.v.len() != d {
        return Err(FppError::pre("tilted cylinder frame has the wrong shape"));
    }
    if c.half.iter().any(|&w| w <= 0.0) {
        return Err(FppError::pre("degenerate cylinder base"));
    }
    if c.h <= 0.0 {
        return Err(FppError::pre("cylinder height must be positive"));
    }
    // bounding box from the 2^d corners of the solid
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for mask in 0..(1u32 << d) {
        let mut p = c.center.clone();
        for (j, u) in c.basis.iter().enumerate() {
            let s = if mask >> j & 1 == 1 { c.half[j] } else { -c.half[j] };
            for r in 0..d {
                p[r] += s * u[r];
            }
        }
        let s = if mask >> (d - 1) & 1 == 1 { c.h } else { -c.h };
        for r in 0..d {
            p[r] += s * c.v[r];
            lo[r] = lo[r].min(p[r]);
            hi[r] = hi[r].max(p[r]);
        }
    }
    let nf = n as f64;
    let ilo: Vec<i64> = lo.iter().map(|a| (a * nf).floor() as i64 - 1).collect();
    let ihi: Vec<i64> = hi.iter().map(|a| (a * nf).ceil() as i64 + 1).collect();
    let to_f = |k: &[i64]| k.iter().map(|&a| a as f64 / nf).collect::<Vec<f64>>();
    let vertices: Vec<Pt> = int_box(&ilo, &ihi).into_iter().filter(|k| c.contains(&to_f(k))).collect();
    if vertices.is_empty() {
        return Err(FppError::EmptyDomain("cylinder contains no lattice vertex".into()));
    }
    let inside: HashSet<&Pt> = vertices.iter().collect();
    let mut sets = CylinderSets {
        d,
        n,
        region: Region::Tilted(c.clone()),
        vertices: vertices.clone(),
        top: vec![],
        bottom: vec![],
        upper_half: vec![],
        lower_half: vec![],
        exact: false,
    };
    for x in &vertices {
        let px = to_f(x);
        let mut outside = false;
        let (mut mt, mut mb) = (false, false);
        for j in 0..d {
            for s in [-1, 1] {
                let mut y = x.clone();
                y[j] += s;
                if inside.contains(&y) {
                    continue;
                }
                outside = true;
                let py = to_f(&y);
                mt |= c.segment_meets_cap(&px, &py, c.h);
                mb |= c.segment_meets_cap(&px, &py, -c.h);
            }
        }
        if !outside {
            continue;
        }
        if mt {
            sets.top.push(x.clone());
        }
        if mb {
            sets.bottom.push(x.clone());
        }
        let side: f64 = (0..d).map(|r| (px[r] - c.center[r]) * c.v[r]).sum();
        if side > TILT_TOL {
            sets.upper_half.push(x.clone());
        } else if side < -TILT_TOL {
            sets.lower_half.push(x.clone());
        }
    }
    Ok(sets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Plus,
    Minus,
}

/// E_n^{i,±}[A]: edges <x, x+e_i/n> whose half-open segment (x, x+e_i/n]
/// (for +) or [x, x+e_i/n) shifted as (x-e_i/n, x] (for −) meets the face A.
/// Transverse extent of A is half-open, matching the faces of [-1/2,1/2)^d.
pub fn boundary_edge_set(i: usize, side: Side, a: &AxisBox, n: i64) -> Result<Vec<EdgeId>> {
    if a.normal_axis() != Some(i) {
        return Err(FppError::pre(format!("face is not orthogonal to e{}", i + 1)));
    }
    let nq = Q::from_integer(n);
    let c = a.lo[i] * nq;
    let xi = match side {
        Side::Plus => q_ceil(&c) - 1,
        Side::Minus => q_ceil(&c),
    };
    let d = a.dim();
    let mut lo = vec![0; d];
    let mut hi = vec![0; d];
    for j in 0..d {
        if j == i {
            lo[j] = xi;
            hi[j] = xi;
        } else {
            lo[j] = q_ceil(&(a.lo[j] * nq));
            hi[j] = q_ceil(&(a.hi[j] * nq)) - 1;
        }
    }
    Ok(int_box(&lo, &hi).into_iter().map(|x| EdgeId::new(x, i)).collect())
}

/// The face 𝔠_i^± of the unit cube [-1/2,1/2)^d.
pub fn cube_face(d: usize, i: usize, side: Side) -> AxisBox {
    let mut f = AxisBox::unit_cube(d);
    let c = match side {
        Side::Plus => Q::new(1, 2),
        Side::Minus => Q::new(-1, 2),
    };
    f.lo[i] = c;
    f.hi[i] = c;
    f
}

/// Partition of 𝔠_i^± into m^{d-1} half-open cells of side 1/m.
pub fn face_partition(d: usize, i: usize, side: Side, m: i64) -> Result<Vec<AxisBox>> {
    if m < 1 {
        return Err(FppError::pre("face partition needs m >= 1"));
    }
    let face = cube_face(d, i, side);
    let lo = vec![0; d - 1];
    let hi = vec![m - 1; d - 1];
    let mut out = Vec::new();
    for cell in int_box(&lo, &hi) {
        let mut b = face.clone();
        let mut t = 0;
        for j in 0..d {
            if j == i {
                continue;
            }
            b.lo[j] = Q::new(-1, 2) + Q::new(cell[t], m);
            b.hi[j] = Q::new(-1, 2) + Q::new(cell[t] + 1, m);
            t += 1;
        }
        out.push(b);
    }
    Ok(out)
}

/// Sparse edge family at integer scale: axis-0 edges whose other coordinates
/// are multiples of K, plus edges on segments between K-neighbours of
/// {z} × KZ^{d-1}. Left endpoints restricted to the inclusive box [lo, hi].
pub fn sparse_edge_set(k: i64, lo: &[i64], hi: &[i64]) -> Result<Vec<EdgeId>> {
    if k < 1 {
        return Err(FppError::pre("K must be at least 1"));
    }
    let d = lo.len();
    let on_grid = |x: &[i64], skip: usize| (1..d).filter(|&j| j != skip).all(|j| x[j].rem_euclid(k) == 0);
    let mut out = Vec::new();
    for x in int_box(lo, hi) {
        for a in 0..d {
            let skip = if a == 0 { usize::MAX } else { a };
            if on_grid(&x, skip) {
                out.push(EdgeId::new(x.clone(), a));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Homothety π_{x,δ}(y) = δy + x mapping scale n0 onto scale n (δ = n0/n).
/// With x ∈ Z^d/n given as integer coordinates at scale n, an integer point
/// k at scale n0 maps to k + x at scale n.
#[derive(Clone, Debug)]
pub struct Homothety {
    pub shift: Pt,
    pub n0: i64,
    pub n: i64,
}

impl Homothety {
    pub fn new(shift: Pt, n0: i64, n: i64) -> Result<Self> {
        if n0 < 1 || n < n0 {
            return Err(FppError::pre("homothety needs 1 <= n0 <= n"));
        }
        Ok(Homothety { shift, n0, n })
    }

    pub fn map_point(&self, k: &[i64]) -> Pt {
        k.iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }

    pub fn map_edge(&self, e: &EdgeId) -> EdgeId {
        EdgeId::new(self.map_point(&e.x), e.axis)
    }

    /// Image of an exact box under the real map y ↦ (n0/n) y + shift/n.
    pub fn map_box(&self, b: &AxisBox) -> AxisBox {
        let delta = Q::new(self.n0, self.n);
        AxisBox {
            lo: b.lo.iter().zip(&self.shift).map(|(a, s)| a * delta + Q::new(*s, self.n)).collect(),
            hi: b.hi.iter().zip(&self.shift).map(|(a, s)| a * delta + Q::new(*s, self.n)).collect(),
        }
    }
}

/// Sorted integer-coordinate text list, one vertex per line.
pub fn points_to_text(pts: &[Pt]) -> String {
    let mut v = pts.to_vec();
    v.sort();
    let mut s = String::new();
    for p in v {
        let row: Vec<String> = p.iter().map(|a| a.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
