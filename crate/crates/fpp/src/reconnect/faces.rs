//! Face fluxes of a stream on a cube π(𝔠), well-behavedness, and the
//! residual stream that moves every mesoscopic face flux onto a target.

use super::alpha;
use super::mixing::{lift_sparse, mix, Family};
use crate::error::{FppError, Result};
use crate::lattice::{face_partition, int_box, AxisBox, EdgeId, Homothety, Pt, Side};
use crate::scalar::{q_ceil, Scalar, Q};
use crate::stream::{face_flux, Stream};
use std::collections::BTreeMap;

/// One cell A ∈ 𝒫_axis^side(m), indexed by its position in {0..m-1}^{d-1}.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaceCell {
    pub axis: usize,
    pub side: Side,
    pub cell: Vec<i64>,
}

/// A value per mesoscopic face cell.
pub type FaceFamily<S> = BTreeMap<FaceCell, S>;

const SIDES: [Side; 2] = [Side::Minus, Side::Plus];

/// Every face cell with its image box π(A).
fn cells(d: usize, m: i64, pi: &Homothety) -> Result<Vec<(FaceCell, AxisBox)>> {
    let idx = int_box(&vec![0; d - 1], &vec![m - 1; d - 1]);
    let mut out = Vec::new();
    for axis in 0..d {
        for side in SIDES {
            for (cell, bx) in idx.iter().zip(face_partition(d, axis, side, m)?) {
                out.push((FaceCell { axis, side, cell: cell.clone() }, pi.map_box(&bx)));
            }
        }
    }
    Ok(out)
}

/// ψ_i^⋄(f, π(A)) for every face cell A.
pub fn face_fluxes<S: Scalar>(f: &Stream<S>, pi: &Homothety, m: i64) -> Result<FaceFamily<S>> {
    if pi.n != f.n {
        return Err(FppError::pre(format!("stream at scale {} but homothety targets {}", f.n, pi.n)));
    }
    cells(f.d, m, pi)?.into_iter().map(|(c, bx)| Ok((c.clone(), face_flux(f, &bx, c.axis, c.side)?))).collect()
}

/// (1 - ε^{α/4})·s·v_i·ℋ^{d-1}(π(A))·n^{d-1}.
pub fn well_behaved_target<S: Scalar>(d: usize, eps: f64, s: &S, v_i: &S, area: &Q, n: i64) -> S {
    let damping = S::from_f64_exact(1.0 - eps.powf(alpha(d) / 4.0));
    let nd = S::from_i64(n).unwrap().powi(d as i32 - 1);
    damping * s.clone() * v_i.clone() * S::from_q(area) * nd
}

trait Powi {
    fn powi(self, k: i32) -> Self;
}

impl<S: Scalar> Powi for S {
    fn powi(self, k: i32) -> Self {
        (0..k).fold(S::one(), |a, _| a * self.clone())
    }
}

/// True when every mesoscopic face flux of `f` on π(𝔠) sits exactly at the
/// damped target (up to float tolerance in float mode).
pub fn is_well_behaved<S: Scalar>(f: &Stream<S>, eps: f64, s: &S, v: &[S], pi: &Homothety, m: i64) -> Result<bool> {
    if v.len() != f.d {
        return Err(FppError::pre("direction has the wrong dimension"));
    }
    for (c, bx) in cells(f.d, m, pi)? {
        let got = face_flux(f, &bx, c.axis, c.side)?;
        let want = well_behaved_target(f.d, eps, s, &v[c.axis], &bx.measure(), f.n);
        let scale = S::max_s(&want.abs(), &S::one());
        if !(got - want).near_zero(&scale) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The centred K-sublattice of a cube: coordinates centre_j + K·t with
/// |t| ≤ T, kept off the faces and coarse enough for the mixing step.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGrid {
    pub k: i64,
    pub t: i64,
    /// lowest vertex coordinate of the cube per axis
    pub lo: Pt,
    pub side: i64,
}

impl SparseGrid {
    pub fn new(d: usize, lo: Pt, side: i64, k: i64) -> Result<Self> {
        let cd = 2 * (d as i64 - 1);
        if k < cd {
            return Err(FppError::pre(format!("K = {k} is below 2(d-1) = {cd}")));
        }
        let reach = side / 2 - 1;
        let fit = side / cd;
        if reach < 0 || fit < 1 {
            return Err(FppError::pre(format!("cube of side {side} is too small for the sparse grid")));
        }
        let t = (reach / k).min((fit - 1) / 2);
        Ok(SparseGrid { k, t, lo, side })
    }

    pub fn centre(&self, axis: usize) -> i64 {
        self.lo[axis] + self.side / 2
    }

    /// Coarse side length 2T + 1.
    pub fn coarse(&self) -> i64 {
        2 * self.t + 1
    }

    fn coords(&self, axis: usize) -> Vec<i64> {
        (-self.t..=self.t).map(|t| self.centre(axis) + self.k * t).collect()
    }

    fn face_coord(&self, axis: usize, side: Side) -> i64 {
        match side {
            Side::Minus => self.lo[axis],
            Side::Plus => self.lo[axis] + self.side,
        }
    }

    /// Transverse coordinates of the grid points on a face of axis `i`.
    fn face_points(&self, i: usize) -> Vec<Pt> {
        let d = self.lo.len();
        let axes: Vec<usize> = (0..d).filter(|&a| a != i).collect();
        let lists: Vec<Vec<i64>> = axes.iter().map(|&a| self.coords(a)).collect();
        let lens: Vec<i64> = lists.iter().map(|l| l.len() as i64 - 1).collect();
        int_box(&vec![0; d - 1], &lens).into_iter().map(|ix| ix.iter().zip(&lists).map(|(&p, l)| l[p as usize]).collect()).collect()
    }
}

fn others(d: usize, axis: usize) -> Vec<usize> {
    (0..d).filter(|&a| a != axis).collect()
}

fn insert_at(key: &[i64], axis: usize, c: i64) -> Pt {
    let mut p = key.to_vec();
    p.insert(axis, c);
    p
}

/// Residual stream produced by face balancing.
#[derive(Clone, Debug)]
pub struct Balance<S: Scalar> {
    pub stream: Stream<S>,
    /// surplus/deficit pairings performed
    pub pair_steps: usize,
    /// faces with zero net discrepancy that still needed a redistribution
    pub zero_faces: usize,
    /// max |w_i(x)|, the per-point discrepancy
    pub max_share: S,
    pub grid: SparseGrid,
}

struct Balancer<'a, S: Scalar> {
    d: usize,
    grid: &'a SparseGrid,
    out: Stream<S>,
}

impl<S: Scalar> Balancer<'_, S> {
    /// Mixes along e_j: `inputs` on the minus face, `outputs` on the plus
    /// face, both keyed by transverse coordinates.
    fn mix_along(&mut self, j: usize, inputs: &BTreeMap<Pt, S>, outputs: &BTreeMap<Pt, S>) -> Result<()> {
        let g = self.grid;
        let axes = others(self.d, j);
        let bound = inputs.values().chain(outputs.values()).fold(S::zero(), |a, v| S::max_s(&a, &v.abs()));
        if bound.is_zero() {
            return Ok(());
        }
        let coarse = |f: &BTreeMap<Pt, S>| -> Family<S> {
            f.iter()
                .map(|(key, v)| {
                    let y = key.iter().zip(&axes).map(|(&c, &a)| (c - g.centre(a)) / g.k + g.t + 1).collect();
                    (y, v.clone())
                })
                .collect()
        };
        let mixed = mix(self.d, g.coarse(), &coarse(inputs), &coarse(outputs), g.side, &bound)?;
        for (e, v) in lift_sparse(&mixed, g.k).iter() {
            let mut p = vec![0; self.d];
            p[j] = g.lo[j] + e.x[0];
            for (r, &a) in axes.iter().enumerate() {
                p[a] = e.x[r + 1] - g.k * (g.t + 1) + g.centre(a);
            }
            let axis = if e.axis == 0 { j } else { axes[e.axis - 1] };
            self.out.add(&EdgeId::new(p, axis), v);
        }
        Ok(())
    }

    /// L-shaped path from face (i, side) at `key` to face (j, side) adding
    /// `share` to the flux of the first face and -share to the second;
    /// returns the key of the arrival point.
    fn transfer(&mut self, i: usize, j: usize, side: Side, key: &[i64], share: &S) -> Pt {
        let g = self.grid;
        let x = insert_at(key, i, g.face_coord(i, side));
        let cj = x[j];
        let ci = g.centre(i) + (cj - g.centre(j));
        let (fi, fj) = (g.face_coord(i, side), g.face_coord(j, side));
        let mut p = x.clone();
        match side {
            Side::Minus => {
                for t in fi..ci {
                    p[i] = t;
                    self.out.add(&EdgeId::new(p.clone(), i), share);
                }
                p[i] = ci;
                for t in fj..cj {
                    p[j] = t;
                    self.out.add(&EdgeId::new(p.clone(), j), &-share.clone());
                }
            }
            Side::Plus => {
                // mirror image: in along -e_i, out along +e_j
                for t in ci..fi {
                    p[i] = t;
                    self.out.add(&EdgeId::new(p.clone(), i), share);
                }
                p[i] = ci;
                for t in cj..fj {
                    p[j] = t;
                    self.out.add(&EdgeId::new(p.clone(), j), &-share.clone());
                }
            }
        }
        let mut tau = x;
        tau[i] = ci;
        tau.remove(j);
        tau
    }
}

/// Face balancing: a stream f^res on the cube π(𝔠) with
/// ψ(f^res, π(A)) = β_A - λ_A on every face cell, built from sparse mixings
/// and L-shaped transfer paths. `lambda` must equal the face fluxes of `f`.
pub fn balance_faces<S: Scalar>(
    f: &Stream<S>,
    pi: &Homothety,
    lambda: &FaceFamily<S>,
    beta: &FaceFamily<S>,
    m: i64,
    k: i64,
) -> Result<Balance<S>> {
    let d = f.d;
    let all = cells(d, m, pi)?;
    let psi = face_fluxes(f, pi, m)?;
    let scale = lambda.values().chain(beta.values()).fold(S::one(), |a, v| a + v.abs());
    for (c, _) in &all {
        let l = lambda.get(c).ok_or_else(|| FppError::pre(format!("λ misses cell {c:?}")))?;
        if !beta.contains_key(c) {
            return Err(FppError::pre(format!("β misses cell {c:?}")));
        }
        if !(l.clone() - psi[c].clone()).near_zero(&scale) {
            return Err(FppError::pre(format!("λ = {l} differs from the flux {} at cell {c:?}", psi[c])));
        }
    }
    for (name, fam) in [("λ", lambda), ("β", beta)] {
        let mut net = S::zero();
        for (c, v) in fam {
            match c.side {
                Side::Plus => net += v.clone(),
                Side::Minus => net -= v.clone(),
            }
        }
        if !net.near_zero(&scale) {
            return Err(FppError::pre(format!("total-flux mismatch in {name}: plus minus minus = {net}")));
        }
    }

    let lo: Pt = pi.shift.iter().map(|s| s - pi.n0 / 2).collect();
    let grid = SparseGrid::new(d, lo, pi.n0, k)?;
    let n = f.n;
    // per-point discrepancy w and the net discrepancy μ of every face
    let mut w: BTreeMap<(usize, Side), BTreeMap<Pt, S>> = BTreeMap::new();
    let mut mu: BTreeMap<(usize, Side), S> = BTreeMap::new();
    let mut max_share = S::zero();
    for (c, bx) in &all {
        let gap = beta[c].clone() - lambda[c].clone();
        let face = (c.axis, c.side);
        *mu.entry(face).or_insert_with(S::zero) += gap.clone();
        let axes = others(d, c.axis);
        let inside: Vec<Pt> = grid
            .face_points(c.axis)
            .into_iter()
            .filter(|key| {
                key.iter().zip(&axes).all(|(&k, &a)| {
                    let nq = Q::from_integer(n);
                    q_ceil(&(bx.lo[a] * nq)) <= k && k < q_ceil(&(bx.hi[a] * nq))
                })
            })
            .collect();
        let entry = w.entry(face).or_default();
        if inside.is_empty() {
            if !gap.is_zero() {
                return Err(FppError::pre(format!("cell {c:?} holds no sublattice point but needs {gap}")));
            }
            continue;
        }
        let per = gap / S::from_usize(inside.len()).unwrap();
        max_share = S::max_s(&max_share, &per.abs());
        for key in inside {
            entry.insert(key, per.clone());
        }
    }

    let faces: Vec<(usize, Side)> = (0..d).flat_map(|i| SIDES.map(|s| (i, s))).collect();
    let sign = |s: Side| if s == Side::Minus { S::one() } else { -S::one() };
    // surplus faces feed water in, deficit faces take it out
    let inflow = |face: &(usize, Side)| mu[face].clone() * sign(face.1);
    let live = |x: &S| *x > S::zero() && !x.near_zero(&scale);
    let mut bal = Balancer { d, grid: &grid, out: Stream::new(d, n) };
    let empty = BTreeMap::new();
    let mut zero_faces = 0;
    for face in &faces {
        if mu[face].near_zero(&scale) && w[face].values().any(|v| !v.is_zero()) {
            zero_faces += 1;
            match face.1 {
                Side::Minus => bal.mix_along(face.0, &w[face], &empty)?,
                Side::Plus => bal.mix_along(face.0, &empty, &w[face])?,
            }
        }
    }
    let mut left: BTreeMap<(usize, Side), S> = faces.iter().map(|f| (*f, mu[f].abs())).collect();
    let mut pair_steps = 0;
    for a in faces.iter().filter(|f| live(&inflow(f))) {
        while live(&left[a]) {
            let Some(b) = faces.iter().find(|f| live(&-inflow(f)) && live(&left[f])) else {
                if S::EXACT {
                    return Err(FppError::invariant("surplus left with no deficit face"));
                }
                break;
            };
            let amount = S::min_s(&left[a], &left[b]);
            let share = |face: &(usize, Side)| -> BTreeMap<Pt, S> {
                let r = amount.clone() / mu[face].abs();
                w[face].iter().map(|(key, v)| (key.clone(), v.clone() * r.clone())).collect()
            };
            let (sa, sb) = (share(a), share(b));
            if a.0 == b.0 {
                let (ins, outs) = if a.1 == Side::Minus { (&sa, &sb) } else { (&sb, &sa) };
                bal.mix_along(a.0, ins, outs)?;
            } else {
                let (i, j, s) = (a.0, b.0, a.1);
                let mut arrived: BTreeMap<Pt, S> = BTreeMap::new();
                for (key, v) in &sa {
                    let tau = bal.transfer(i, j, s, key, v);
                    *arrived.entry(tau).or_insert_with(S::zero) -= v.clone();
                }
                // the mixer along e_j supplies the target at b and cancels the arrivals
                let mut minus: BTreeMap<Pt, S> = BTreeMap::new();
                let mut plus: BTreeMap<Pt, S> = BTreeMap::new();
                let target = if b.1 == Side::Minus { &mut minus } else { &mut plus };
                for (key, v) in &sb {
                    *target.entry(key.clone()).or_insert_with(S::zero) += v.clone();
                }
                let there = if s == Side::Minus { &mut minus } else { &mut plus };
                for (key, v) in arrived {
                    *there.entry(key).or_insert_with(S::zero) -= v;
                }
                bal.mix_along(j, &minus, &plus)?;
            }
            *left.get_mut(a).unwrap() -= amount.clone();
            *left.get_mut(b).unwrap() -= amount;
            pair_steps += 1;
        }
    }
    let mut stream = bal.out;
    if !S::EXACT {
        stream.prune();
    }
    // the construction must land every cell on its target
    let got = face_fluxes(&stream, pi, m)?;
    for (c, _) in &all {
        let want = beta[c].clone() - lambda[c].clone();
        if !(got[c].clone() - want.clone()).near_zero(&scale) {
            return Err(FppError::invariant(format!("cell {c:?} reached {} instead of {want}", got[c])));
        }
    }
    Ok(Balance { stream, pair_steps, zero_faces, max_share, grid })
}
