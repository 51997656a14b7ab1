//! Peeling a stream into weighted self-avoiding paths between terminals.

use crate::error::{FppError, Result};
use crate::lattice::{EdgeId, LatticeDomain, Pt};
use crate::scalar::Scalar;
use crate::stream::{node_law_violations, Stream};
use std::collections::HashSet;

/// An oriented lattice path x_0 → x_1 → … carrying `weight` units.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPath<S: Scalar> {
    pub vertices: Vec<Pt>,
    pub weight: S,
}

impl<S: Scalar> WeightedPath<S> {
    /// Edges in travel order with +1 when the step follows the canonical orientation.
    pub fn steps(&self) -> Vec<(EdgeId, i8)> {
        self.vertices.windows(2).map(|w| EdgeId::between(&w[0], &w[1]).expect("consecutive vertices are neighbours")).collect()
    }

    /// Adds weight × (unit stream along the path) to `f`.
    pub fn add_to(&self, f: &mut Stream<S>) {
        for (e, s) in self.steps() {
            let v = if s > 0 { self.weight.clone() } else { -self.weight.clone() };
            f.add(&e, &v);
        }
    }

    pub fn is_self_avoiding(&self) -> bool {
        let set: HashSet<&Pt> = self.vertices.iter().collect();
        set.len() == self.vertices.len()
    }
}

/// Terminal-to-terminal paths plus any circulation left once every
/// terminal edge is exhausted (cycles repeat their first vertex at the end).
#[derive(Clone, Debug)]
pub struct Decomposition<S: Scalar> {
    pub paths: Vec<WeightedPath<S>>,
    pub cycles: Vec<WeightedPath<S>>,
}

impl<S: Scalar> Decomposition<S> {
    pub fn reconstruct(&self, d: usize, n: i64) -> Stream<S> {
        let mut f = Stream::new(d, n);
        for p in self.paths.iter().chain(&self.cycles) {
            p.add_to(&mut f);
        }
        f
    }
}

struct Peeler<'a, S: Scalar> {
    res: Stream<S>,
    lat: &'a LatticeDomain,
    scale: S,
}

impl<S: Scalar> Peeler<'_, S> {
    /// Residual carried from u to v (positive when the water moves u → v).
    fn along(&self, u: &[i64], v: &[i64]) -> S {
        let (e, s) = EdgeId::between(u, v).expect("neighbours");
        let x = self.res.get(&e);
        if s > 0 {
            x
        } else {
            -x
        }
    }

    fn live(&self, x: &S) -> bool {
        *x > S::zero() && !x.near_zero(&self.scale)
    }

    /// Neighbours reachable from u with positive residual in direction
    /// `forward` (u → v) or against it (v → u), in edge order.
    fn next(&self, u: &[i64], forward: bool) -> Vec<Pt> {
        let mut cand: Vec<(EdgeId, Pt)> = Vec::new();
        for a in 0..u.len() {
            for delta in [-1, 1] {
                let mut v = u.to_vec();
                v[a] += delta;
                let flow = if forward { self.along(u, &v) } else { self.along(&v, u) };
                if self.live(&flow) {
                    cand.push((EdgeId::between(u, &v).unwrap().0, v));
                }
            }
        }
        cand.sort();
        cand.into_iter().map(|(_, v)| v).collect()
    }

    /// Depth-first search from `start` for a stop vertex, never entering
    /// `avoid`; terminals other than the stop set are not passed through.
    fn search(&self, start: &Pt, forward: bool, stop: &dyn Fn(&Pt) -> bool, avoid: &Pt) -> Option<Vec<Pt>> {
        let mut seen: HashSet<Pt> = HashSet::from([start.clone(), avoid.clone()]);
        let mut path = vec![start.clone()];
        let mut stack = vec![self.next(start, forward).into_iter()];
        while let Some(it) = stack.last_mut() {
            match it.next() {
                Some(v) => {
                    if stop(&v) {
                        path.push(v);
                        return Some(path);
                    }
                    if seen.contains(&v) || self.lat.is_terminal(&v) {
                        continue;
                    }
                    seen.insert(v.clone());
                    let succ = self.next(&v, forward);
                    path.push(v);
                    stack.push(succ.into_iter());
                }
                None => {
                    stack.pop();
                    path.pop();
                }
            }
        }
        None
    }

    /// Subtracts the minimal residual along `verts` and returns the path.
    fn peel(&mut self, verts: Vec<Pt>) -> WeightedPath<S> {
        let w = verts
            .windows(2)
            .map(|p| self.along(&p[0], &p[1]))
            .reduce(|a, b| S::min_s(&a, &b))
            .expect("at least one edge");
        let path = WeightedPath { vertices: verts, weight: w };
        for (e, s) in path.steps() {
            let mut cur = self.res.get(&e);
            if s > 0 {
                cur -= path.weight.clone();
            } else {
                cur += path.weight.clone();
            }
            if cur.near_zero(&self.scale) {
                cur = S::zero();
            }
            self.res.set(e, cur);
        }
        path
    }
}

/// Decomposes `f` into self-avoiding oriented paths whose endpoints lie in
/// Γ¹ ∪ Γ² and whose interior vertices avoid them. Weights are in stream
/// units: the paths sum back to `f`, every step aligned with the sign of f.
pub fn decompose<S: Scalar>(f: &Stream<S>, lat: &LatticeDomain) -> Result<Decomposition<S>> {
    for (e, _) in f.iter() {
        if !lat.contains(&e.x) || !lat.contains(&e.head()) {
            return Err(FppError::pre(format!("edge {e} leaves the domain")));
        }
    }
    if let Some(x) = node_law_violations(f, |x| lat.is_terminal(x)).first() {
        return Err(FppError::pre(format!("node law fails at {x:?}")));
    }
    let mut pl = Peeler { res: f.clone(), lat, scale: f.max_abs() };
    let mut paths = Vec::new();
    let mut cycles = Vec::new();
    let mut terminals = lat.gamma();
    terminals.sort();
    for x in &terminals {
        loop {
            let out = pl.next(x, true);
            let inc = pl.next(x, false);
            let mut first: Vec<(EdgeId, Pt, bool)> = out
                .into_iter()
                .map(|y| (EdgeId::between(x, &y).unwrap().0, y, true))
                .chain(inc.into_iter().map(|y| (EdgeId::between(x, &y).unwrap().0, y, false)))
                .collect();
            first.sort();
            let Some((_, y, outward)) = first.into_iter().next() else { break };
            let is_other_terminal = |v: &Pt| v != x && lat.is_terminal(v);
            let hit = if lat.is_terminal(&y) {
                Some(vec![y.clone()])
            } else {
                pl.search(&y, outward, &is_other_terminal, x)
            };
            match hit {
                Some(tail) => {
                    let mut verts = vec![x.clone()];
                    verts.extend(tail);
                    if !outward {
                        verts.reverse();
                    }
                    paths.push(pl.peel(verts));
                }
                None => {
                    // the water only returns to x: a circulation through a terminal
                    let back = |v: &Pt| v == x;
                    let tail = pl
                        .search(&y, outward, &back, &y)
                        .ok_or_else(|| FppError::invariant(format!("no way on from {y:?}")))?;
                    let mut verts = vec![x.clone()];
                    verts.extend(tail);
                    if !outward {
                        verts.reverse();
                    }
                    cycles.push(pl.peel(verts));
                }
            }
        }
    }
    // anything left circulates among interior vertices
    loop {
        let found = pl.res.iter().find(|(_, v)| pl.live(&v.abs())).map(|(e, v)| (e.clone(), v.clone()));
        let Some((e, v)) = found else { break };
        let (mut u, mut w) = (e.x.clone(), e.head());
        if v < S::zero() {
            std::mem::swap(&mut u, &mut w);
        }
        let mut walk = vec![u, w];
        let cyc = loop {
            let cur = walk.last().unwrap().clone();
            let nxt = pl.next(&cur, true);
            let Some(step) = nxt.into_iter().next() else {
                return Err(FppError::invariant(format!("residual circulation stalls at {cur:?}")));
            };
            if let Some(pos) = walk.iter().position(|p| *p == step) {
                let mut c = walk[pos..].to_vec();
                c.push(step);
                break c;
            }
            walk.push(step);
        };
        cycles.push(pl.peel(cyc));
    }
    Ok(Decomposition { paths, cycles })
}
