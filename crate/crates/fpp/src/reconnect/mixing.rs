//! Mixing constructions in Z^d: inputs on the edges <(0,y),(1,y)>, outputs on
//! the edges <(m-1,y),(m,y)>, y ∈ {1..n}^{d-1}. Streams are returned at
//! scale 1 so callers can place them anywhere.

use super::{exceeds, le};
use crate::error::{FppError, Result};
use crate::lattice::{int_box, EdgeId, Pt};
use crate::scalar::Scalar;
use crate::stream::Stream;
use std::collections::BTreeMap;

/// Boundary values indexed by y ∈ {1..n}^{d-1}; missing keys read as 0.
pub type Family<S> = BTreeMap<Pt, S>;

fn indices(dim: usize, n: i64) -> Vec<Pt> {
    int_box(&vec![1; dim], &vec![n; dim])
}

fn check_keys<S: Scalar>(f: &Family<S>, dim: usize, n: i64, what: &str) -> Result<()> {
    for y in f.keys() {
        if y.len() != dim || y.iter().any(|&c| c < 1 || c > n) {
            return Err(FppError::pre(format!("{what} index {y:?} outside {{1..{n}}}^{dim}")));
        }
    }
    Ok(())
}

fn check_bound<S: Scalar>(f: &Family<S>, bound: &S, what: &str) -> Result<()> {
    for (y, v) in f {
        if exceeds(v, bound) {
            return Err(FppError::pre(format!("{what}({y:?}) = {v} exceeds the bound {bound}")));
        }
    }
    Ok(())
}

fn total<S: Scalar>(f: &Family<S>) -> S {
    f.values().fold(S::zero(), |acc, v| acc + v.clone())
}

fn mean<S: Scalar>(f: &Family<S>, count: usize) -> S {
    total(f) / S::from_usize(count).expect("count fits the scalar")
}

/// Adds `src` into `dst`, relocating each edge with `place`.
fn place_into<S: Scalar>(dst: &mut Stream<S>, src: &Stream<S>, place: impl Fn(&EdgeId) -> EdgeId) {
    for (e, v) in src.iter() {
        dst.add(&place(e), v);
    }
}

/// Outcome of the two-dimensional mixing algorithm.
#[derive(Clone, Debug)]
pub struct Mix2d<S: Scalar> {
    pub stream: Stream<S>,
    /// rerouting steps performed
    pub steps: usize,
}

/// Two-dimensional mixing: inputs `f_in[j-1]` on <(0,j),(1,j)>, every output
/// <(n-1,j),(n,j)> equal to the mean, support in [0,n)×[1,n].
pub fn mix2d<S: Scalar>(f_in: &[S], bound: &S) -> Result<Stream<S>> {
    Ok(run_mix2d(f_in, bound, false)?.stream)
}

/// [`mix2d`] with the line and column invariants re-checked after every step.
pub fn mix2d_checked<S: Scalar>(f_in: &[S], bound: &S) -> Result<Mix2d<S>> {
    run_mix2d(f_in, bound, true)
}

struct Grid<S> {
    n: usize,
    /// h[row][k]: edge <(k,row+1),(k+1,row+1)>
    h: Vec<Vec<S>>,
    /// v[c][r]: edge <(c,r+1),(c,r+2)>
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Grid<S> {
    fn to_stream(&self, sign: &S) -> Stream<S> {
        let mut f = Stream::new(2, 1);
        for (row, line) in self.h.iter().enumerate() {
            for (k, val) in line.iter().enumerate() {
                f.set(EdgeId::new(vec![k as i64, row as i64 + 1], 0), val.clone() * sign.clone());
            }
        }
        for (c, col) in self.v.iter().enumerate() {
            for (r, val) in col.iter().enumerate() {
                f.set(EdgeId::new(vec![c as i64, r as i64 + 1], 1), val.clone() * sign.clone());
            }
        }
        f
    }
}

fn run_mix2d<S: Scalar>(f_in: &[S], bound: &S, check: bool) -> Result<Mix2d<S>> {
    let n = f_in.len();
    if n == 0 {
        return Err(FppError::pre("mix2d needs at least one input"));
    }
    for (j, v) in f_in.iter().enumerate() {
        if exceeds(v, bound) {
            return Err(FppError::pre(format!("input {} = {v} exceeds the bound {bound}", j + 1)));
        }
    }
    let sum = f_in.iter().fold(S::zero(), |a, v| a + v.clone());
    // work with a non-negative total and flip back at the end
    let scale = S::max_s(bound, &S::one());
    let sign = if sum < S::zero() && !sum.near_zero(&scale) { -S::one() } else { S::one() };
    let x: Vec<S> = f_in.iter().map(|v| v.clone() * sign.clone()).collect();
    let beta = sum * sign.clone() / S::from_usize(n).unwrap();

    let mut g = Grid { n, h: vec![vec![S::zero(); n]; n], v: vec![vec![S::zero(); n.saturating_sub(1)]; n + 1] };
    for (row, xi) in x.iter().enumerate() {
        let base = S::min_s(xi, &beta);
        g.h[row].iter_mut().for_each(|e| *e = base.clone());
    }
    // Each above-mean source owns one column. Ranking them from the right
    // keeps every column in 1..n-1; column 0 would hold the input vertices.
    let deficit = |target: &S, cur: &S| {
        let gap = target.clone() - cur.clone();
        if gap > S::zero() && !gap.near_zero(&scale) {
            Some(gap)
        } else {
            None
        }
    };
    let mut col = vec![usize::MAX; n];
    let mut r = 0;
    for i in 0..n {
        if deficit(&x[i], &beta).is_some() {
            r += 1;
            col[i] = n - r;
        }
    }
    let mut steps = 0;
    loop {
        let Some((i, di)) = (0..n).find_map(|i| deficit(&x[i], &g.h[i][0]).map(|d| (i, d))) else { break };
        let Some((j, dj)) = (0..n).find_map(|j| deficit(&beta, &g.h[j][n - 1]).map(|d| (j, d))) else {
            if S::EXACT {
                return Err(FppError::invariant(format!("source {} has a deficit but no sink is short", i + 1)));
            }
            break;
        };
        let c = col[i];
        if c == usize::MAX {
            return Err(FppError::invariant(format!("source {} is below the mean yet short", i + 1)));
        }
        let m = S::min_s(&di, &dj);
        for k in 0..c {
            g.h[i][k] += m.clone();
        }
        if j > i {
            for e in &mut g.v[c][i..j] {
                *e += m.clone();
            }
        } else {
            for e in &mut g.v[c][j..i] {
                *e -= m.clone();
            }
        }
        for k in c..n {
            g.h[j][k] += m.clone();
        }
        // snap whichever side was exhausted so float runs terminate
        if m == di {
            for k in 0..c {
                g.h[i][k] = x[i].clone();
            }
        }
        if m == dj {
            g.h[j][n - 1] = beta.clone();
        }
        steps += 1;
        if check {
            check_invariants(&g, &x, &beta, &col, &scale).map_err(|msg| {
                FppError::invariant(format!("mix2d step {steps} (source {}, sink {}): {msg}", i + 1, j + 1))
            })?;
        }
    }
    Ok(Mix2d { stream: g.to_stream(&sign), steps })
}

fn check_invariants<S: Scalar>(g: &Grid<S>, x: &[S], beta: &S, col: &[usize], scale: &S) -> std::result::Result<(), String> {
    let n = g.n;
    for c in 0..=n {
        let owner = (0..n).find(|&i| col[i] == c);
        for (r, val) in g.v[c].iter().enumerate() {
            let ok = match owner {
                Some(i) => le(&val.abs(), &g.h[i][0].abs(), scale),
                None => val.is_zero(),
            };
            if !ok {
                return Err(format!("vertical edge at column {c}, row {} carries {val}", r + 1));
            }
        }
    }
    for i in 0..n {
        let line = &g.h[i];
        if col[i] == usize::MAX && x[i] < *beta {
            if line[0] != x[i] {
                return Err(format!("line {} input moved", i + 1));
            }
            if line.windows(2).any(|w| !le(&w[0], &w[1], scale)) || !le(&line[n - 1], beta, scale) {
                return Err(format!("line {} is not non-decreasing up to the mean", i + 1));
            }
        } else if col[i] != usize::MAX {
            if !le(&line[0], &x[i], scale) || line.windows(2).any(|w| !le(&w[1], &w[0], scale)) {
                return Err(format!("line {} is not non-increasing", i + 1));
            }
            if line[n - 1] != *beta {
                return Err(format!("line {} output left the mean", i + 1));
            }
        }
    }
    // node law off the two boundary columns
    let f = g.to_stream(&S::one());
    for k in 1..n as i64 {
        for row in 1..=n as i64 {
            let div = f.divergence_at(&[k, row]);
            if !div.near_zero(scale) {
                return Err(format!("node law fails at ({k},{row})"));
            }
        }
    }
    Ok(())
}

/// Mixing to uniform outputs in dimension d over [0,(d-1)n)×[1,n]^{d-1}.
pub fn mix_uniform<S: Scalar>(d: usize, n: i64, f_in: &Family<S>, bound: &S) -> Result<Stream<S>> {
    if d < 2 || n < 1 {
        return Err(FppError::pre("mixing needs d >= 2 and n >= 1"));
    }
    check_keys(f_in, d - 1, n, "input")?;
    check_bound(f_in, bound, "input")?;
    uniform_rec(d, n, f_in, bound, &|vals, b| mix2d(vals, b))
}

type Base2d<'a, S> = dyn Fn(&[S], &S) -> Result<Stream<S>> + 'a;

/// Dimension reduction shared by the uniform and the precise constructions:
/// mix each slab {y_2 = i} down to its mean, then mix the means along e_2.
fn uniform_rec<S: Scalar>(d: usize, n: i64, f_in: &Family<S>, bound: &S, base: &Base2d<S>) -> Result<Stream<S>> {
    let get = |y: &[i64]| f_in.get(y).cloned().unwrap_or_else(S::zero);
    if d == 2 {
        let vals: Vec<S> = (1..=n).map(|j| get(&[j])).collect();
        let mut f = base(&vals, bound)?;
        f.d = 2;
        return Ok(f);
    }
    let mut out = Stream::new(d, 1);
    let shift = (d as i64 - 2) * n;
    let mut g: BTreeMap<Pt, S> = BTreeMap::new();
    for i in 1..=n {
        let sub: Family<S> = indices(d - 2, n)
            .into_iter()
            .map(|z| {
                let mut y = vec![i];
                y.extend_from_slice(&z);
                (z, get(&y))
            })
            .collect();
        let part = uniform_rec(d - 1, n, &sub, bound, base)?;
        place_into(&mut out, &part, |e| {
            let mut x = vec![e.x[0], i];
            x.extend_from_slice(&e.x[1..]);
            EdgeId::new(x, if e.axis == 0 { 0 } else { e.axis + 1 })
        });
        let avg = mean(&sub, sub.len());
        for z in indices(d - 2, n) {
            let mut key = vec![i];
            key.extend_from_slice(&z);
            g.insert(key, avg.clone());
        }
    }
    for z in indices(d - 2, n) {
        let vals: Vec<S> = (1..=n)
            .map(|i| {
                let mut key = vec![i];
                key.extend_from_slice(&z);
                g[&key].clone()
            })
            .collect();
        let plane = base(&vals, bound)?;
        place_into(&mut out, &plane, |e| {
            let mut x = vec![e.x[0] + shift, e.x[1]];
            x.extend_from_slice(&z);
            EdgeId::new(x, e.axis)
        });
    }
    Ok(out)
}

fn straight_lines<S: Scalar>(out: &mut Stream<S>, f_out: &Family<S>, from: i64, to: i64) {
    for (y, v) in f_out {
        for k in from..to {
            let mut x = vec![k];
            x.extend_from_slice(y);
            out.add(&EdgeId::new(x, 0), v);
        }
    }
}

/// General mixing of `f_in` into `f_out` over [0,m)×[1,n]^{d-1}. Needs
/// m ≥ 2(d-1)n, or m ≥ (d-1)n when the outputs are all equal to the mean.
pub fn mix<S: Scalar>(d: usize, n: i64, f_in: &Family<S>, f_out: &Family<S>, m: i64, bound: &S) -> Result<Stream<S>> {
    if d < 2 || n < 1 {
        return Err(FppError::pre("mixing needs d >= 2 and n >= 1"));
    }
    check_keys(f_in, d - 1, n, "input")?;
    check_keys(f_out, d - 1, n, "output")?;
    check_bound(f_in, bound, "input")?;
    check_bound(f_out, bound, "output")?;
    let (si, so) = (total(f_in), total(f_out));
    let scale = f_in.values().chain(f_out.values()).fold(S::one(), |a, v| a + v.abs());
    if !(si.clone() - so.clone()).near_zero(&scale) {
        return Err(FppError::pre(format!("input total {si} differs from output total {so}")));
    }
    let count = indices(d - 1, n).len();
    let avg = mean(f_in, count);
    let len = (d as i64 - 1) * n;
    let get = |f: &Family<S>, y: &[i64]| f.get(y).cloned().unwrap_or_else(S::zero);
    let uniform = indices(d - 1, n).iter().all(|y| {
        let v = get(f_out, y);
        if S::EXACT {
            v == avg
        } else {
            (v - avg.clone()).near_zero(&scale)
        }
    });
    let full: Family<S> = indices(d - 1, n).into_iter().map(|y| { let v = get(f_out, &y); (y, v) }).collect();
    let same = indices(d - 1, n).iter().all(|y| (get(f_in, y) - get(f_out, y)).near_zero(&scale));
    if same && m >= 1 {
        // nothing to redistribute
        let mut f = Stream::new(d, 1);
        straight_lines(&mut f, &full, 0, m);
        return Ok(f);
    }
    if uniform {
        if m < len {
            return Err(FppError::pre(format!("uniform outputs need m >= {len}, got {m}")));
        }
        let mut f = uniform_rec(d, n, f_in, bound, &|v, b| mix2d(v, b))?;
        straight_lines(&mut f, &full, len, m);
        return Ok(f);
    }
    if m < 2 * len {
        return Err(FppError::pre(format!("mixing needs m >= {}, got {m}", 2 * len)));
    }
    let fi = uniform_rec(d, n, f_in, bound, &|v, b| mix2d(v, b))?;
    let fo = uniform_rec(d, n, &full, bound, &|v, b| mix2d(v, b))?;
    let mut g = fi.clone();
    // mirror of the output mixer, reversed so it flows from the mean to f_out
    let last = 2 * len - 1;
    for (e, v) in fo.iter() {
        let mut x = e.x.clone();
        if e.axis == 0 {
            x[0] = last - 1 - e.x[0];
            g.add(&EdgeId::new(x, 0), v);
        } else {
            x[0] = last - e.x[0];
            g.add(&EdgeId::new(x, e.axis), &-v.clone());
        }
    }
    // both halves own the middle edge <(L-1,y),(L,y)>; it carries the mean once
    for y in indices(d - 1, n) {
        let mut x = vec![len - 1];
        x.extend_from_slice(&y);
        let e = EdgeId::new(x, 0);
        g.set(e.clone(), fi.get(&e));
    }
    straight_lines(&mut g, &full, last, m);
    Ok(g)
}

/// Mixing on the sparse edge family 𝔼_K: inputs and outputs live on
/// y ∈ KZ^{d-1} ∩ [1,n]^{d-1}; the construction mixes on the coarse lattice
/// of side ⌊n/K⌋ and spreads each transverse coarse edge over K fine edges.
pub fn mix_sparse<S: Scalar>(
    d: usize,
    n: i64,
    k: i64,
    f_in: &Family<S>,
    f_out: &Family<S>,
    bound: &S,
) -> Result<Stream<S>> {
    if d < 2 || n < 1 {
        return Err(FppError::pre("mixing needs d >= 2 and n >= 1"));
    }
    let cd = 2 * (d as i64 - 1);
    if k < cd {
        return Err(FppError::pre(format!("K = {k} is below 2(d-1) = {cd}")));
    }
    let n0 = n / k;
    let coarse = |f: &Family<S>, what: &str| -> Result<Family<S>> {
        check_keys(f, d - 1, n, what)?;
        let mut c = Family::new();
        for (y, v) in f {
            if y.iter().any(|&t| t % k != 0) {
                return Err(FppError::pre(format!("{what} index {y:?} is off the K-sublattice")));
            }
            c.insert(y.iter().map(|&t| t / k).collect(), v.clone());
        }
        Ok(c)
    };
    let (ci, co) = (coarse(f_in, "input")?, coarse(f_out, "output")?);
    if n0 == 0 {
        return Ok(Stream::new(d, 1));
    }
    let g = mix(d, n0, &ci, &co, n, bound)?;
    Ok(lift_sparse(&g, k))
}

/// Pulls a coarse stream on Z × Z^{d-1} back through (x, Ky) ↦ (x, y).
pub(crate) fn lift_sparse<S: Scalar>(g: &Stream<S>, k: i64) -> Stream<S> {
    let mut f = Stream::new(g.d, 1);
    for (e, v) in g.iter() {
        let mut x = e.x.clone();
        for c in x.iter_mut().skip(1) {
            *c *= k;
        }
        if e.axis == 0 {
            f.add(&EdgeId::new(x, 0), v);
        } else {
            for t in 0..k {
                let mut p = x.clone();
                p[e.axis] += t;
                f.add(&EdgeId::new(p, e.axis), v);
            }
        }
    }
    f
}

/// Mixing to the mean with control of every edge: inputs in [-M, ε],
/// axis-1 edges in [-M, ε], transverse edges at most ε in magnitude. The
/// prefix conditions are verified level by level.
pub fn mix_precise<S: Scalar>(d: usize, n: i64, f_in: &Family<S>, bound: &S, eps: &S) -> Result<Stream<S>> {
    if d < 2 || n < 1 {
        return Err(FppError::pre("mixing needs d >= 2 and n >= 1"));
    }
    check_keys(f_in, d - 1, n, "input")?;
    let scale = S::max_s(bound, &S::one());
    let full: Family<S> =
        indices(d - 1, n).into_iter().map(|y| { let v = f_in.get(&y).cloned().unwrap_or_else(S::zero); (y, v) }).collect();
    for (y, v) in &full {
        if !le(&-bound.clone(), v, &scale) || !le(v, eps, &scale) {
            return Err(FppError::pre(format!("input {y:?} = {v} outside [-M, eps]")));
        }
    }
    for level in 0..=d - 2 {
        let mut groups: BTreeMap<&[i64], Vec<&S>> = BTreeMap::new();
        for (y, v) in &full {
            groups.entry(&y[..level]).or_default().push(v);
        }
        for (prefix, vals) in groups {
            let sum = vals.iter().fold(S::zero(), |a, v| a + (*v).clone());
            let lo = vals.iter().fold(vals[0].clone(), |a, v| S::min_s(&a, v));
            let hi = vals.iter().fold(vals[0].clone(), |a, v| S::max_s(&a, v));
            if sum < S::zero() && !le(&(hi - lo), eps, &scale) {
                return Err(FppError::pre(format!(
                    "prefix condition fails at level {level} for prefix {prefix:?}: negative sum and spread above eps"
                )));
            }
        }
    }
    let base = |vals: &[S], b: &S| -> Result<Stream<S>> {
        let sum = vals.iter().fold(S::zero(), |a, v| a + v.clone());
        if sum >= S::zero() {
            return mix2d(vals, b);
        }
        let low = vals.iter().fold(vals[0].clone(), |a, v| S::min_s(&a, v));
        let shifted: Vec<S> = vals.iter().map(|v| v.clone() - low.clone()).collect();
        let top = shifted.iter().fold(S::zero(), |a, v| S::max_s(&a, v));
        let mut f = mix2d(&shifted, &top)?;
        for j in 1..=vals.len() as i64 {
            for k in 0..vals.len() as i64 {
                f.add(&EdgeId::new(vec![k, j], 0), &low);
            }
        }
        Ok(f)
    };
    uniform_rec(d, n, &full, bound, &base)
}
