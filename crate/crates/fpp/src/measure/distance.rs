//! Certified bracket for the dyadic distance
//!
//!   d(μ,ν) = sup_{x∈[-1,1)^d, λ∈[1,2]} Σ_k 2^{-k} Σ_{Q∈Δ_λ^k} ‖(μ-ν)(Q+x)‖,
//!   Δ_λ^k = { λ2^{-k}([-1/2,1/2)^d + z) : z ∈ Z^d }.
//!
//! For fixed λ the inner sum is λ-periodic in x, so we write x = λu with
//! u ∈ [-1/2,1/2)^d and search the (u,λ) box by best-first branch and bound.
//! Levels above `k_max` are bounded by 2^{-k_max}·TV(μ-ν).
//!
//! Within a search cell a cube's left face L and right face R move in known
//! intervals. Per axis, cubes split into runs lying inside one density
//! interval and cubes straddling breakpoints; the density mass of a cube is a
//! sum of products of per-axis overlap lengths, piecewise affine in each L and
//! R, so its norm is maximized at interval ends or breakpoints. Cubes holding
//! atoms are bounded one by one with inner/ring atom splits.

use super::{Overlay, VectorMeasure};
use crate::scalar::q_to_f64;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

#[derive(Clone, Debug)]
pub struct DistanceOptions {
    pub k_max: u32,
    /// stop once upper - lower <= rel_gap * upper (before the tail term)
    pub rel_gap: f64,
    /// maximum number of evaluated search cells
    pub max_cells: usize,
    /// per-level limit on enumerated groups / atom cubes before falling back to TV
    pub level_budget: usize,
    /// initial splits per parameter axis
    pub init_split: usize,
    /// cells refined per round
    pub batch: usize,
    /// stop as soon as the bracket settles which side of this value d lies on
    pub threshold: Option<f64>,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions { k_max: 12, rel_gap: 0.02, max_cells: 200_000, level_budget: 100, init_split: 2, batch: 16, threshold: None }
    }
}

#[derive(Clone, Debug)]
pub struct SearchStats {
    pub cells: usize,
    pub converged: bool,
}

/// lower <= d(μ,ν) <= upper.
#[derive(Clone, Debug)]
pub struct DistanceBracket {
    pub lower: f64,
    pub upper: f64,
    pub k_max: u32,
    /// truncation tail 2^{-k_max}·TV(μ-ν), included in `upper`
    pub tail: f64,
    /// (u, λ) where the lower bound was attained; the shift is x = λu
    pub argmax: (Vec<f64>, f64),
    pub stats: SearchStats,
}

impl DistanceBracket {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Parameter box [u_lo, u_hi] × [lam_lo, lam_hi].
#[derive(Clone, Debug)]
pub struct Cell {
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub lam_lo: f64,
    pub lam_hi: f64,
}

impl Cell {
    pub fn point(u: &[f64], lam: f64) -> Self {
        Cell { u_lo: u.to_vec(), u_hi: u.to_vec(), lam_lo: lam, lam_hi: lam }
    }

    fn centre(&self) -> (Vec<f64>, f64) {
        let u = self.u_lo.iter().zip(&self.u_hi).map(|(a, b)| 0.5 * (a + b)).collect();
        (u, 0.5 * (self.lam_lo + self.lam_hi))
    }

    fn split(&self) -> (Cell, Cell) {
        let d = self.u_lo.len();
        let mut best = d;
        let mut w = 0.75 * (self.lam_hi - self.lam_lo);
        for j in 0..d {
            let wj = self.lam_hi * (self.u_hi[j] - self.u_lo[j]);
            if wj > w {
                w = wj;
                best = j;
            }
        }
        let (mut a, mut b) = (self.clone(), self.clone());
        if best == d {
            let m = 0.5 * (self.lam_lo + self.lam_hi);
            a.lam_hi = m;
            b.lam_lo = m;
        } else {
            let m = 0.5 * (self.u_lo[best] + self.u_hi[best]);
            a.u_hi[best] = m;
            b.u_lo[best] = m;
        }
        (a, b)
    }
}

/// μ - ν preprocessed for cube-mass queries.
#[derive(Clone, Debug)]
pub struct PreparedDiff {
    pub d: usize,
    overlay: Overlay,
    /// per axis: sorted grid = overlay cuts ∪ atom hull pads
    grid: Vec<Vec<f64>>,
    /// per axis: grid interval t -> overlay interval (None outside the overlay)
    ov_of: Vec<Vec<Option<usize>>>,
    /// Euclidean norm of each overlay cell value
    cell_norm: Vec<f64>,
    pub atom_pos: Vec<Vec<f64>>,
    pub atom_w: Vec<Vec<f64>>,
    pub tv: f64,
}

/// Vertex enumerations per level; cubes beyond it with many vertices are
/// bounded by |D| of their outer envelope instead.
const VERTEX_BUDGET: usize = 4096;
const VERTEX_CAP: usize = 36;
/// Atom-to-cube assignments enumerated exactly per level.
const MAX_SCENARIOS: usize = 64;
/// Atom cubes per level; atoms cost far less than density groups.
const ATOM_CUBE_BUDGET: usize = 1 << 15;
/// Vertex products evaluated exactly per level for density-only measures.
const MAX_VERTEX_POINTS: usize = 36;
/// Enumeration limit for exact point values.
const POINT_BUDGET: usize = 1 << 22;

/// Per-axis description of a run of cubes.
#[derive(Clone, Debug)]
enum Kind {
    /// outer interval inside grid interval t (t = -1 or m: outside the grid)
    Inside(isize),
    /// straddles breakpoints; candidate (L, R) face pairs for the vertex
    /// search and the outer envelope [lmin, rmax)
    Span { t0: isize, t1: isize, pts: Vec<(f64, f64)>, lmin: f64, rmax: f64 },
}

#[derive(Clone, Debug)]
struct Entry {
    z0: i64,
    z1: i64,
    kind: Kind,
}

/// Corner extremes of the bilinear face positions along one axis.
#[derive(Clone, Copy, Debug)]
struct AxisFrame {
    lam: [f64; 2],
    u: [f64; 2],
    h: f64,
}

impl AxisFrame {
    fn face(&self, z: i64, off: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &l in &self.lam {
            for &u in &self.u {
                let v = l * (u + self.h * (z as f64 + off));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// (L-, L+) of the left face of cube z.
    fn left(&self, z: i64) -> (f64, f64) {
        self.face(z, -0.5)
    }

    fn right(&self, z: i64) -> (f64, f64) {
        self.face(z, 0.5)
    }

    /// max over corners of (p/λ - u)/h + off
    fn solve_max(&self, p: f64, off: f64) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for &l in &self.lam {
            for &u in &self.u {
                m = m.max((p / l - u) / self.h + off);
            }
        }
        m
    }

    fn solve_min(&self, p: f64, off: f64) -> f64 {
        let mut m = f64::INFINITY;
        for &l in &self.lam {
            for &u in &self.u {
                m = m.min((p / l - u) / self.h + off);
            }
        }
        m
    }

    /// z with L-(z) <= b <= R+(z): every cube touching b. Runs between such
    /// cubes stay inside one grid interval.
    fn straddling(&self, b: f64) -> (i64, i64) {
        let mut hi = self.solve_max(b, 0.5).floor() as i64 + 1;
        let mut lo = self.solve_min(b, -0.5).ceil() as i64 - 1;
        while lo <= hi && !(self.left(lo).0 <= b && self.right(lo).1 >= b) {
            lo += 1;
        }
        while hi >= lo && !(self.left(hi).0 <= b && self.right(hi).1 >= b) {
            hi -= 1;
        }
        (lo, hi)
    }

    /// z whose outer half-open interval [L-, R+) contains p.
    fn containing(&self, p: f64) -> (i64, i64) {
        let mut hi = self.solve_max(p, 0.5).floor() as i64;
        let mut lo = self.solve_min(p, -0.5).floor() as i64 + 1;
        while lo <= hi && !(self.left(lo).0 <= p && p < self.right(lo).1) {
            lo += 1;
        }
        while hi >= lo && !(self.left(hi).0 <= p && p < self.right(hi).1) {
            hi -= 1;
        }
        (lo, hi)
    }
}

/// Point in a convex quadrilateral (either orientation, boundary included).
fn in_quad(q: &[(f64, f64); 4], p: (f64, f64)) -> bool {
    let mut pos = false;
    let mut neg = false;
    for e in 0..4 {
        let (a, b) = (q[e], q[(e + 1) % 4]);
        let cr = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        pos |= cr > 0.0;
        neg |= cr < 0.0;
    }
    !(pos && neg)
}

/// Cube indices are packed 16 bits per axis.
const Z_OFF: i64 = 1 << 15;

fn pack(z: &[i64]) -> u128 {
    z.iter().fold(0u128, |acc, &x| (acc << 16) | (x + Z_OFF) as u128)
}

fn unpack(key: u128, d: usize) -> [i64; 8] {
    let mut z = [0i64; 8];
    for j in 0..d {
        z[j] = ((key >> (16 * (d - 1 - j))) & 0xffff) as i64 - Z_OFF;
    }
    z
}

/// Calls `f` on every integer point of the product of closed ranges.
fn for_each_cube(ranges: &[(i64, i64)], mut f: impl FnMut(&[i64])) {
    let d = ranges.len();
    let mut z = [0i64; 8];
    for j in 0..d {
        z[j] = ranges[j].0;
    }
    loop {
        f(&z[..d]);
        let mut j = d;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            z[j] += 1;
            if z[j] <= ranges[j].1 {
                break;
            }
            z[j] = ranges[j].0;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Result of bounding one level on one cell.
struct LevelSum {
    value: f64,
    /// false when the enumeration budget was exceeded and TV was used
    resolved: bool,
}

impl PreparedDiff {
    pub fn new(mu: &VectorMeasure, nu: &VectorMeasure) -> Self {
        Self::from_diff(&mu.minus(nu))
    }

    pub fn from_diff(diff: &VectorMeasure) -> Self {
        let d = diff.d;
        assert!((1..=8).contains(&d), "dimension must lie in 1..=8");
        let mut diff = diff.clone();
        diff.merge_atoms();
        let overlay = Overlay::build(d, &diff.densities);
        let atom_pos: Vec<Vec<f64>> = diff.atoms.iter().map(|a| a.point.iter().map(q_to_f64).collect()).collect();
        let atom_w: Vec<Vec<f64>> = diff.atoms.iter().map(|a| a.weight.clone()).collect();
        let mut grid = overlay.cuts.clone();
        for j in 0..d {
            if !atom_pos.is_empty() {
                let lo = atom_pos.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                let hi = atom_pos.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                let first = grid[j].first().copied().unwrap_or(f64::INFINITY);
                let last = grid[j].last().copied().unwrap_or(f64::NEG_INFINITY);
                if lo <= first {
                    grid[j].insert(0, lo - 0.125);
                }
                if hi >= last {
                    grid[j].push(hi + 0.125);
                }
            }
        }
        let ov_of = (0..d)
            .map(|j| {
                let cuts = &overlay.cuts[j];
                let g = &grid[j];
                (0..g.len().saturating_sub(1))
                    .map(|t| {
                        if cuts.len() < 2 {
                            return None;
                        }
                        let mid = 0.5 * (g[t] + g[t + 1]);
                        if mid < cuts[0] || mid >= *cuts.last().unwrap() {
                            None
                        } else {
                            Some(cuts.partition_point(|&c| c <= mid) - 1)
                        }
                    })
                    .collect()
            })
            .collect();
        let tv = overlay.total_variation() + atom_w.iter().map(|w| norm(w)).sum::<f64>();
        let cell_norm = overlay.values.chunks(d.max(1)).map(norm).collect();
        PreparedDiff { d, overlay, grid, ov_of, cell_norm, atom_pos, atom_w, tv }
    }

    pub fn is_zero(&self) -> bool {
        self.tv == 0.0
    }

    fn frames(&self, cell: &Cell, k: u32) -> Vec<AxisFrame> {
        let h = 0.5f64.powi(k as i32);
        (0..self.d)
            .map(|j| AxisFrame { lam: [cell.lam_lo, cell.lam_hi], u: [cell.u_lo[j], cell.u_hi[j]], h })
            .collect()
    }

    /// Grid interval containing x: -1 below, m above.
    fn interval_of(&self, j: usize, x: f64) -> isize {
        let g = &self.grid[j];
        if g.is_empty() {
            return -1;
        }
        g.partition_point(|&c| c <= x) as isize - 1
    }

    fn interval_len(&self, j: usize, t: isize) -> usize {
        let _ = t;
        self.grid[j].len().saturating_sub(1)
    }

    /// Per-axis entries covering every cube that meets the grid hull.
    fn axis_entries(&self, j: usize, fr: &AxisFrame, budget: usize) -> Option<Vec<Entry>> {
        let g = &self.grid[j];
        if g.len() < 2 {
            return Some(Vec::new());
        }
        let (g0, gm) = (g[0], *g.last().unwrap());
        // cubes with positive overlap with (g0, gm)
        let zmin = (fr.solve_min(g0, -0.5)).floor() as i64 + 1;
        let zmax = (fr.solve_max(gm, 0.5)).ceil() as i64 - 1;
        let ranges: Vec<(i64, i64)> = g.iter().map(|&b| fr.straddling(b)).filter(|(lo, hi)| hi >= lo).collect();
        let count: i64 = ranges.iter().map(|(lo, hi)| hi - lo + 1).sum();
        if count as usize > budget {
            return None;
        }
        let mut crossing: Vec<i64> = Vec::with_capacity(count as usize);
        for (lo, hi) in ranges {
            crossing.extend(lo..=hi);
        }
        crossing.sort_unstable();
        crossing.dedup();
        let mut out = Vec::with_capacity(2 * crossing.len() + 1);
        let mut z = zmin;
        let mut ci = 0;
        while z <= zmax {
            while ci < crossing.len() && crossing[ci] < z {
                ci += 1;
            }
            if ci < crossing.len() && crossing[ci] == z {
                out.push(Entry { z0: z, z1: z, kind: self.span_kind(j, fr, z) });
                z += 1;
                continue;
            }
            let end = if ci < crossing.len() { (crossing[ci] - 1).min(zmax) } else { zmax };
            let t = self.interval_of(j, fr.left(z).0);
            out.push(Entry { z0: z, z1: end, kind: Kind::Inside(t) });
            z = end + 1;
        }
        Some(out)
    }

    fn span_kind(&self, j: usize, fr: &AxisFrame, z: i64) -> Kind {
        let (lm, lp) = fr.left(z);
        let (rm, rp) = fr.right(z);
        let g = &self.grid[j];
        let t0 = self.interval_of(j, lm);
        // interval containing R+ approached from the left
        let t1 = g.partition_point(|&c| c < rp) as isize - 1;
        if t0 == t1 {
            return Kind::Inside(t0);
        }
        // (L, R) = (α + λa, α + λb) with α = λu is linear in (α, λ), and the
        // (α, λ) range is a trapezoid, so (L, R) runs over the quadrilateral
        // spanned by the corner images. The mass is affine on each piece cut
        // out by the lines L = g_i and R = g_i; extremes sit on piece vertices.
        let a = fr.h * (z as f64 - 0.5);
        let b = fr.h * (z as f64 + 0.5);
        let corners = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(iu, il)| {
            let (u, l) = (fr.u[iu], fr.lam[il]);
            (l * (u + a), l * (u + b))
        });
        let mut pts: Vec<(f64, f64)> = corners.to_vec();
        let inner_l: Vec<f64> = g.iter().copied().filter(|&c| c > lm && c < lp).collect();
        let inner_r: Vec<f64> = g.iter().copied().filter(|&c| c > rm && c < rp).collect();
        for e in 0..4 {
            let (p0, p1) = (corners[e], corners[(e + 1) % 4]);
            for &c in &inner_l {
                if (p0.0 - c) * (p1.0 - c) < 0.0 {
                    let t = (c - p0.0) / (p1.0 - p0.0);
                    pts.push((c, p0.1 + t * (p1.1 - p0.1)));
                }
            }
            for &c in &inner_r {
                if (p0.1 - c) * (p1.1 - c) < 0.0 {
                    let t = (c - p0.1) / (p1.1 - p0.1);
                    pts.push((p0.0 + t * (p1.0 - p0.0), c));
                }
            }
        }
        for &cl in &inner_l {
            for &cr in &inner_r {
                if in_quad(&corners, (cl, cr)) {
                    pts.push((cl, cr));
                }
            }
        }
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pts.dedup();
        Kind::Span { t0, t1, pts, lmin: lm, rmax: rp }
    }

    /// Overlap lengths of [l, r) with grid intervals t0..=t1, as
    /// (overlay interval, length) pairs.
    fn lengths(&self, j: usize, t0: isize, t1: isize, l: f64, r: f64) -> Vec<(usize, f64)> {
        let g = &self.grid[j];
        let m = g.len() as isize - 1;
        let mut out = Vec::new();
        for t in t0.max(0)..=t1.min(m - 1) {
            let Some(ov) = self.ov_of[j][t as usize] else { continue };
            let a = l.max(g[t as usize]);
            let b = r.min(g[t as usize + 1]);
            if b > a {
                out.push((ov, b - a));
            }
        }
        out
    }

    /// Candidate per-axis length vectors for a run kind; `sides` are the
    /// admissible cube sides for Inside runs.
    fn candidates(&self, j: usize, kind: &Kind, sides: &[f64]) -> Vec<Vec<(usize, f64)>> {
        match kind {
            Kind::Inside(t) => {
                let m = self.interval_len(j, *t) as isize;
                if *t < 0 || *t >= m {
                    return vec![];
                }
                match self.ov_of[j][*t as usize] {
                    None => vec![],
                    Some(ov) => sides.iter().map(|&s| vec![(ov, s)]).collect(),
                }
            }
            Kind::Span { t0, t1, pts, .. } => pts.iter().map(|&(l, r)| self.lengths(j, *t0, *t1, l, r)).collect(),
        }
    }

    /// Density mass for the length vectors cands[j][pick[j]].
    fn density_mass(&self, cands: &[&[Vec<(usize, f64)>]], pick: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let d = self.d;
        let shape = self.overlay.shape();
        if (0..d).any(|j| cands[j][pick[j]].is_empty()) {
            return;
        }
        let mut idx = [0usize; 8];
        loop {
            let mut w = 1.0;
            let mut flat = 0;
            for j in 0..d {
                let (ov, len) = cands[j][pick[j]][idx[j]];
                w *= len;
                flat = flat * shape[j] + ov;
            }
            let val = &self.overlay.values[flat * d..(flat + 1) * d];
            for c in 0..d {
                out[c] += val[c] * w;
            }
            let mut j = d;
            loop {
                if j == 0 {
                    return;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < cands[j][pick[j]].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
    }

    /// Σ_cells ‖value‖ Π overlap lengths: |D| of a box given per-axis lengths.
    fn abs_mass(&self, per_axis: &[Vec<(usize, f64)>]) -> f64 {
        let d = self.d;
        if per_axis.iter().any(|v| v.is_empty()) {
            return 0.0;
        }
        let shape = self.overlay.shape();
        let mut idx = vec![0usize; d];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut flat = 0;
            for j in 0..d {
                let (ov, len) = per_axis[j][idx[j]];
                w *= len;
                flat = flat * shape[j] + ov;
            }
            acc += self.cell_norm[flat] * w;
            let mut j = d;
            loop {
                if j == 0 {
                    return acc;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < per_axis[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
    }

    /// Lengths of the outer envelope [L-, R+) of a run cube on one axis.
    fn outer_lengths(&self, j: usize, kind: &Kind, s_max: f64) -> Vec<(usize, f64)> {
        match kind {
            Kind::Inside(_) => self.candidates(j, kind, &[s_max]).pop().unwrap_or_default(),
            Kind::Span { t0, t1, lmin, rmax, .. } => self.lengths(j, *t0, *t1, *lmin, *rmax),
        }
    }

    /// Iterates the product of candidate sets, calling `f` with the mass.
    fn for_each_vertex(&self, cands: &[&[Vec<(usize, f64)>]], mut f: impl FnMut(&[f64])) {
        let d = self.d;
        if cands.iter().any(|c| c.is_empty()) {
            f(&vec![0.0; d]);
            return;
        }
        let mut pick = vec![0usize; d];
        let mut mass = vec![0.0; d];
        loop {
            self.density_mass(cands, &pick, &mut mass);
            f(&mass);
            let mut j = d;
            loop {
                if j == 0 {
                    return;
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < cands[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }

    /// Upper bound (exact on a point cell) of Σ_{Q∈Δ_λ^k} ‖D(Q + λu)‖ over the cell.
    fn level_sum(&self, cell: &Cell, k: u32, budget: usize) -> LevelSum {
        let frames = self.frames(cell, k);
        if self.atom_pos.is_empty() && cell.lam_hi > cell.lam_lo {
            if let Some(v) = self.level_sum_vertices(&frames) {
                return LevelSum { value: v.min(self.tv), resolved: true };
            }
        }
        self.level_sum_frames(&frames, budget)
    }

    /// Exact sup over the cell of a level sum for densities only, with λ
    /// decoupled across axes. Along axis j the faces are α + λc with α = λu,
    /// so with the other axes fixed the sum is convex on each piece of the
    /// arrangement of lines α + λc = g_b inside the (α, λ) trapezoid. The
    /// maximum is attained at a product of per-axis piece vertices.
    fn level_sum_vertices(&self, frames: &[AxisFrame]) -> Option<f64> {
        let d = self.d;
        let mut verts: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
        let mut total = 1usize;
        for j in 0..d {
            let fr = &frames[j];
            let corners = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(iu, il)| (fr.lam[il] * fr.u[iu], fr.lam[il]));
            // lines α + λc = g for faces c = h(i - 1/2) that can cross g
            let mut lines: Vec<(f64, f64)> = Vec::new();
            for &g in &self.grid[j] {
                let (lo, hi) = fr.straddling(g);
                for z in lo..=hi + 1 {
                    let c = fr.h * (z as f64 - 0.5);
                    let vals = corners.map(|(a, l)| a + l * c - g);
                    if vals.iter().any(|v| *v > 0.0) && vals.iter().any(|v| *v < 0.0) {
                        lines.push((c, g));
                    }
                }
                if lines.len() > 8 {
                    return None;
                }
            }
            let mut pts: Vec<(f64, f64)> = corners.to_vec();
            for &(c, g) in &lines {
                for e in 0..4 {
                    let (p0, p1) = (corners[e], corners[(e + 1) % 4]);
                    let f0 = p0.0 + p0.1 * c - g;
                    let f1 = p1.0 + p1.1 * c - g;
                    if f0 * f1 < 0.0 {
                        let t = f0 / (f0 - f1);
                        pts.push((p0.0 + t * (p1.0 - p0.0), p0.1 + t * (p1.1 - p0.1)));
                    }
                }
            }
            for a in 0..lines.len() {
                for b in a + 1..lines.len() {
                    let ((c1, g1), (c2, g2)) = (lines[a], lines[b]);
                    if c1 == c2 {
                        continue;
                    }
                    // α + λc1 = g1, α + λc2 = g2
                    let lam = (g1 - g2) / (c1 - c2);
                    let alpha = g1 - lam * c1;
                    if in_quad(&corners, (alpha, lam)) {
                        pts.push((alpha, lam));
                    }
                }
            }
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            pts.dedup();
            total = total.saturating_mul(pts.len());
            if total > MAX_VERTEX_POINTS {
                return None;
            }
            verts.push(pts);
        }
        let mut pick = vec![0usize; d];
        let mut best: f64 = 0.0;
        loop {
            let fr: Vec<AxisFrame> = (0..d)
                .map(|j| {
                    let (alpha, lam) = verts[j][pick[j]];
                    let u = alpha / lam;
                    AxisFrame { lam: [lam, lam], u: [u, u], h: frames[j].h }
                })
                .collect();
            let ls = self.level_sum_frames(&fr, POINT_BUDGET);
            if !ls.resolved {
                return None;
            }
            best = best.max(ls.value);
            let mut j = d;
            loop {
                if j == 0 {
                    return Some(best);
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < verts[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }

    fn level_sum_frames(&self, frames: &[AxisFrame], budget: usize) -> LevelSum {
        let d = self.d;
        let fallback = LevelSum { value: self.tv, resolved: false };
        let s_max: Vec<f64> = frames.iter().map(|f| f.lam[1] * f.h).collect();
        let s_min: Vec<f64> = frames.iter().map(|f| f.lam[0] * f.h).collect();
        let mut entries = Vec::with_capacity(d);
        for j in 0..d {
            match self.axis_entries(j, &frames[j], budget) {
                Some(e) => entries.push(e),
                None => return fallback,
            }
        }
        let groups: usize = entries.iter().map(|e| e.len().max(1)).product();
        if groups > budget {
            return fallback;
        }
        // Every cube that may hold an atom is bounded on its own. An atom whose
        // cube is ambiguous inside the cell sits in exactly one of its
        // candidates; atoms sharing a coordinate share the choice on that axis.
        let na = self.atom_pos.len();
        let limit = budget.max(ATOM_CUBE_BUDGET);
        let mut ranges_of: Vec<(i64, i64)> = Vec::with_capacity(na * d);
        let mut present = vec![true; na];
        let mut keys: Vec<u128> = Vec::new();
        for (a, p) in self.atom_pos.iter().enumerate() {
            let start = ranges_of.len();
            let mut cnt = 1usize;
            for j in 0..d {
                let r = frames[j].containing(p[j]);
                cnt *= (r.1 - r.0 + 1).max(0) as usize;
                ranges_of.push(r);
            }
            if cnt == 0 {
                present[a] = false;
                continue;
            }
            let ranges = &ranges_of[start..];
            if keys.len() + cnt > limit || ranges.iter().any(|r| r.0 <= -Z_OFF || r.1 >= Z_OFF) {
                return fallback;
            }
            for_each_cube(ranges, |z| keys.push(pack(z)));
        }
        keys.sort_unstable();
        keys.dedup();
        let id_of = |z: &[i64]| keys.binary_search(&pack(z)).expect("atom cube");
        let ranges = |a: usize| &ranges_of[a * d..(a + 1) * d];
        // group index, kind and candidates of each atom coordinate, per axis
        let locate = |j: usize, zj: i64| -> Option<usize> {
            let e = &entries[j];
            let i = e.partition_point(|en| en.z1 < zj);
            (i < e.len() && e[i].z0 <= zj).then_some(i)
        };
        let sides_ub: Vec<Vec<f64>> = (0..d).map(|j| vec![s_max[j]]).collect();
        let sides_rng: Vec<Vec<f64>> =
            (0..d).map(|j| if s_max[j] > s_min[j] { vec![s_min[j], s_max[j]] } else { vec![s_max[j]] }).collect();
        type AxisInfo = (i64, Option<usize>, Kind, Vec<Vec<(usize, f64)>>);
        let mut axis_info: Vec<Vec<AxisInfo>> = Vec::with_capacity(d);
        for j in 0..d {
            let mut zs: Vec<i64> = keys.iter().map(|&k| unpack(k, d)[j]).collect();
            zs.sort_unstable();
            zs.dedup();
            let info = zs
                .into_iter()
                .map(|z| {
                    let g = locate(j, z);
                    let kind = match g.map(|i| &entries[j][i].kind) {
                        Some(Kind::Inside(t)) => Kind::Inside(*t),
                        _ => self.span_kind(j, &frames[j], z),
                    };
                    let c = self.candidates(j, &kind, &sides_rng[j]);
                    (z, g, kind, c)
                })
                .collect();
            axis_info.push(info);
        }
        let info_of = |j: usize, z: i64| -> &AxisInfo {
            let v = &axis_info[j];
            &v[v.binary_search_by_key(&z, |x| x.0).expect("axis entry")]
        };
        let mut removed: Vec<usize> = Vec::new();
        let mut spare = VERTEX_BUDGET;
        let mut affordable = |n: usize| {
            if n <= VERTEX_CAP || n <= spare / 2 {
                spare = spare.saturating_sub(n);
                true
            } else {
                false
            }
        };
        // density part of each atom cube: componentwise range and max norm
        let mut dens: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(keys.len());
        let mut infos: Vec<&AxisInfo> = Vec::with_capacity(d);
        for &key in &keys {
            let z = unpack(key, d);
            infos.clear();
            infos.extend((0..d).map(|j| info_of(j, z[j])));
            if infos.iter().all(|x| x.1.is_some()) {
                removed.push(infos.iter().enumerate().fold(0, |acc, (j, x)| acc * entries[j].len() + x.1.unwrap()));
            }
            let n_vert: usize = infos.iter().map(|x| x.3.len().max(1)).product();
            if !affordable(n_vert) {
                let outer: Vec<_> = (0..d).map(|j| self.outer_lengths(j, &infos[j].2, s_max[j])).collect();
                let ab = self.abs_mass(&outer);
                dens.push((vec![-ab; d], vec![ab; d], ab));
                continue;
            }
            let cands: Vec<&[Vec<(usize, f64)>]> = infos.iter().map(|x| x.3.as_slice()).collect();
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            let mut nmax: f64 = 0.0;
            self.for_each_vertex(&cands, |m| {
                for c in 0..d {
                    lo[c] = lo[c].min(m[c]);
                    hi[c] = hi[c].max(m[c]);
                }
                nmax = nmax.max(norm(m));
            });
            dens.push((lo, hi, nmax));
        }
        removed.sort_unstable();
        let box_ub = |lo: &[f64], hi: &[f64], shift: &[f64]| -> f64 {
            (0..d).map(|c| (lo[c] + shift[c]).abs().max((hi[c] + shift[c]).abs()).powi(2)).sum::<f64>().sqrt()
        };
        // switches: (axis, coordinate) pairs whose cube index is ambiguous
        let mut switch_of: HashMap<(usize, u64), usize> = HashMap::new();
        let mut switch_range: Vec<(i64, i64)> = Vec::new();
        let mut atom_switch: Vec<Option<usize>> = vec![None; na * d];
        for a in (0..na).filter(|&a| present[a]) {
            for j in 0..d {
                let (lo, hi) = ranges(a)[j];
                if hi > lo {
                    let key = (j, self.atom_pos[a][j].to_bits());
                    let id = *switch_of.entry(key).or_insert_with(|| {
                        switch_range.push((lo, hi));
                        switch_range.len() - 1
                    });
                    atom_switch[a * d + j] = Some(id);
                }
            }
        }
        // Switches interact only through cubes they can both fill, so the
        // maximum splits over connected components of that relation.
        let n_sw = switch_range.len();
        let mut parent: Vec<usize> = (0..n_sw).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut fixed: Vec<Vec<f64>> = vec![vec![0.0; d]; keys.len()];
        let mut has_fixed = vec![false; keys.len()];
        let mut cube_switch: Vec<Option<usize>> = vec![None; keys.len()];
        let mut live: Vec<usize> = Vec::new();
        for a in (0..na).filter(|&a| present[a]) {
            let sw: Vec<usize> = atom_switch[a * d..(a + 1) * d].iter().flatten().copied().collect();
            if sw.is_empty() {
                let z: Vec<i64> = ranges(a).iter().map(|r| r.0).collect();
                let id = id_of(&z);
                for c in 0..d {
                    fixed[id][c] += self.atom_w[a][c];
                }
                has_fixed[id] = true;
                continue;
            }
            live.push(a);
            for &s in &sw[1..] {
                let (x, y) = (find(&mut parent, sw[0]), find(&mut parent, s));
                parent[x] = y;
            }
            for_each_cube(ranges(a), |z| {
                let id = id_of(z);
                match cube_switch[id] {
                    None => cube_switch[id] = Some(sw[0]),
                    Some(t) => {
                        let (x, y) = (find(&mut parent, sw[0]), find(&mut parent, t));
                        parent[x] = y;
                    }
                }
            });
        }
        let mut comp_of: HashMap<usize, usize> = HashMap::new();
        let mut comp_sw: Vec<Vec<usize>> = Vec::new();
        for s in 0..n_sw {
            let r = find(&mut parent, s);
            let c = *comp_of.entry(r).or_insert_with(|| {
                comp_sw.push(Vec::new());
                comp_sw.len() - 1
            });
            comp_sw[c].push(s);
        }
        let mut comp_atoms: Vec<Vec<usize>> = vec![Vec::new(); comp_sw.len()];
        for &a in &live {
            let s = atom_switch[a * d..(a + 1) * d].iter().flatten().next().copied().unwrap();
            comp_atoms[comp_of[&find(&mut parent, s)]].push(a);
        }
        let mut comp_cubes: Vec<Vec<usize>> = vec![Vec::new(); comp_sw.len()];
        for (id, s) in cube_switch.iter().enumerate() {
            if let Some(s) = s {
                comp_cubes[comp_of[&find(&mut parent, *s)]].push(id);
            }
        }
        let cube_value = |id: usize, extra: &[f64]| -> f64 {
            let (lo, hi, nmax) = &dens[id];
            if !has_fixed[id] && extra.iter().all(|x| *x == 0.0) {
                return *nmax;
            }
            let sh: Vec<f64> = (0..d).map(|c| fixed[id][c] + extra[c]).collect();
            box_ub(lo, hi, &sh)
        };
        let zero = vec![0.0; d];
        let mut total: f64 =
            (0..keys.len()).filter(|&id| cube_switch[id].is_none()).map(|id| cube_value(id, &zero)).sum();
        for c in 0..comp_sw.len() {
            let sws = &comp_sw[c];
            let cubes_c = &comp_cubes[c];
            let slot = |id: usize| cubes_c.binary_search(&id).expect("component cube");
            let count = sws
                .iter()
                .try_fold(1usize, |acc, &s| acc.checked_mul((switch_range[s].1 - switch_range[s].0 + 1) as usize))
                .filter(|&n| n <= MAX_SCENARIOS);
            match count {
                Some(count) => {
                    let mut choice: Vec<i64> = vec![0; n_sw];
                    for &s in sws {
                        choice[s] = switch_range[s].0;
                    }
                    let mut best = f64::NEG_INFINITY;
                    let mut extra = vec![vec![0.0; d]; cubes_c.len()];
                    let mut z = vec![0i64; d];
                    for _ in 0..count {
                        extra.iter_mut().for_each(|e| e.iter_mut().for_each(|x| *x = 0.0));
                        for &a in &comp_atoms[c] {
                            for j in 0..d {
                                z[j] = atom_switch[a * d + j].map_or(ranges(a)[j].0, |s| choice[s]);
                            }
                            let e = &mut extra[slot(id_of(&z))];
                            for k in 0..d {
                                e[k] += self.atom_w[a][k];
                            }
                        }
                        let v: f64 = cubes_c.iter().zip(&extra).map(|(&id, e)| cube_value(id, e)).sum();
                        best = best.max(v);
                        for &s in sws {
                            choice[s] += 1;
                            if choice[s] <= switch_range[s].1 {
                                break;
                            }
                            choice[s] = switch_range[s].0;
                        }
                    }
                    total += best;
                }
                None => {
                    // each cube may take every atom that can reach it, or each
                    // ambiguous atom is charged once by the triangle inequality
                    let mut lo_all: Vec<Vec<f64>> = cubes_c.iter().map(|&id| dens[id].0.clone()).collect();
                    let mut hi_all: Vec<Vec<f64>> = cubes_c.iter().map(|&id| dens[id].1.clone()).collect();
                    let mut loose = 0.0;
                    for &a in &comp_atoms[c] {
                        let w = &self.atom_w[a];
                        loose += norm(w);
                        for_each_cube(ranges(a), |z| {
                            let i = slot(id_of(z));
                            for k in 0..d {
                                if w[k] > 0.0 {
                                    hi_all[i][k] += w[k];
                                } else {
                                    lo_all[i][k] += w[k];
                                }
                            }
                        });
                    }
                    let boxed: f64 =
                        cubes_c.iter().enumerate().map(|(i, &id)| box_ub(&lo_all[i], &hi_all[i], &fixed[id])).sum();
                    let tri: f64 = cubes_c.iter().map(|&id| cube_value(id, &zero)).sum::<f64>() + loose;
                    total += boxed.min(tri);
                }
            }
        }
        // density-only groups
        if entries.iter().all(|e| !e.is_empty()) {
            let ent_cands: Vec<Vec<Vec<Vec<(usize, f64)>>>> = (0..d)
                .map(|j| entries[j].iter().map(|en| self.candidates(j, &en.kind, &sides_ub[j])).collect())
                .collect();
            let mut idx = vec![0usize; d];
            let mut flat = 0usize;
            let mut ri = 0usize;
            loop {
                let mut count: i64 = 1;
                for j in 0..d {
                    let en = &entries[j][idx[j]];
                    count *= en.z1 - en.z0 + 1;
                }
                while ri < removed.len() && removed[ri] == flat {
                    count -= 1;
                    ri += 1;
                }
                if count > 0 {
                    let cands: Vec<&[Vec<(usize, f64)>]> = (0..d).map(|j| ent_cands[j][idx[j]].as_slice()).collect();
                    let n_vert: usize = cands.iter().map(|c| c.len().max(1)).product();
                    let best = if !affordable(n_vert) {
                        let outer: Vec<_> =
                            (0..d).map(|j| self.outer_lengths(j, &entries[j][idx[j]].kind, s_max[j])).collect();
                        self.abs_mass(&outer)
                    } else {
                        let mut best: f64 = 0.0;
                        self.for_each_vertex(&cands, |m| best = best.max(norm(m)));
                        best
                    };
                    total += count as f64 * best;
                }
                flat += 1;
                let mut j = d;
                let mut done = false;
                loop {
                    if j == 0 {
                        done = true;
                        break;
                    }
                    j -= 1;
                    idx[j] += 1;
                    if idx[j] < entries[j].len() {
                        break;
                    }
                    idx[j] = 0;
                }
                if done {
                    break;
                }
            }
        }
        LevelSum { value: total.min(self.tv), resolved: true }
    }

    /// Σ_{k=0}^{k_max} 2^{-k} × level bound; exact on a point cell.
    /// Once a level is too fine to enumerate, deeper ones are as well and
    /// all of them take the TV bound.
    pub fn bound(&self, cell: &Cell, k_max: u32, budget: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..=k_max {
            let ls = self.level_sum(cell, k, budget);
            if !ls.resolved {
                let rest = 0.5f64.powi(k as i32 - 1) - 0.5f64.powi(k_max as i32);
                return s + rest * self.tv;
            }
            s += 0.5f64.powi(k as i32) * ls.value;
        }
        s
    }

    /// Truncated g(λu, λ) evaluated exactly. Levels whose enumeration exceeds
    /// the budget are dropped, which keeps the value a lower bound.
    pub fn value_at(&self, u: &[f64], lam: f64, k_max: u32, budget: usize) -> f64 {
        let cell = Cell::point(u, lam);
        let mut s = 0.0;
        for k in 0..=k_max {
            let ls = self.level_sum(&cell, k, budget);
            if ls.resolved {
                s += 0.5f64.powi(k as i32) * ls.value;
            }
        }
        s
    }

    /// Exact density mass of the cube z at level k for the point (u, λ).
    pub fn cube_density_mass(&self, u: &[f64], lam: f64, k: u32, z: &[i64]) -> Vec<f64> {
        let cell = Cell::point(u, lam);
        let frames = self.frames(&cell, k);
        let mut per_axis = Vec::with_capacity(self.d);
        for j in 0..self.d {
            let (l, _) = frames[j].left(z[j]);
            let (r, _) = frames[j].right(z[j]);
            let g = &self.grid[j];
            if g.len() < 2 {
                return vec![0.0; self.d];
            }
            per_axis.push(vec![self.lengths(j, -1, g.len() as isize, l, r)]);
        }
        let sel: Vec<&[Vec<(usize, f64)>]> = per_axis.iter().map(|v| v.as_slice()).collect();
        let mut out = vec![0.0; self.d];
        self.density_mass(&sel, &vec![0; self.d], &mut out);
        out
    }

    /// Cube index z at level k containing point p for parameters (u, λ).
    pub fn cube_of(p: &[f64], u: &[f64], lam: f64, k: u32) -> Vec<i64> {
        let inv_h = 2f64.powi(k as i32);
        (0..p.len()).map(|j| ((p[j] / lam - u[j]) * inv_h + 0.5).floor() as i64).collect()
    }
}

#[derive(Clone, Debug)]
struct Node {
    ub: f64,
    seq: u64,
    cell: Cell,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        self.ub.total_cmp(&o.ub).then_with(|| o.seq.cmp(&self.seq))
    }
}

/// Certified bracket for d(μ, ν).
pub fn distance(mu: &VectorMeasure, nu: &VectorMeasure, opts: &DistanceOptions) -> DistanceBracket {
    distance_prepared(&PreparedDiff::new(mu, nu), opts)
}

pub fn distance_prepared(p: &PreparedDiff, opts: &DistanceOptions) -> DistanceBracket {
    let d = p.d;
    let tail = 0.5f64.powi(opts.k_max as i32) * p.tv;
    if p.is_zero() {
        return DistanceBracket {
            lower: 0.0,
            upper: tail,
            k_max: opts.k_max,
            tail,
            argmax: (vec![0.0; d], 1.0),
            stats: SearchStats { cells: 0, converged: true },
        };
    }
    let g = opts.init_split.max(1);
    let mut roots = Vec::new();
    let total = g.pow(d as u32 + 1);
    for code in 0..total {
        let mut c = code;
        let mut cell = Cell { u_lo: vec![0.0; d], u_hi: vec![0.0; d], lam_lo: 0.0, lam_hi: 0.0 };
        for j in 0..=d {
            let i = c % g;
            c /= g;
            let a = i as f64 / g as f64;
            let b = (i + 1) as f64 / g as f64;
            if j < d {
                cell.u_lo[j] = a - 0.5;
                cell.u_hi[j] = b - 0.5;
            } else {
                cell.lam_lo = 1.0 + a;
                cell.lam_hi = 1.0 + b;
            }
        }
        roots.push(cell);
    }
    let eval = |cell: &Cell| -> (f64, f64, (Vec<f64>, f64)) {
        let (u, lam) = cell.centre();
        let lb = p.value_at(&u, lam, opts.k_max, POINT_BUDGET);
        let ub = p.bound(cell, opts.k_max, opts.level_budget).max(lb);
        (ub, lb, (u, lam))
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut best_lb = 0.0;
    let mut argmax = (vec![0.0; d], 1.0);
    let mut cells = 0usize;
    let absorb = |results: Vec<(Cell, (f64, f64, (Vec<f64>, f64)))>,
                      heap: &mut BinaryHeap<Node>,
                      best_lb: &mut f64,
                      argmax: &mut (Vec<f64>, f64),
                      seq: &mut u64| {
        for (cell, (ub, lb, at)) in results {
            if lb > *best_lb {
                *best_lb = lb;
                *argmax = at;
            }
            heap.push(Node { ub, seq: *seq, cell });
            *seq += 1;
        }
    };
    let first: Vec<_> = roots.into_par_iter().map(|c| {
        let r = eval(&c);
        (c, r)
    }).collect();
    cells += first.len();
    absorb(first, &mut heap, &mut best_lb, &mut argmax, &mut seq);
    let mut converged = false;
    loop {
        let Some(top) = heap.peek() else {
            converged = true;
            break;
        };
        if top.ub - best_lb <= opts.rel_gap * top.ub {
            converged = true;
            break;
        }
        if opts.threshold.is_some_and(|thr| top.ub + tail <= thr || best_lb > thr) {
            break;
        }
        if cells >= opts.max_cells {
            break;
        }
        let mut batch = Vec::new();
        while batch.len() < opts.batch {
            let Some(n) = heap.pop() else { break };
            if n.ub <= best_lb {
                continue;
            }
            batch.push(n);
        }
        if batch.is_empty() {
            continue;
        }
        let children: Vec<Cell> = batch
            .iter()
            .flat_map(|n| {
                let (a, b) = n.cell.split();
                [a, b]
            })
            .collect();
        let results: Vec<_> = children.into_par_iter().map(|c| {
            let r = eval(&c);
            (c, r)
        }).collect();
        cells += results.len();
        absorb(results, &mut heap, &mut best_lb, &mut argmax, &mut seq);
    }
    let top_ub = heap.peek().map(|n| n.ub).unwrap_or(best_lb).max(best_lb);
    DistanceBracket {
        lower: best_lb,
        upper: top_ub + tail,
        k_max: opts.k_max,
        tail,
        argmax,
        stats: SearchStats { cells, converged },
    }
}
