//! Piecewise-constant continuous streams on rational box meshes.

use crate::error::{FppError, Result};
use crate::lattice::AxisBox;
use crate::scalar::{parse_q, q_to_f64, Scalar, Q};
use num::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// σ: constant vector value on each half-open cell, zero elsewhere.
#[derive(Clone, Debug)]
pub struct ContinuousField<S: Scalar> {
    pub d: usize,
    pub cells: Vec<(AxisBox, Vec<S>)>,
    /// componentwise bound M
    pub bound: S,
}

#[derive(Clone, Debug, Default)]
pub struct DivergenceReport {
    /// normal component continuous across every face inside Ω
    pub interior_ok: bool,
    /// zero normal trace on ∂Ω outside Γ¹ ∪ Γ²
    pub boundary_ok: bool,
    pub max_interior_jump: f64,
    pub max_boundary_flux: f64,
    /// (axis, plane coordinate, transverse midpoint) of offending pieces
    pub bad_pieces: Vec<(usize, Q, Vec<Q>)>,
}

impl DivergenceReport {
    pub fn divergence_free(&self) -> bool {
        self.interior_ok && self.boundary_ok
    }
}

fn overlap_len(a0: &Q, a1: &Q, b0: &Q, b1: &Q) -> Q {
    let lo = if a0 > b0 { a0 } else { b0 };
    let hi = if a1 < b1 { a1 } else { b1 };
    if hi > lo {
        hi - lo
    } else {
        Q::zero()
    }
}

impl<S: Scalar> ContinuousField<S> {
    pub fn new(d: usize, cells: Vec<(AxisBox, Vec<S>)>, bound: S) -> Result<Self> {
        for (i, (b, v)) in cells.iter().enumerate() {
            if b.dim() != d || v.len() != d {
                return Err(FppError::pre(format!("cell {i}: dimension mismatch")));
            }
            if !b.is_solid() {
                return Err(FppError::pre(format!("cell {i}: degenerate box")));
            }
            if v.iter().any(|x| x.abs() > bound) {
                return Err(FppError::pre(format!("cell {i}: component exceeds the bound")));
            }
        }
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                let (a, b) = (&cells[i].0, &cells[j].0);
                if (0..d).all(|k| overlap_len(&a.lo[k], &a.hi[k], &b.lo[k], &b.hi[k]) > Q::zero()) {
                    return Err(FppError::pre(format!("cells {i} and {j} overlap")));
                }
            }
        }
        Ok(ContinuousField { d, cells, bound })
    }

    pub fn constant_on(bx: AxisBox, value: Vec<S>, bound: S) -> Result<Self> {
        Self::new(bx.dim(), vec![(bx, value)], bound)
    }

    pub fn value_at(&self, x: &[Q]) -> Result<Vec<S>> {
        if x.len() != self.d {
            return Err(FppError::pre("point dimension does not match the field"));
        }
        for (b, v) in &self.cells {
            if b.contains_point(x) {
                return Ok(v.clone());
            }
        }
        Ok(vec![S::zero(); self.d])
    }

    pub fn value_at_f64(&self, x: &[f64]) -> Vec<f64> {
        for (b, v) in &self.cells {
            if (0..self.d).all(|j| q_to_f64(&b.lo[j]) <= x[j] && x[j] < q_to_f64(&b.hi[j])) {
                return v.iter().map(|s| s.to_f64_lossy()).collect();
            }
        }
        vec![0.0; self.d]
    }

    /// ∫_P σ·e_i over a flat box P normal to axis i. On a mesh interface the
    /// two one-sided traces are averaged.
    pub fn face_integral(&self, p: &AxisBox, i: usize) -> Result<S> {
        if p.dim() != self.d || p.lo[i] != p.hi[i] {
            return Err(FppError::pre("plaquette must be flat along its normal axis"));
        }
        let c = &p.lo[i];
        let mut acc = S::zero();
        for (b, v) in &self.cells {
            let weight = if &b.lo[i] < c && c < &b.hi[i] {
                Q::from_integer(1)
            } else if &b.lo[i] == c || &b.hi[i] == c {
                Q::new(1, 2)
            } else {
                continue;
            };
            let mut area = weight;
            for j in (0..self.d).filter(|&j| j != i) {
                area *= overlap_len(&b.lo[j], &b.hi[j], &p.lo[j], &p.hi[j]);
            }
            if !area.is_zero() {
                let mut t = v[i].clone();
                t *= S::from_q(&area);
                acc += t;
            }
        }
        Ok(acc)
    }

    /// −∫_{Γ¹} σ·n_Ω: inward flux through the given boundary faces, using the
    /// trace of the cells adjacent to each face. σ is taken to vanish outside Ω.
    pub fn flow_cont(&self, gamma1: &[AxisBox]) -> Result<S> {
        let mut acc = S::zero();
        for f in gamma1 {
            let i = f.normal_axis().ok_or_else(|| FppError::pre("Γ¹ faces must be flat boxes"))?;
            let c = &f.lo[i];
            for (b, v) in &self.cells {
                let sign = if &b.lo[i] == c {
                    1
                } else if &b.hi[i] == c {
                    -1
                } else {
                    continue;
                };
                let mut area = Q::from_integer(1);
                for j in (0..self.d).filter(|&j| j != i) {
                    area *= overlap_len(&b.lo[j], &b.hi[j], &f.lo[j], &f.hi[j]);
                }
                if area.is_zero() {
                    continue;
                }
                let mut t = v[i].clone();
                t *= S::from_q(&area);
                if sign > 0 {
                    acc += t;
                } else {
                    acc -= t;
                }
            }
        }
        Ok(acc)
    }

    /// Mesh-level divergence check: the normal component must not jump across
    /// any face inside Ω, and must vanish on ∂Ω away from Γ¹ ∪ Γ².
    pub fn check_divergence_free(&self, region: &[AxisBox], gamma1: &[AxisBox], gamma2: &[AxisBox]) -> DivergenceReport {
        let d = self.d;
        let mut rep = DivergenceReport { interior_ok: true, boundary_ok: true, ..Default::default() };
        let terminals: Vec<&AxisBox> = gamma1.iter().chain(gamma2).collect();
        for i in 0..d {
            let mut planes: Vec<Q> = self.cells.iter().flat_map(|(b, _)| [b.lo[i], b.hi[i]]).collect();
            planes.sort();
            planes.dedup();
            for c in planes {
                // transverse breakpoints from everything touching this plane
                let mut cuts: Vec<Vec<Q>> = vec![Vec::new(); d];
                let touching = self.cells.iter().filter(|(b, _)| b.lo[i] == c || b.hi[i] == c).map(|(b, _)| b);
                let extra = region.iter().chain(terminals.iter().copied());
                for b in touching.chain(extra) {
                    for j in (0..d).filter(|&j| j != i) {
                        cuts[j].push(b.lo[j]);
                        cuts[j].push(b.hi[j]);
                    }
                }
                for cj in cuts.iter_mut() {
                    cj.sort();
                    cj.dedup();
                }
                let axes: Vec<usize> = (0..d).filter(|&j| j != i).collect();
                if axes.iter().any(|&j| cuts[j].len() < 2) {
                    continue;
                }
                let mut idx = vec![0usize; axes.len()];
                loop {
                    let mut mid = vec![c; d];
                    for (a, &j) in axes.iter().enumerate() {
                        mid[j] = (cuts[j][idx[a]] + cuts[j][idx[a] + 1]) / Q::from_integer(2);
                    }
                    self.inspect_piece(i, &c, &mid, region, &terminals, &mut rep);
                    let mut a = axes.len();
                    let mut done = true;
                    while a > 0 {
                        a -= 1;
                        idx[a] += 1;
                        if idx[a] + 1 < cuts[axes[a]].len() {
                            done = false;
                            break;
                        }
                        idx[a] = 0;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
        rep
    }

    fn inspect_piece(
        &self,
        i: usize,
        c: &Q,
        mid: &[Q],
        region: &[AxisBox],
        terminals: &[&AxisBox],
        rep: &mut DivergenceReport,
    ) {
        let d = self.d;
        let trans = |b: &AxisBox| (0..d).filter(|&j| j != i).all(|j| b.lo[j] < mid[j] && mid[j] < b.hi[j]);
        let mut plus = S::zero();
        let mut minus = S::zero();
        for (b, v) in &self.cells {
            if !trans(b) {
                continue;
            }
            if &b.lo[i] == c {
                plus = v[i].clone();
            } else if &b.hi[i] == c {
                minus = v[i].clone();
            } else if &b.lo[i] < c && c < &b.hi[i] {
                return;
            }
        }
        let jump = plus.clone() - minus.clone();
        if jump.near_zero(&self.bound) {
            return;
        }
        let inside_plus = region.iter().any(|b| trans(b) && &b.lo[i] <= c && c < &b.hi[i]);
        let inside_minus = region.iter().any(|b| trans(b) && &b.lo[i] < c && c <= &b.hi[i]);
        let on_terminal = terminals.iter().any(|f| {
            f.lo[i] == *c && (0..d).filter(|&j| j != i).all(|j| f.lo[j] <= mid[j] && mid[j] <= f.hi[j])
        });
        let mag = jump.to_f64_lossy().abs();
        if inside_plus && inside_minus {
            rep.interior_ok = false;
            rep.max_interior_jump = rep.max_interior_jump.max(mag);
        } else if inside_plus || inside_minus {
            if on_terminal {
                return;
            }
            rep.boundary_ok = false;
            rep.max_boundary_flux = rep.max_boundary_flux.max(mag);
        } else {
            // nonzero field outside Ω: the trace on the far side is not zero
            rep.boundary_ok = false;
            rep.max_boundary_flux = rep.max_boundary_flux.max(mag);
        }
        rep.bad_pieces.push((i, *c, mid.to_vec()));
    }

    /// Σ_cells I(value)·vol(cell).
    pub fn rate_integral(&self, rate: impl Fn(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for (b, v) in &self.cells {
            let vol = q_to_f64(&b.measure());
            if vol == 0.0 {
                continue;
            }
            let vf: Vec<f64> = v.iter().map(|s| s.to_f64_lossy()).collect();
            acc += rate(&vf) * vol;
        }
        acc
    }

    pub fn map_to_f64(&self) -> ContinuousField<f64> {
        ContinuousField {
            d: self.d,
            cells: self.cells.iter().map(|(b, v)| (b.clone(), v.iter().map(|s| s.to_f64_lossy()).collect())).collect(),
            bound: self.bound.to_f64_lossy(),
        }
    }

    /// σ ∗ K_p sampled at the centres of a grid of side 1/(2p) covering
    /// supp σ enlarged by 1/p, with the tensor midpoint rule at spacing
    /// 1/(4p) on the kernel support. Kernel weights are normalized to sum 1.
    pub fn mollify(&self, p: i64) -> Result<ContinuousField<f64>> {
        if p < 1 {
            return Err(FppError::config("p", "must be >= 1"));
        }
        let d = self.d;
        let m = self.bound.to_f64_lossy();
        if self.cells.is_empty() {
            return Ok(ContinuousField { d, cells: Vec::new(), bound: m });
        }
        let pf = p as f64;
        // quadrature nodes y = (2a+1)/(8p) - 1/p, a = 0..8
        let nodes: Vec<f64> = (0..8).map(|a| (2 * a + 1) as f64 / (8.0 * pf) - 1.0 / pf).collect();
        let mut kernel: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            let y: Vec<f64> = idx.iter().map(|&a| nodes[a]).collect();
            let r2: f64 = y.iter().map(|t| (t * pf).powi(2)).sum();
            if r2 < 1.0 {
                kernel.push((y, (-1.0 / (1.0 - r2)).exp()));
            }
            let mut j = d;
            let mut done = true;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] < 8 {
                    done = false;
                    break;
                }
                idx[j] = 0;
            }
            if done {
                break;
            }
        }
        let total: f64 = kernel.iter().map(|k| k.1).sum();
        kernel.iter_mut().for_each(|k| k.1 /= total);
        // output grid in units of 1/(2p)
        let step = Q::new(1, 2 * p);
        let mut lo_k = vec![i64::MAX; d];
        let mut hi_k = vec![i64::MIN; d];
        for (b, _) in &self.cells {
            for j in 0..d {
                let l = ((b.lo[j] - Q::new(1, p)) / step).floor().to_integer();
                let h = ((b.hi[j] + Q::new(1, p)) / step).ceil().to_integer();
                lo_k[j] = lo_k[j].min(l);
                hi_k[j] = hi_k[j].max(h);
            }
        }
        let mut grid_cells: Vec<Vec<i64>> = Vec::new();
        let mut k = lo_k.clone();
        loop {
            grid_cells.push(k.clone());
            let mut j = d;
            let mut done = true;
            while j > 0 {
                j -= 1;
                k[j] += 1;
                if k[j] < hi_k[j] {
                    done = false;
                    break;
                }
                k[j] = lo_k[j];
            }
            if done {
                break;
            }
        }
        let out: Vec<(AxisBox, Vec<f64>)> = grid_cells
            .par_iter()
            .filter_map(|k| {
                let centre: Vec<f64> = k.iter().map(|&a| (a as f64 + 0.5) / (2.0 * pf)).collect();
                let mut v = vec![0.0; d];
                for (y, w) in &kernel {
                    let x: Vec<f64> = (0..d).map(|j| centre[j] - y[j]).collect();
                    let s = self.value_at_f64(&x);
                    for c in 0..d {
                        v[c] += w * s[c];
                    }
                }
                if v.iter().all(|t| *t == 0.0) {
                    return None;
                }
                for t in v.iter_mut() {
                    *t = t.clamp(-m, m);
                }
                let lo = k.iter().map(|&a| step * Q::from_integer(a)).collect();
                let hi = k.iter().map(|&a| step * Q::from_integer(a + 1)).collect();
                Some((AxisBox { lo, hi }, v))
            })
            .collect();
        Ok(ContinuousField { d, cells: out, bound: m })
    }

    /// ∫ |σ - τ| (sum of componentwise absolute differences), by overlaying
    /// both meshes.
    pub fn l1_distance(&self, other: &ContinuousField<S>) -> f64 {
        let d = self.d;
        let mut cuts: Vec<Vec<Q>> = vec![Vec::new(); d];
        for (b, _) in self.cells.iter().chain(&other.cells) {
            for j in 0..d {
                cuts[j].push(b.lo[j]);
                cuts[j].push(b.hi[j]);
            }
        }
        for c in cuts.iter_mut() {
            c.sort();
            c.dedup();
        }
        if cuts.iter().any(|c| c.len() < 2) {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let mid: Vec<Q> = (0..d).map(|j| (cuts[j][idx[j]] + cuts[j][idx[j] + 1]) / Q::from_integer(2)).collect();
            let vol: f64 = (0..d).map(|j| q_to_f64(&(cuts[j][idx[j] + 1] - cuts[j][idx[j]]))).product();
            let a = self.value_at(&mid).unwrap_or_default();
            let b = other.value_at(&mid).unwrap_or_default();
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs()).sum();
            acc += diff * vol;
            let mut j = d;
            let mut done = true;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] + 1 < cuts[j].len() {
                    done = false;
                    break;
                }
                idx[j] = 0;
            }
            if done {
                break;
            }
        }
        acc
    }
}

#[derive(Serialize, Deserialize)]
struct CellJson {
    lo: Vec<String>,
    hi: Vec<String>,
    value: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FieldJson {
    d: usize,
    bound: String,
    cells: Vec<CellJson>,
}

impl<S: Scalar> ContinuousField<S> {
    pub fn to_json(&self) -> String {
        let f = FieldJson {
            d: self.d,
            bound: self.bound.to_exact_string(),
            cells: self
                .cells
                .iter()
                .map(|(b, v)| CellJson {
                    lo: b.lo.iter().map(|q| q.to_string()).collect(),
                    hi: b.hi.iter().map(|q| q.to_string()).collect(),
                    value: v.iter().map(|s| s.to_exact_string()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FieldJson = serde_json::from_str(text).map_err(|e| FppError::Parse(e.to_string()))?;
        let bound = S::parse_exact(&f.bound).ok_or_else(|| FppError::Parse("bad bound".into()))?;
        let mut cells = Vec::new();
        for c in f.cells {
            let pq = |v: &[String]| -> Result<Vec<Q>> {
                v.iter().map(|s| parse_q(s).ok_or_else(|| FppError::Parse(format!("bad coordinate {s}")))).collect()
            };
            let value = c
                .value
                .iter()
                .map(|s| S::parse_exact(s).ok_or_else(|| FppError::Parse(format!("bad value {s}"))))
                .collect::<Result<Vec<S>>>()?;
            cells.push((AxisBox::new(pq(&c.lo)?, pq(&c.hi)?)?, value));
        }
        Self::new(f.d, cells, bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::qi;

    fn unit(d: usize) -> AxisBox {
        AxisBox::new(vec![qi(0); d], vec![qi(1); d]).unwrap()
    }

    fn face(d: usize, i: usize, at: i64) -> AxisBox {
        let mut b = unit(d);
        b.lo[i] = qi(at);
        b.hi[i] = qi(at);
        b
    }

    #[test]
    fn constant_flow_through_left_face() {
        let s = ContinuousField::constant_on(unit(2), vec![1.0, 0.0], 1.0).unwrap();
        assert_eq!(s.flow_cont(&[face(2, 0, 0)]).unwrap(), 1.0);
        let rep = s.check_divergence_free(&[unit(2)], &[face(2, 0, 0)], &[face(2, 0, 1)]);
        assert!(rep.divergence_free());
        let rep = s.check_divergence_free(&[unit(2)], &[face(2, 0, 0)], &[]);
        assert!(rep.interior_ok && !rep.boundary_ok);
    }

    #[test]
    fn interface_jump_detected() {
        let a = AxisBox::new(vec![qi(0), qi(0)], vec![Q::new(1, 2), qi(1)]).unwrap();
        let b = AxisBox::new(vec![Q::new(1, 2), qi(0)], vec![qi(1), qi(1)]).unwrap();
        let s = ContinuousField::new(2, vec![(a, vec![1.0, 0.0]), (b, vec![0.5, 0.0])], 1.0).unwrap();
        let rep = s.check_divergence_free(&[unit(2)], &[face(2, 0, 0)], &[face(2, 0, 1)]);
        assert!(!rep.interior_ok);
        assert!((rep.max_interior_jump - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mollify_rejects_zero() {
        let s = ContinuousField::constant_on(unit(2), vec![1.0, 0.0], 1.0).unwrap();
        assert!(s.mollify(0).is_err());
    }
}
