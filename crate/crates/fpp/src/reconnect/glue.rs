//! Reconnecting streams living in two cubes separated by a corridor.

use super::exceeds;
use super::mixing::{mix, Family};
use crate::error::{FppError, Result};
use crate::lattice::{int_box, EdgeId, Pt};
use crate::scalar::Scalar;
use crate::stream::Stream;

/// Lattice cube lo + [0, side]^d at the stream's scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeCube {
    pub lo: Pt,
    pub side: i64,
}

impl LatticeCube {
    pub fn new(lo: Pt, side: i64) -> Self {
        LatticeCube { lo, side }
    }

    /// Half-open membership lo ≤ x < lo + side.
    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.lo).all(|(&a, &l)| l <= a && a < l + self.side)
    }
}

/// The slab between the plus face of `a` and the minus face of `b` along `axis`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corridor {
    pub axis: usize,
    /// first corridor coordinate along `axis` (the plus face of a)
    pub start: i64,
    pub len: i64,
    pub lo: Pt,
    pub side: i64,
}

impl Corridor {
    /// Corridor between two equal cubes offset along a single axis, b after a.
    pub fn between(a: &LatticeCube, b: &LatticeCube) -> Result<Self> {
        if a.side != b.side || a.lo.len() != b.lo.len() {
            return Err(FppError::pre("cubes differ in size or dimension"));
        }
        let moved: Vec<usize> = (0..a.lo.len()).filter(|&i| a.lo[i] != b.lo[i]).collect();
        let [axis] = moved[..] else {
            return Err(FppError::pre("cubes must be offset along exactly one axis"));
        };
        let start = a.lo[axis] + a.side;
        let len = b.lo[axis] - start;
        if len < 1 {
            return Err(FppError::pre("second cube must lie strictly beyond the first"));
        }
        Ok(Corridor { axis, start, len, lo: a.lo.clone(), side: a.side })
    }

    /// Half-open membership, plus face of a included, minus face of b excluded.
    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().enumerate().all(|(i, &c)| {
            if i == self.axis {
                self.start <= c && c < self.start + self.len
            } else {
                self.lo[i] <= c && c < self.lo[i] + self.side
            }
        })
    }
}

/// Joins `fa` on cube `a` to `fb` on cube `b`: the flow `fa` pushes through
/// each edge of a's plus face is carried across the corridor and handed to
/// the matching edges of b's minus face, one mix per cell of the
/// m-partition of the face. Each cell must balance and stay within `bound`.
pub fn glue_adjacent<S: Scalar>(
    fa: &Stream<S>,
    a: &LatticeCube,
    fb: &Stream<S>,
    b: &LatticeCube,
    m: i64,
    bound: &S,
) -> Result<Stream<S>> {
    let d = fa.d;
    if fb.d != d || fb.n != fa.n || a.lo.len() != d {
        return Err(FppError::pre("streams and cubes must share dimension and scale"));
    }
    let cor = Corridor::between(a, b)?;
    if m < 1 || a.side % m != 0 {
        return Err(FppError::pre(format!("m = {m} must divide the cube side {}", a.side)));
    }
    let w = a.side / m;
    let need = 2 * (d as i64 - 1) * w;
    if cor.len < need {
        return Err(FppError::pre(format!("corridor length {} is below 2(d-1)·side/m = {need}", cor.len)));
    }
    let l = cor.axis;
    let axes: Vec<usize> = (0..d).filter(|&i| i != l).collect();
    let scale = S::max_s(&fa.max_abs(), &fb.max_abs());
    let mut out = fa.clone();
    out.add_scaled(fb, &S::one());
    for cell in int_box(&vec![0; d - 1], &vec![m - 1; d - 1]) {
        let base: Vec<i64> = axes.iter().zip(&cell).map(|(&ax, &c)| a.lo[ax] + c * w).collect();
        let mut f_in = Family::new();
        let mut f_out = Family::new();
        let (mut sin, mut sout) = (S::zero(), S::zero());
        for y in int_box(&vec![1; d - 1], &vec![w; d - 1]) {
            let mut x = vec![0; d];
            for (r, &ax) in axes.iter().enumerate() {
                x[ax] = base[r] + y[r] - 1;
            }
            x[l] = cor.start - 1;
            let vin = fa.get(&EdgeId::new(x.clone(), l));
            x[l] = cor.start + cor.len;
            let vout = fb.get(&EdgeId::new(x, l));
            for v in [&vin, &vout] {
                if exceeds(v, bound) {
                    return Err(FppError::pre(format!("face value {v} exceeds the bound {bound} in cell {cell:?}")));
                }
            }
            sin += vin.clone();
            sout += vout.clone();
            f_in.insert(y.clone(), vin);
            f_out.insert(y, vout);
        }
        if !(sin.clone() - sout.clone()).near_zero(&scale) {
            return Err(FppError::pre(format!("cell {cell:?} sends {sin} but receives {sout}")));
        }
        if f_in.values().chain(f_out.values()).all(|v| v.is_zero()) {
            continue;
        }
        let g = mix(d, w, &f_in, &f_out, cor.len, bound)?;
        for (e, v) in g.iter() {
            let mut p = vec![0; d];
            p[l] = cor.start + e.x[0];
            for (r, &ax) in axes.iter().enumerate() {
                p[ax] = base[r] + e.x[r + 1] - 1;
            }
            let axis = if e.axis == 0 { l } else { axes[e.axis - 1] };
            out.add(&EdgeId::new(p, axis), v);
        }
    }
    if !S::EXACT {
        out.prune();
    }
    Ok(out)
}
