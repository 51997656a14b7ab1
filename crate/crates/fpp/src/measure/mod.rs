//! Finite R^d-valued measures: atoms plus piecewise-constant densities on
//! rational boxes.

mod distance;

pub use distance::{distance, distance_prepared, Cell, DistanceBracket, DistanceOptions, PreparedDiff, SearchStats};

use crate::error::{FppError, Result};
use crate::lattice::AxisBox;
use crate::scalar::{parse_q, q_to_f64, Q};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub point: Vec<Q>,
    pub weight: Vec<f64>,
}

/// Constant vector density on a half-open box Π[lo, hi).
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub bx: AxisBox,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorMeasure {
    pub d: usize,
    pub atoms: Vec<Atom>,
    pub densities: Vec<Density>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn overlap(a: &AxisBox, b: &AxisBox) -> Q {
    let mut v = Q::from_integer(1);
    for j in 0..a.dim() {
        let lo = if a.lo[j] > b.lo[j] { a.lo[j] } else { b.lo[j] };
        let hi = if a.hi[j] < b.hi[j] { a.hi[j] } else { b.hi[j] };
        if hi <= lo {
            return Q::from_integer(0);
        }
        v *= hi - lo;
    }
    v
}

fn in_half_open(p: &[Q], b: &AxisBox) -> bool {
    (0..p.len()).all(|j| b.lo[j] <= p[j] && p[j] < b.hi[j])
}

impl VectorMeasure {
    pub fn zero(d: usize) -> Self {
        VectorMeasure { d, atoms: Vec::new(), densities: Vec::new() }
    }

    /// v·1_B·L^d.
    pub fn constant_on(bx: AxisBox, value: Vec<f64>) -> Self {
        let d = bx.dim();
        VectorMeasure { d, atoms: vec![], densities: vec![Density { bx, value }] }
    }

    pub fn push_atom(&mut self, point: Vec<Q>, weight: Vec<f64>) {
        self.atoms.push(Atom { point, weight });
    }

    pub fn push_density(&mut self, bx: AxisBox, value: Vec<f64>) {
        self.densities.push(Density { bx, value });
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.weight.iter().all(|w| *w == 0.0))
            && self.densities.iter().all(|d| d.value.iter().all(|w| *w == 0.0))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        for a in &mut m.atoms {
            a.weight.iter_mut().for_each(|w| *w *= c);
        }
        for d in &mut m.densities {
            d.value.iter_mut().for_each(|w| *w *= c);
        }
        m
    }

    /// Sum of two measures; atoms at equal points are merged.
    pub fn plus(&self, other: &VectorMeasure) -> Self {
        let mut m = VectorMeasure::zero(self.d);
        m.atoms = self.atoms.iter().chain(&other.atoms).cloned().collect();
        m.densities = self.densities.iter().chain(&other.densities).cloned().collect();
        m.merge_atoms();
        m
    }

    pub fn minus(&self, other: &VectorMeasure) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    /// Merges atoms sharing a point, dropping zero results. Points sorted.
    pub fn merge_atoms(&mut self) {
        let mut acc: BTreeMap<Vec<Q>, Vec<f64>> = BTreeMap::new();
        for a in &self.atoms {
            let e = acc.entry(a.point.clone()).or_insert_with(|| vec![0.0; self.d]);
            for j in 0..self.d {
                e[j] += a.weight[j];
            }
        }
        self.atoms = acc
            .into_iter()
            .filter(|(_, w)| w.iter().any(|x| *x != 0.0))
            .map(|(point, weight)| Atom { point, weight })
            .collect();
    }

    /// Exact mass of a half-open box (up to float summation).
    pub fn box_mass(&self, b: &AxisBox) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for a in &self.atoms {
            if in_half_open(&a.point, b) {
                for j in 0..self.d {
                    m[j] += a.weight[j];
                }
            }
        }
        for den in &self.densities {
            let v = q_to_f64(&overlap(b, &den.bx));
            if v > 0.0 {
                for j in 0..self.d {
                    m[j] += den.value[j] * v;
                }
            }
        }
        m
    }

    /// The restriction μ·1_B to a half-open box.
    pub fn restrict(&self, b: &AxisBox) -> Self {
        let mut m = VectorMeasure::zero(self.d);
        m.atoms = self.atoms.iter().filter(|a| in_half_open(&a.point, b)).cloned().collect();
        for den in &self.densities {
            let mut bx = den.bx.clone();
            let mut empty = false;
            for j in 0..self.d {
                if b.lo[j] > bx.lo[j] {
                    bx.lo[j] = b.lo[j];
                }
                if b.hi[j] < bx.hi[j] {
                    bx.hi[j] = b.hi[j];
                }
                empty |= bx.hi[j] <= bx.lo[j];
            }
            if !empty {
                m.densities.push(Density { bx, value: den.value.clone() });
            }
        }
        m
    }

    /// Total variation |μ|(R^d), exact on the overlay of density boxes.
    pub fn total_variation(&self) -> f64 {
        let mut me = self.clone();
        me.merge_atoms();
        let atoms: f64 = me.atoms.iter().map(|a| norm(&a.weight)).sum();
        atoms + Overlay::build(self.d, &self.densities).total_variation()
    }

    /// Bounding box of the support as floats (None for the zero measure).
    pub fn support_hull(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut lo = vec![f64::INFINITY; self.d];
        let mut hi = vec![f64::NEG_INFINITY; self.d];
        let mut any = false;
        for a in &self.atoms {
            any = true;
            for j in 0..self.d {
                let p = q_to_f64(&a.point[j]);
                lo[j] = lo[j].min(p);
                hi[j] = hi[j].max(p);
            }
        }
        for den in &self.densities {
            if !den.bx.is_solid() {
                continue;
            }
            any = true;
            for j in 0..self.d {
                lo[j] = lo[j].min(q_to_f64(&den.bx.lo[j]));
                hi[j] = hi[j].max(q_to_f64(&den.bx.hi[j]));
            }
        }
        any.then_some((lo, hi))
    }

    pub fn to_json(&self) -> String {
        let j = MeasureJson {
            d: self.d,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson { point: a.point.iter().map(|q| q.to_string()).collect(), weight: a.weight.clone() })
                .collect(),
            densities: self
                .densities
                .iter()
                .map(|den| DensityJson {
                    lo: den.bx.lo.iter().map(|q| q.to_string()).collect(),
                    hi: den.bx.hi.iter().map(|q| q.to_string()).collect(),
                    value: den.value.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&j).expect("measure serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: MeasureJson = serde_json::from_str(text).map_err(|e| FppError::Parse(e.to_string()))?;
        let pq = |v: &[String], field: &str| -> Result<Vec<Q>> {
            v.iter()
                .map(|s| parse_q(s).ok_or_else(|| FppError::config(field, format!("bad rational {s:?}"))))
                .collect()
        };
        let mut m = VectorMeasure::zero(j.d);
        for (i, a) in j.atoms.iter().enumerate() {
            let field = format!("atoms[{i}]");
            let p = pq(&a.point, &field)?;
            if p.len() != j.d || a.weight.len() != j.d {
                return Err(FppError::config(field, "wrong dimension"));
            }
            m.push_atom(p, a.weight.clone());
        }
        for (i, den) in j.densities.iter().enumerate() {
            let field = format!("densities[{i}]");
            let lo = pq(&den.lo, &field)?;
            let hi = pq(&den.hi, &field)?;
            if lo.len() != j.d || hi.len() != j.d || den.value.len() != j.d {
                return Err(FppError::config(field, "wrong dimension"));
            }
            m.push_density(AxisBox::new(lo, hi)?, den.value.clone());
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    point: Vec<String>,
    weight: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityJson {
    lo: Vec<String>,
    hi: Vec<String>,
    value: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    d: usize,
    atoms: Vec<AtomJson>,
    densities: Vec<DensityJson>,
}

/// Tensor grid refining every density box; each cell carries the summed
/// density of the boxes covering it.
#[derive(Clone, Debug)]
pub struct Overlay {
    pub d: usize,
    /// sorted breakpoints per axis
    pub cuts: Vec<Vec<f64>>,
    /// flattened cell values, row-major over cells, d components each
    pub values: Vec<f64>,
}

impl Overlay {
    pub fn build(d: usize, densities: &[Density]) -> Self {
        let mut cutq: Vec<Vec<Q>> = vec![Vec::new(); d];
        for den in densities.iter().filter(|den| den.bx.is_solid()) {
            for j in 0..d {
                cutq[j].push(den.bx.lo[j]);
                cutq[j].push(den.bx.hi[j]);
            }
        }
        for c in &mut cutq {
            c.sort();
            c.dedup();
        }
        let shape: Vec<usize> = cutq.iter().map(|c| c.len().saturating_sub(1)).collect();
        let ncell: usize = shape.iter().product();
        let mut values = vec![0.0; ncell * d];
        if ncell > 0 {
            for den in densities.iter().filter(|den| den.bx.is_solid()) {
                let ranges: Vec<(usize, usize)> = (0..d)
                    .map(|j| {
                        let a = cutq[j].binary_search(&den.bx.lo[j]).unwrap();
                        let b = cutq[j].binary_search(&den.bx.hi[j]).unwrap();
                        (a, b)
                    })
                    .collect();
                let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                'cells: loop {
                    let flat = Self::flat(&shape, &idx);
                    for c in 0..d {
                        values[flat * d + c] += den.value[c];
                    }
                    let mut j = d;
                    loop {
                        if j == 0 {
                            break 'cells;
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] < ranges[j].1 {
                            break;
                        }
                        idx[j] = ranges[j].0;
                    }
                }
            }
        }
        Overlay { d, cuts: cutq.iter().map(|c| c.iter().map(q_to_f64).collect()).collect(), values }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.cuts.iter().map(|c| c.len().saturating_sub(1)).collect()
    }

    fn flat(shape: &[usize], idx: &[usize]) -> usize {
        let mut f = 0;
        for j in 0..shape.len() {
            f = f * shape[j] + idx[j];
        }
        f
    }

    pub fn cell_value(&self, idx: &[usize]) -> &[f64] {
        let f = Self::flat(&self.shape(), idx);
        &self.values[f * self.d..(f + 1) * self.d]
    }

    pub fn num_cells(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn total_variation(&self) -> f64 {
        let shape = self.shape();
        let n: usize = shape.iter().product();
        let mut tv = 0.0;
        for f in 0..n {
            let mut rem = f;
            let mut vol = 1.0;
            for j in (0..self.d).rev() {
                let i = rem % shape[j];
                rem /= shape[j];
                vol *= self.cuts[j][i + 1] - self.cuts[j][i];
            }
            tv += norm(&self.values[f * self.d..(f + 1) * self.d]) * vol;
        }
        tv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::q;

    #[test]
    fn half_open_atoms() {
        let mut m = VectorMeasure::zero(2);
        m.push_atom(vec![q(0, 1), q(1, 2)], vec![1.0, 0.0]);
        let lower = AxisBox::new(vec![q(0, 1), q(0, 1)], vec![q(1, 1), q(1, 1)]).unwrap();
        assert_eq!(m.box_mass(&lower), vec![1.0, 0.0]);
        let upper = AxisBox::new(vec![q(-1, 1), q(0, 1)], vec![q(0, 1), q(1, 1)]).unwrap();
        assert_eq!(m.box_mass(&upper), vec![0.0, 0.0]);
    }

    #[test]
    fn overlay_tv_of_overlapping_boxes() {
        let mut m = VectorMeasure::zero(2);
        m.push_density(AxisBox::from_ints(&[0, 0], &[2, 1]), vec![1.0, 0.0]);
        m.push_density(AxisBox::from_ints(&[1, 0], &[3, 1]), vec![-1.0, 0.0]);
        // overlap cancels on [1,2)x[0,1)
        assert!((m.total_variation() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let mut m = VectorMeasure::zero(2);
        m.push_atom(vec![q(1, 3), q(-1, 8)], vec![0.25, -0.5]);
        m.push_density(AxisBox::unit_cube(2), vec![1.0, 2.0]);
        let back = VectorMeasure::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }
}
