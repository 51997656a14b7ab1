//! I.i.d. edge capacities. Each value is a pure function of (seed, edge), so
//! sampling order and thread count never change the result.

use crate::error::{FppError, Result};
use crate::lattice::{EdgeId, LatticeDomain};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Bounded-support capacity law G.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CapacityDistribution {
    Constant { c: f64 },
    /// value b with probability p, a otherwise
    Bernoulli { a: f64, b: f64, p: f64 },
    Uniform { a: f64, b: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl CapacityDistribution {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            CapacityDistribution::Constant { c } => {
                if !finite_nonneg(*c) {
                    return Err(FppError::config("distribution.c", "must be finite and >= 0"));
                }
            }
            CapacityDistribution::Bernoulli { a, b, p } => {
                if !finite_nonneg(*a) || !finite_nonneg(*b) {
                    return Err(FppError::config("distribution.a/b", "must be finite and >= 0"));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(FppError::config("distribution.p", "must lie in [0,1]"));
                }
            }
            CapacityDistribution::Uniform { a, b } => {
                if !finite_nonneg(*a) || !finite_nonneg(*b) || a > b {
                    return Err(FppError::config("distribution.a/b", "need 0 <= a <= b < inf"));
                }
            }
            CapacityDistribution::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(FppError::config("distribution.values", "values and probs must match"));
                }
                if values.iter().any(|v| !finite_nonneg(*v)) {
                    return Err(FppError::config("distribution.values", "must be finite and >= 0"));
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(FppError::config("distribution.probs", "must lie in [0,1]"));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(FppError::config("distribution.probs", "must sum to 1"));
                }
            }
        }
        Ok(())
    }

    /// Essential supremum M of the law.
    pub fn support_max(&self) -> f64 {
        match self {
            CapacityDistribution::Constant { c } => *c,
            CapacityDistribution::Bernoulli { a, b, p } => {
                if *p == 0.0 {
                    *a
                } else if *p == 1.0 {
                    *b
                } else {
                    a.max(*b)
                }
            }
            CapacityDistribution::Uniform { b, .. } => *b,
            CapacityDistribution::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| *v)
                .fold(0.0, f64::max),
        }
    }

    /// G([lo, ∞)), the mass at or above `lo`.
    pub fn upper_tail(&self, lo: f64) -> f64 {
        match self {
            CapacityDistribution::Constant { c } => (*c >= lo) as u8 as f64,
            CapacityDistribution::Bernoulli { a, b, p } => {
                let mut m = 0.0;
                if *b >= lo {
                    m += p;
                }
                if *a >= lo {
                    m += 1.0 - p;
                }
                m
            }
            CapacityDistribution::Uniform { a, b } => {
                if lo <= *a {
                    1.0
                } else if lo > *b {
                    0.0
                } else if a == b {
                    1.0
                } else {
                    (b - lo) / (b - a)
                }
            }
            CapacityDistribution::Discrete { values, probs } => {
                values.iter().zip(probs).filter(|(v, _)| **v >= lo).map(|(_, p)| p).sum()
            }
        }
    }

    /// Maps a uniform u ∈ [0,1) to a sample.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            CapacityDistribution::Constant { c } => *c,
            CapacityDistribution::Bernoulli { a, b, p } => {
                if u < *p {
                    *b
                } else {
                    *a
                }
            }
            CapacityDistribution::Uniform { a, b } => a + (b - a) * u,
            CapacityDistribution::Discrete { values, probs } => {
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }
}

/// Uniform [0,1) variate keyed by (seed, edge).
pub fn edge_uniform(seed: u64, e: &EdgeId) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((e.axis as u64).to_le_bytes());
    for c in &e.x {
        h.update(c.to_le_bytes());
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Mixes a master seed with a counter (trial index, stream id).
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"trial");
    h.update(master.to_le_bytes());
    h.update(counter.to_le_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Capacities on a finite edge set. Edges absent from the map have t(e) = 0.
#[derive(Clone, Debug)]
pub struct Capacities<S: Scalar> {
    pub values: BTreeMap<EdgeId, S>,
    pub seed: u64,
    pub dist: Option<CapacityDistribution>,
}

impl<S: Scalar> Capacities<S> {
    pub fn get(&self, e: &EdgeId) -> S {
        self.values.get(e).cloned().unwrap_or_else(S::zero)
    }

    pub fn uniform(edges: &[EdgeId], c: S) -> Self {
        Capacities { values: edges.iter().map(|e| (e.clone(), c.clone())).collect(), seed: 0, dist: None }
    }

    pub fn max_value(&self) -> S {
        self.values.values().fold(S::zero(), |m, v| S::max_s(&m, v))
    }

    /// Lines "x_1 .. x_d axis value" with a 1-based axis.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
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
        let mut values = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (e, v) = parse_edge_value::<S>(line).map_err(|m| FppError::Parse(format!("line {}: {m}", ln + 1)))?;
            if v < S::zero() {
                return Err(FppError::Parse(format!("line {}: negative capacity", ln + 1)));
            }
            values.insert(e, v);
        }
        Ok(Capacities { values, seed: 0, dist: None })
    }
}

/// Parses "x_1 .. x_d axis value" (axis 1-based).
pub fn parse_edge_value<S: Scalar>(line: &str) -> std::result::Result<(EdgeId, S), String> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() < 3 {
        return Err("expected coordinates, axis and value".into());
    }
    let d = toks.len() - 2;
    let x: Vec<i64> = toks[..d].iter().map(|t| t.parse::<i64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    let axis: usize = toks[d].parse().map_err(|_| "bad axis".to_string())?;
    if axis < 1 || axis > d {
        return Err(format!("axis {axis} out of range 1..={d}"));
    }
    let v = S::parse_exact(toks[d + 1]).ok_or_else(|| format!("bad value {}", toks[d + 1]))?;
    Ok((EdgeId::new(x, axis - 1), v))
}

/// Samples t(e) for every edge in `edges`.
pub fn sample_edges<S: Scalar>(edges: &[EdgeId], dist: &CapacityDistribution, seed: u64) -> Capacities<S> {
    let vals: Vec<(EdgeId, S)> = edges
        .par_iter()
        .map(|e| (e.clone(), S::from_f64_exact(dist.quantile(edge_uniform(seed, e)))))
        .collect();
    Capacities { values: vals.into_iter().collect(), seed, dist: Some(dist.clone()) }
}

/// Samples capacities on the allowed edges of a lattice domain.
pub fn sample_capacities<S: Scalar>(lat: &LatticeDomain, dist: &CapacityDistribution, seed: u64) -> Capacities<S> {
    sample_edges(&lat.edges(), dist, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_bernoulli() {
        let g = CapacityDistribution::Bernoulli { a: 0.0, b: 1.0, p: 0.25 };
        assert_eq!(g.quantile(0.1), 1.0);
        assert_eq!(g.quantile(0.3), 0.0);
        assert_eq!(g.upper_tail(0.5), 0.25);
        assert_eq!(g.support_max(), 1.0);
    }

    #[test]
    fn discrete_validation() {
        let bad = CapacityDistribution::Discrete { values: vec![1.0, 2.0], probs: vec![0.5, 0.6] };
        assert!(bad.validate().is_err());
        let ok = CapacityDistribution::Discrete { values: vec![1.0, 2.0], probs: vec![0.5, 0.5] };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.quantile(0.7), 2.0);
    }

    #[test]
    fn uniform_in_unit_interval() {
        for k in 0..1000 {
            let u = edge_uniform(7, &EdgeId::new(vec![k, -k], 1));
            assert!((0.0..1.0).contains(&u));
        }
    }
}
